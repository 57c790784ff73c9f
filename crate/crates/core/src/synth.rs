//! Synthetic grasp generator: samples objects across the modulus range,
//! simulates squeeze trajectories with a Hertzian contact law and renders
//! imprint frames, so the full pipeline can be exercised end to end with
//! known ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_dataset, AnalyticalEstimate, Catalog, GraspRecord, Material, ObjectMeta, Shape,
    TactileFrame,
};
use crate::physics::{elastic_fit, hertz_fit, ContactParams, ModulusBounds};
use crate::seed;
use crate::{CoreError, Result};

/// Irregular outlines carry three harmonics of up to this relative
/// amplitude, so a blob never reaches past 1.3 times its base radius.
const WOBBLE_AMP: f64 = 0.1;
const WOBBLE_REACH: f64 = 1.0 + 3.0 * WOBBLE_AMP;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub objects: usize,
    pub grasps_per_object: usize,
    /// Square frame edge in pixels.
    pub frame_size: usize,
    /// Samples per squeeze trajectory.
    pub trajectory_len: usize,
    pub log10_modulus_range: (f64, f64),
    /// Object radius draw per grasp, metres.
    pub radius_range_m: (f64, f64),
    pub contact: ContactParams,
    pub initial_width_m: f64,
    /// Indentation cap; also the depth that saturates the rendered
    /// imprint.
    pub max_indentation_m: f64,
    /// Metres spanned by the frame edge.
    pub fov_m: f64,
    pub pixel_noise: f64,
    pub force_noise_rel: f64,
    pub width_noise_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            objects: 24,
            grasps_per_object: 5,
            frame_size: 64,
            trajectory_len: 16,
            log10_modulus_range: (4.0, 9.0),
            radius_range_m: (0.006, 0.0115),
            // A deliberately stiff pad: with a soft gel every object
            // beyond a few MPa indents it identically, which would make
            // the stiff half of the range unlearnable by construction.
            contact: ContactParams {
                sensor_modulus_pa: 4.0e8,
                ..ContactParams::default()
            },
            initial_width_m: 0.05,
            max_indentation_m: 0.004,
            fov_m: 0.03,
            pixel_noise: 0.02,
            force_noise_rel: 0.01,
            width_noise_m: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CoreError::Config(msg));
        if self.objects == 0 || self.grasps_per_object == 0 {
            return err("objects and grasps_per_object must be positive".into());
        }
        if self.frame_size < 8 {
            return err(format!("frame_size {} too small to render", self.frame_size));
        }
        if self.trajectory_len < 2 {
            return err(format!("trajectory_len {} must be at least 2", self.trajectory_len));
        }
        let (lo, hi) = self.log10_modulus_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return err(format!("log10_modulus_range ({lo}, {hi}) is not an increasing pair"));
        }
        let (rlo, rhi) = self.radius_range_m;
        if !(rlo.is_finite() && rhi.is_finite() && 0.0 < rlo && rlo <= rhi) {
            return err(format!("radius_range_m ({rlo}, {rhi}) is not a positive increasing pair"));
        }
        self.contact.validate()?;
        if !(self.initial_width_m.is_finite() && self.initial_width_m > 0.0) {
            return err(format!("initial_width_m {} must be positive", self.initial_width_m));
        }
        if !(self.max_indentation_m > 0.0
            && self.max_indentation_m * 2.0 < self.initial_width_m)
        {
            return err(format!(
                "max_indentation_m {} must be positive and small against initial_width_m {}",
                self.max_indentation_m, self.initial_width_m
            ));
        }
        if !(self.fov_m.is_finite() && self.fov_m > 0.0) {
            return err(format!("fov_m {} must be positive", self.fov_m));
        }
        // the widest possible imprint must fit inside the frame
        if WOBBLE_REACH * rhi > self.fov_m / 2.0 {
            return Err(CoreError::DegenerateGeometry {
                radius_m: rhi,
                fov_m: self.fov_m,
            });
        }
        for (name, v) in [
            ("pixel_noise", self.pixel_noise),
            ("force_noise_rel", self.force_noise_rel),
            ("width_noise_m", self.width_noise_m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} {v} must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Material label consistent with where the modulus falls; purely
/// cosmetic but keeps per-material breakdowns meaningful.
pub fn material_for_modulus(young_pa: f64) -> Material {
    let lg = young_pa.log10();
    if lg < 4.5 {
        Material::Foam
    } else if lg < 5.5 {
        Material::Rubber
    } else if lg < 6.5 {
        Material::Food
    } else if lg < 7.5 {
        Material::Plastic
    } else if lg < 9.0 {
        Material::Wood
    } else if lg < 10.0 {
        Material::Glass
    } else if lg < 11.0 {
        Material::Ceramic
    } else {
        Material::Metal
    }
}

struct GraspGeometry {
    radius_m: f64,
    orientation: f64,
    wobble: [(f64, f64); 3],
}

impl GraspGeometry {
    fn sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let (rlo, rhi) = cfg.radius_range_m;
        let radius_m = if rlo == rhi { rlo } else { rng.gen_range(rlo..rhi) };
        let orientation = rng.gen_range(0.0..std::f64::consts::PI);
        let mut wobble = [(0.0, 0.0); 3];
        for slot in wobble.iter_mut() {
            *slot = (
                rng.gen_range(-WOBBLE_AMP..WOBBLE_AMP),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
        }
        GraspGeometry {
            radius_m,
            orientation,
            wobble,
        }
    }
}

/// Indentation depth at a point of the pad, in metres, for a centred
/// press of depth `d_c`. Coordinates are metres from the frame centre.
fn depth_at(shape: Shape, geom: &GraspGeometry, d_c: f64, x: f64, y: f64) -> f64 {
    if d_c <= 0.0 {
        return 0.0;
    }
    let r = geom.radius_m;
    let (sin, cos) = geom.orientation.sin_cos();
    let xr = x * cos + y * sin;
    let yr = -x * sin + y * cos;
    // plateau shapes fall off quadratically past their footprint edge
    let edge_scale = r / 4.0;
    let falloff = |e: f64| (d_c - e * e / (2.0 * edge_scale)).max(0.0);
    match shape {
        Shape::Sphere => {
            let rr = x * x + y * y;
            (d_c - rr / (2.0 * r)).max(0.0)
        }
        Shape::Cylinder => (d_c - yr * yr / (2.0 * r)).max(0.0),
        Shape::Rectangular => {
            let (a, b) = (r, 0.6 * r);
            let ex = (xr.abs() - a).max(0.0);
            let ey = (yr.abs() - b).max(0.0);
            falloff(ex.hypot(ey))
        }
        Shape::Hex => {
            let inradius = r * 3f64.sqrt() / 2.0;
            let mut m = 0f64;
            for k in 0..3 {
                let a = geom.orientation + k as f64 * std::f64::consts::FRAC_PI_3;
                m = m.max((x * a.cos() + y * a.sin()).abs());
            }
            falloff((m - inradius).max(0.0))
        }
        Shape::Irregular => {
            let rho = x.hypot(y);
            let phi = y.atan2(x);
            let mut boundary = 1.0;
            for (k, &(amp, phase)) in geom.wobble.iter().enumerate() {
                boundary += amp * ((k as f64 + 2.0) * phi + phase).cos();
            }
            let rb = (boundary * r).max(0.3 * r);
            falloff((rho - rb).max(0.0))
        }
    }
}

/// Renders one frame: depth normalized by the indentation cap, mapped
/// through a fixed colour ramp, plus per-pixel Gaussian noise.
fn render_frame(
    cfg: &SynthConfig,
    shape: Shape,
    geom: &GraspGeometry,
    d_c: f64,
    timestamp_index: usize,
    rng: &mut ChaCha8Rng,
) -> TactileFrame {
    let s = cfg.frame_size;
    let mut pixels = ndarray::Array3::<f32>::zeros((s, s, 3));
    let noise = Normal::new(0.0, cfg.pixel_noise).expect("validated sigma");
    for i in 0..s {
        let y = ((i as f64 + 0.5) / s as f64 - 0.5) * cfg.fov_m;
        for j in 0..s {
            let x = ((j as f64 + 0.5) / s as f64 - 0.5) * cfg.fov_m;
            let zn = (depth_at(shape, geom, d_c, x, y) / cfg.max_indentation_m).clamp(0.0, 1.0);
            let base = [0.2 + 0.8 * zn, 0.3 + 0.5 * zn, 0.6 - 0.4 * zn];
            for (c, &v) in base.iter().enumerate() {
                let noisy = if cfg.pixel_noise > 0.0 {
                    v + noise.sample(rng)
                } else {
                    v
                };
                pixels[(i, j, c)] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    TactileFrame {
        pixels,
        timestamp_index,
    }
}

/// One simulated squeeze of `meta`'s object. Deterministic in
/// `(seed, object_id, grasp_index)`.
pub fn synth_grasp(
    cfg: &SynthConfig,
    meta: &ObjectMeta,
    grasp_index: usize,
    seed_base: u64,
) -> Result<GraspRecord> {
    let grasp_id = format!("{}__g{:02}", meta.object_id, grasp_index);
    let mut rng = seed::stream(seed_base, &["synth-grasp", &grasp_id]);
    let geom = GraspGeometry::sample(cfg, &mut rng);

    let contact = ContactParams {
        effective_radius_m: geom.radius_m,
        ..cfg.contact
    };
    let modulus = meta.young_modulus_pa;
    let d_target = cfg
        .max_indentation_m
        .min(contact.indentation_at_force(modulus, crate::dataset::FORCE_STOP_N));
    let t = cfg.trajectory_len;
    let depths: Vec<f64> = (0..t)
        .map(|i| d_target * i as f64 / (t - 1) as f64)
        .collect();

    let force_noise = Normal::new(0.0, cfg.force_noise_rel).expect("validated sigma");
    let width_noise = Normal::new(0.0, cfg.width_noise_m.max(f64::MIN_POSITIVE)).expect("sigma");
    let mut force_n = Vec::with_capacity(t);
    let mut width_m = Vec::with_capacity(t);
    for &d in &depths {
        let mut f = contact.hertz_force(modulus, d);
        if cfg.force_noise_rel > 0.0 {
            f *= 1.0 + force_noise.sample(&mut rng);
        }
        force_n.push(f.clamp(0.0, crate::dataset::MAX_FORCE_N));
        let mut w = cfg.initial_width_m - 2.0 * d;
        if cfg.width_noise_m > 0.0 {
            w += width_noise.sample(&mut rng);
        }
        // keep the squeeze physically monotone whatever the noise did
        if let Some(&prev) = width_m.last() {
            w = w.min(prev);
        }
        width_m.push(w.max(cfg.initial_width_m * 0.1));
    }

    let frame_samples = [0, t / 2, t - 1];
    let frames: Vec<TactileFrame> = frame_samples
        .iter()
        .enumerate()
        .map(|(idx, &s)| {
            let mut frame_rng =
                seed::stream(seed_base, &["synth-pixels", &grasp_id, &idx.to_string()]);
            render_frame(cfg, meta.shape, &geom, depths[s], idx, &mut frame_rng)
        })
        .collect();

    let mut grasp = GraspRecord {
        grasp_id,
        object_id: meta.object_id.clone(),
        frames,
        force_n,
        width_m,
        estimates: None,
    };
    grasp.validate().map_err(|e| CoreError::InvalidGrasp {
        grasp_id: grasp.grasp_id.clone(),
        reason: e.to_string(),
    })?;

    // closing the loop: the stored estimates are refit from the stored
    // trajectory with the same contact parameters that produced it
    let bounds = ModulusBounds::default();
    let hertz = hertz_fit(&grasp, &contact, &bounds)?;
    let elastic = elastic_fit(&grasp, &contact, &bounds)?;
    grasp.estimates = Some(AnalyticalEstimate {
        e_elastic_pa: elastic,
        e_hertz_pa: hertz.pascals,
    });
    Ok(grasp)
}

pub fn generate_catalog(cfg: &SynthConfig, seed_base: u64) -> Result<Catalog> {
    cfg.validate()?;
    let digits = (cfg.objects.max(2) - 1).to_string().len();
    let mut objects = Vec::with_capacity(cfg.objects);
    let mut grasps = Vec::new();
    for i in 0..cfg.objects {
        let object_id = format!("obj{i:0digits$}");
        let mut rng = seed::stream(seed_base, &["synth-object", &object_id]);
        let (lo, hi) = cfg.log10_modulus_range;
        let modulus = 10f64.powf(rng.gen_range(lo..hi));
        let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
        let material = material_for_modulus(modulus);
        let meta = ObjectMeta {
            object_id,
            name: format!("synthetic {} {}", material.as_str(), shape.as_str()),
            shape,
            material,
            young_modulus_pa: modulus,
        };
        for g in 0..cfg.grasps_per_object {
            grasps.push(synth_grasp(cfg, &meta, g, seed_base)?);
        }
        objects.push(meta);
    }
    Catalog::new(objects, grasps)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub objects: usize,
    pub grasps: usize,
    pub config: SynthConfig,
}

/// Generates a catalog and writes it in the canonical dataset layout,
/// alongside a manifest recording how it was produced.
pub fn write_generated(cfg: &SynthConfig, seed_base: u64, out: &Path) -> Result<Catalog> {
    let catalog = generate_catalog(cfg, seed_base)?;
    write_dataset(out, &catalog)?;
    let manifest = SynthManifest {
        seed: seed_base,
        objects: catalog.objects.len(),
        grasps: catalog.grasps.len(),
        config: cfg.clone(),
    };
    let file = std::fs::File::create(out.join("synth-manifest.json"))?;
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(catalog)
}

/// Grasp counts per modulus decade, keyed by the decade floor exponent.
pub fn decade_histogram(catalog: &Catalog) -> BTreeMap<i32, usize> {
    let mut hist = BTreeMap::new();
    for grasp in &catalog.grasps {
        let lg = catalog.object_of(grasp).young_modulus_pa.log10().floor() as i32;
        *hist.entry(lg).or_insert(0) += 1;
    }
    hist
}
