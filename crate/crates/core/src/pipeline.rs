//! Train/validation/test splitting, bucketed oversampling, and image
//! augmentation. Everything here is a pure function of its seed.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Catalog, TactileFrame};
use crate::seed;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    SeenObject,
    UnseenObject,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::SeenObject => "seen-object",
            SplitMode::UnseenObject => "unseen-object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub mode: SplitMode,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSet {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<SplitSet> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| CoreError::MissingFile(path.display().to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// 20% test, 20% of the remainder validation (16% overall), rest train.
/// Sizes floor; leftovers go to train. In unseen-object mode the same
/// fractions apply to objects and every grasp follows its object.
pub fn split(catalog: &Catalog, mode: SplitMode, rng_seed: u64) -> Result<SplitSet> {
    let mut rng = seed::stream(rng_seed, &["split", mode.as_str()]);
    match mode {
        SplitMode::SeenObject => {
            let mut ids: Vec<String> = catalog.grasps.iter().map(|g| g.grasp_id.clone()).collect();
            ids.sort();
            ids.shuffle(&mut rng);
            let n = ids.len();
            let n_test = n / 5;
            let n_val = (n - n_test) / 5;
            let test = ids[..n_test].to_vec();
            let validation = ids[n_test..n_test + n_val].to_vec();
            let train = ids[n_test + n_val..].to_vec();
            Ok(SplitSet {
                mode,
                train,
                validation,
                test,
            })
        }
        SplitMode::UnseenObject => {
            let mut object_ids: Vec<String> =
                catalog.grasp_counts().keys().map(|s| s.to_string()).collect();
            if object_ids.len() < 5 {
                return Err(CoreError::TooFewObjects(object_ids.len()));
            }
            object_ids.sort();
            object_ids.shuffle(&mut rng);
            let n = object_ids.len();
            let n_test = n / 5;
            let n_val = (n - n_test) / 5;
            let bucket_of = |object_id: &str| -> usize {
                let pos = object_ids.iter().position(|o| o == object_id).unwrap();
                if pos < n_test {
                    2
                } else if pos < n_test + n_val {
                    1
                } else {
                    0
                }
            };
            let mut lists: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for grasp in &catalog.grasps {
                lists[bucket_of(&grasp.object_id)].push(grasp.grasp_id.clone());
            }
            let [train, validation, test] = lists;
            Ok(SplitSet {
                mode,
                train,
                validation,
                test,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub t_balance: usize,
    /// Decade-aligned log10 bucket edges; ten edges, nine buckets.
    pub bucket_edges: Vec<f64>,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            t_balance: 500,
            bucket_edges: (3..=12).map(|e| e as f64).collect(),
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_balance < 1 {
            return Err(CoreError::Config("t_balance must be >= 1".into()));
        }
        if self.bucket_edges.len() != 10 || self.bucket_edges.windows(2).any(|p| p[1] <= p[0]) {
            return Err(CoreError::Config(
                "bucket_edges must be 10 strictly increasing values".into(),
            ));
        }
        Ok(())
    }

    /// Bucket index for a modulus; out-of-range values clamp to the
    /// nearest bucket.
    pub fn bucket_of(&self, young_modulus_pa: f64) -> usize {
        let lg = young_modulus_pa.log10();
        let last = self.bucket_edges.len() - 2;
        for k in 0..=last {
            if lg < self.bucket_edges[k + 1] {
                return k;
            }
        }
        last
    }
}

/// Oversamples each nonempty modulus bucket with replacement until it
/// holds at least `t_balance` members. Originals are all retained, only
/// duplicates are added, and the result is shuffled deterministically.
/// Must never be applied to a test list.
pub fn balance(
    grasp_ids: &[String],
    catalog: &Catalog,
    cfg: &BalanceConfig,
    rng_seed: u64,
) -> Vec<String> {
    let n_buckets = cfg.bucket_edges.len() - 1;
    let mut buckets: Vec<Vec<&String>> = vec![Vec::new(); n_buckets];
    for id in grasp_ids {
        let grasp = catalog.grasp(id).expect("grasp id resolves in catalog");
        let y = catalog.object_of(grasp).young_modulus_pa;
        buckets[cfg.bucket_of(y)].push(id);
    }

    let mut rng = seed::stream(rng_seed, &["balance"]);
    let mut out: Vec<String> = Vec::new();
    for bucket in &buckets {
        if bucket.is_empty() {
            continue;
        }
        for id in bucket {
            out.push((*id).clone());
        }
        let mut count = bucket.len();
        while count < cfg.t_balance {
            let pick = bucket[rng.gen_range(0..bucket.len())];
            out.push(pick.clone());
            count += 1;
        }
    }
    out.shuffle(&mut rng);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub gaussian_sigma: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            gaussian_sigma: 0.02,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && self.gaussian_sigma >= 0.0
            && self.brightness >= 0.0
            && self.contrast >= 0.0
            && self.saturation >= 0.0
            && (0.0..=0.5).contains(&self.hue);
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid augmentation config: {self:?}")))
        }
    }
}

/// Per-grasp augmentation decisions, shared by all three frames so the
/// sequence stays temporally coherent.
#[derive(Debug, Clone, Copy)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip_h: false,
        flip_v: false,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
    };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> AugmentDraw {
        let factor = |rng: &mut dyn rand::RngCore, range: f64| -> f64 {
            if range == 0.0 {
                1.0
            } else {
                rng.gen_range((1.0 - range).max(0.0)..=1.0 + range)
            }
        };
        AugmentDraw {
            flip_h: rng.gen_bool(cfg.flip_prob),
            flip_v: rng.gen_bool(cfg.flip_prob),
            brightness: factor(rng, cfg.brightness),
            contrast: factor(rng, cfg.contrast),
            saturation: factor(rng, cfg.saturation),
            hue_shift: if cfg.hue == 0.0 {
                0.0
            } else {
                rng.gen_range(-cfg.hue..=cfg.hue)
            },
        }
    }
}

/// Applies flips, Gaussian pixel noise, then color jitter; output
/// clamped to [0,1]. `noise_rng` is the per-frame stream.
pub fn augment_pixels(
    pixels: &Array3<f32>,
    cfg: &AugmentConfig,
    draw: &AugmentDraw,
    noise_rng: &mut impl Rng,
) -> Array3<f32> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut out = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let sy = if draw.flip_v { h - 1 - y } else { y };
            let sx = if draw.flip_h { w - 1 - x } else { x };
            for c in 0..3 {
                out[[y, x, c]] = pixels[[sy, sx, c]];
            }
        }
    }
    if cfg.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0f64, cfg.gaussian_sigma).expect("sigma validated nonnegative");
        for v in out.iter_mut() {
            *v += normal.sample(noise_rng) as f32;
        }
    }
    apply_jitter(&mut out, draw);
    for v in out.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Single-frame augmentation with its own decision stream.
pub fn augment(frame: &TactileFrame, cfg: &AugmentConfig, rng_seed: u64) -> TactileFrame {
    let mut rng = seed::stream(rng_seed, &["augment"]);
    let draw = AugmentDraw::sample(cfg, &mut rng);
    TactileFrame {
        pixels: augment_pixels(&frame.pixels, cfg, &draw, &mut rng),
        timestamp_index: frame.timestamp_index,
    }
}

/// Augments the three frames of one grasp: flip and jitter decisions
/// come from a grasp-level stream keyed by (seed, epoch, grasp), noise
/// from per-frame streams, so results are independent of batch layout.
pub fn augment_grasp_frames(
    frames: &[Array3<f32>],
    cfg: &AugmentConfig,
    base_seed: u64,
    epoch: usize,
    grasp_id: &str,
) -> Vec<Array3<f32>> {
    let epoch_tag = epoch.to_string();
    let mut grasp_rng = seed::stream(base_seed, &["augment", &epoch_tag, grasp_id]);
    let draw = AugmentDraw::sample(cfg, &mut grasp_rng);
    frames
        .iter()
        .enumerate()
        .map(|(t, pixels)| {
            let frame_tag = t.to_string();
            let mut noise_rng =
                seed::stream(base_seed, &["augment", &epoch_tag, grasp_id, &frame_tag]);
            augment_pixels(pixels, cfg, &draw, &mut noise_rng)
        })
        .collect()
}

fn apply_jitter(pixels: &mut Array3<f32>, draw: &AugmentDraw) {
    let identity = draw.brightness == 1.0
        && draw.contrast == 1.0
        && draw.saturation == 1.0
        && draw.hue_shift == 0.0;
    if identity {
        return;
    }
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);

    // contrast blends toward the mean luma of the whole image
    let mut mean_luma = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            mean_luma += luma(pixels[[y, x, 0]], pixels[[y, x, 1]], pixels[[y, x, 2]]) as f64;
        }
    }
    mean_luma /= (h * w) as f64;

    let (b, c, s) = (draw.brightness as f32, draw.contrast as f32, draw.saturation as f32);
    let ml = mean_luma as f32;
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [pixels[[y, x, 0]], pixels[[y, x, 1]], pixels[[y, x, 2]]];
            for v in rgb.iter_mut() {
                *v *= b;
            }
            for v in rgb.iter_mut() {
                *v = ml * b + (*v - ml * b) * c;
            }
            let gray = luma(rgb[0], rgb[1], rgb[2]);
            for v in rgb.iter_mut() {
                *v = gray + (*v - gray) * s;
            }
            if draw.hue_shift != 0.0 {
                rgb = shift_hue(rgb, draw.hue_shift as f32);
            }
            for ch in 0..3 {
                pixels[[y, x, ch]] = rgb[ch];
            }
        }
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Rotates hue by `shift` full turns through HSV space.
fn shift_hue(rgb: [f32; 3], shift: f32) -> [f32; 3] {
    let [r, g, b] = [rgb[0].clamp(0.0, 1.0), rgb[1].clamp(0.0, 1.0), rgb[2].clamp(0.0, 1.0)];
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return [r, g, b];
    }
    let mut hue = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    hue = (hue + shift).rem_euclid(1.0);
    let (sat, val) = (delta / max, max);

    let h6 = hue * 6.0;
    let i = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = val * (1.0 - sat);
    let q = val * (1.0 - sat * f);
    let t = val * (1.0 - sat * (1.0 - f));
    match i {
        0 => [val, t, p],
        1 => [q, val, p],
        2 => [p, val, t],
        3 => [p, q, val],
        4 => [t, p, val],
        _ => [val, p, q],
    }
}
