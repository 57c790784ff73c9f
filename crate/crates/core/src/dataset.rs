//! Canonical data model and on-disk layout.
//!
//! A dataset directory holds `metadata.csv` plus one directory per grasp
//! under `grasps/`:
//!
//! ```text
//! dataset/
//!   metadata.csv                  object_id,name,shape,material,young_modulus_pa
//!   grasps/<grasp_id>/
//!     frames/0.png 1.png 2.png    8-bit RGB
//!     trajectory.csv              force_n,width_m
//!     estimates.csv               e_elastic_pa,e_hertz_pa   (optional)
//! ```
//!
//! Grasp directory names start with `<object_id>__`, which is how grasps
//! resolve to their object.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Squeezes stop once this force is reached; also the force
/// normalization scale for model inputs.
pub const FORCE_STOP_N: f64 = 60.0;
/// Grasp peak force may overshoot the 60 N stop condition; accept 10%.
pub const MAX_FORCE_N: f64 = 66.0;
/// Width may rise by sensor jitter between consecutive samples.
pub const WIDTH_JITTER_TOL_M: f64 = 1e-4;
/// Below this range a force or width sequence counts as constant.
pub const MIN_SEQUENCE_RANGE: f64 = 1e-6;

pub const MODULUS_FLOOR_PA: f64 = 1e3;
pub const MODULUS_CEIL_PA: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Cylinder,
    Rectangular,
    Hex,
    Irregular,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Sphere,
        Shape::Cylinder,
        Shape::Rectangular,
        Shape::Hex,
        Shape::Irregular,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
            Shape::Rectangular => "rectangular",
            Shape::Hex => "hex",
            Shape::Irregular => "irregular",
        }
    }
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sphere" => Ok(Shape::Sphere),
            "cylinder" => Ok(Shape::Cylinder),
            "rectangular" => Ok(Shape::Rectangular),
            "hex" => Ok(Shape::Hex),
            "irregular" => Ok(Shape::Irregular),
            other => Err(format!("unknown shape {other:?}")),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Foam,
    Rubber,
    Food,
    Plastic,
    Wood,
    Glass,
    Ceramic,
    Metal,
}

impl Material {
    pub const ALL: [Material; 8] = [
        Material::Foam,
        Material::Rubber,
        Material::Food,
        Material::Plastic,
        Material::Wood,
        Material::Glass,
        Material::Ceramic,
        Material::Metal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Material::Foam => "foam",
            Material::Rubber => "rubber",
            Material::Food => "food",
            Material::Plastic => "plastic",
            Material::Wood => "wood",
            Material::Glass => "glass",
            Material::Ceramic => "ceramic",
            Material::Metal => "metal",
        }
    }
}

impl FromStr for Material {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "foam" => Ok(Material::Foam),
            "rubber" => Ok(Material::Rubber),
            "food" => Ok(Material::Food),
            "plastic" => Ok(Material::Plastic),
            "wood" => Ok(Material::Wood),
            "glass" => Ok(Material::Glass),
            "ceramic" => Ok(Material::Ceramic),
            "metal" => Ok(Material::Metal),
            other => Err(format!("unknown material {other:?}")),
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub object_id: String,
    pub name: String,
    pub shape: Shape,
    pub material: Material,
    pub young_modulus_pa: f64,
}

impl ObjectMeta {
    pub fn validate(&self) -> Result<()> {
        let y = self.young_modulus_pa;
        if !(y.is_finite() && y > 0.0) {
            return Err(CoreError::InvalidObject {
                object_id: self.object_id.clone(),
                reason: format!("young_modulus_pa {y} not positive"),
            });
        }
        if !(MODULUS_FLOOR_PA..=MODULUS_CEIL_PA).contains(&y) {
            return Err(CoreError::InvalidObject {
                object_id: self.object_id.clone(),
                reason: format!("young_modulus_pa {y} outside [{MODULUS_FLOOR_PA}, {MODULUS_CEIL_PA}]"),
            });
        }
        if self.object_id.is_empty() || self.object_id.contains("__") {
            return Err(CoreError::InvalidObject {
                object_id: self.object_id.clone(),
                reason: "object_id must be nonempty and free of '__'".into(),
            });
        }
        Ok(())
    }
}

/// One tactile image: `(H, W, 3)` with channel values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub pixels: Array3<f32>,
    pub timestamp_index: usize,
}

impl TactileFrame {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let shape = self.pixels.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(format!("frame shape {shape:?}, expected (H, W, 3)"));
        }
        if self.timestamp_index > 2 {
            return Err(format!("timestamp_index {} > 2", self.timestamp_index));
        }
        if self.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("pixel outside [0,1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalEstimate {
    pub e_elastic_pa: f64,
    pub e_hertz_pa: f64,
}

impl AnalyticalEstimate {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("e_elastic_pa", self.e_elastic_pa), ("e_hertz_pa", self.e_hertz_pa)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} = {v} not positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspRecord {
    pub grasp_id: String,
    pub object_id: String,
    pub frames: Vec<TactileFrame>,
    pub force_n: Vec<f64>,
    pub width_m: Vec<f64>,
    pub estimates: Option<AnalyticalEstimate>,
}

impl GraspRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(CoreError::InvalidGrasp {
                grasp_id: self.grasp_id.clone(),
                reason,
            })
        };
        if self.frames.len() != 3 {
            return fail(format!("{} frames, expected 3", self.frames.len()));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.timestamp_index != i {
                return fail(format!("frame {i} has timestamp_index {}", frame.timestamp_index));
            }
            if let Err(reason) = frame.validate() {
                return fail(format!("frame {i}: {reason}"));
            }
        }
        let (h, w) = (self.frames[0].pixels.shape()[0], self.frames[0].pixels.shape()[1]);
        if self.frames.iter().any(|f| f.pixels.shape() != [h, w, 3]) {
            return fail("frames disagree on resolution".into());
        }
        if self.force_n.len() != self.width_m.len() {
            return Err(CoreError::TrajectoryLengthMismatch {
                grasp_id: self.grasp_id.clone(),
                details: format!("len(force) {} != len(width) {}", self.force_n.len(), self.width_m.len()),
            });
        }
        if self.force_n.len() < 2 {
            return fail(format!("{} trajectory samples, need at least 2", self.force_n.len()));
        }
        for &f in &self.force_n {
            if !(f.is_finite() && f >= 0.0) {
                return fail(format!("force {f} N not finite and nonnegative"));
            }
            if f > MAX_FORCE_N {
                return fail(format!("force {f} N exceeds {MAX_FORCE_N} N"));
            }
        }
        for &w in &self.width_m {
            if !(w.is_finite() && w > 0.0) {
                return fail(format!("width {w} m not finite and positive"));
            }
        }
        for pair in self.width_m.windows(2) {
            if pair[1] > pair[0] + WIDTH_JITTER_TOL_M {
                return fail(format!("width rises {} -> {} m", pair[0], pair[1]));
            }
        }
        if let Some(est) = &self.estimates {
            if let Err(reason) = est.validate() {
                return fail(reason);
            }
        }
        Ok(())
    }

    pub fn force_range(&self) -> f64 {
        seq_range(&self.force_n)
    }

    pub fn width_range(&self) -> f64 {
        seq_range(&self.width_m)
    }

    /// Trajectory values at the three frame timestamps
    /// (first, middle, final sample).
    pub fn at_frame_times(values: &[f64]) -> [f64; 3] {
        let n = values.len();
        [values[0], values[n / 2], values[n - 1]]
    }
}

fn seq_range(values: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        0.0
    } else {
        hi - lo
    }
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub objects: BTreeMap<String, ObjectMeta>,
    pub grasps: Vec<GraspRecord>,
}

impl Catalog {
    pub fn new(objects: Vec<ObjectMeta>, grasps: Vec<GraspRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for meta in objects {
            meta.validate()?;
            if map.insert(meta.object_id.clone(), meta.clone()).is_some() {
                return Err(CoreError::DuplicateObjectId(meta.object_id));
            }
        }
        let catalog = Catalog { objects: map, grasps };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        for grasp in &self.grasps {
            grasp.validate()?;
            if !self.objects.contains_key(&grasp.object_id) {
                return Err(CoreError::UnknownObjectId(grasp.object_id.clone()));
            }
        }
        Ok(())
    }

    pub fn object_of(&self, grasp: &GraspRecord) -> &ObjectMeta {
        &self.objects[&grasp.object_id]
    }

    pub fn grasp(&self, grasp_id: &str) -> Option<&GraspRecord> {
        self.grasps.iter().find(|g| g.grasp_id == grasp_id)
    }

    /// Grasp counts per object, only for objects with at least one grasp.
    pub fn grasp_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for grasp in &self.grasps {
            *counts.entry(grasp.object_id.as_str()).or_default() += 1;
        }
        counts
    }
}

/// Drops grasps with missing estimates, constant force, or constant
/// width, then objects left with exactly one grasp (and that grasp).
/// Idempotent; preserves the order of surviving grasps.
pub fn clean(catalog: &Catalog) -> Result<Catalog> {
    let keep: Vec<&GraspRecord> = catalog
        .grasps
        .iter()
        .filter(|g| {
            g.estimates.is_some()
                && g.force_range() >= MIN_SEQUENCE_RANGE
                && g.width_range() >= MIN_SEQUENCE_RANGE
        })
        .collect();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for grasp in &keep {
        *counts.entry(grasp.object_id.as_str()).or_default() += 1;
    }
    let singletons: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| c == 1)
        .map(|(id, _)| id.to_string())
        .collect();

    let grasps: Vec<GraspRecord> = keep
        .into_iter()
        .filter(|g| !singletons.contains(&g.object_id))
        .cloned()
        .collect();
    if grasps.is_empty() {
        return Err(CoreError::EmptyAfterCleaning);
    }
    let objects: BTreeMap<String, ObjectMeta> = catalog
        .objects
        .iter()
        .filter(|(id, _)| !singletons.contains(id))
        .map(|(id, meta)| (id.clone(), meta.clone()))
        .collect();
    Ok(Catalog { objects, grasps })
}

// ---------------------------------------------------------------------------
// canonical layout: reading

pub fn load_metadata(path: &Path) -> Result<Vec<ObjectMeta>> {
    if !path.is_file() {
        return Err(CoreError::MissingFile(path.display().to_string()));
    }
    // flexible so short rows surface as MalformedRow, not a csv error
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut objects = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2; // header is line 1
        let record = row?;
        let meta = parse_metadata_row(&record).map_err(|reason| CoreError::MalformedRow {
            row: row_no,
            reason,
        })?;
        meta.validate().map_err(|e| CoreError::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(meta.object_id.clone()) {
            return Err(CoreError::DuplicateObjectId(meta.object_id));
        }
        objects.push(meta);
    }
    Ok(objects)
}

fn parse_metadata_row(record: &csv::StringRecord) -> std::result::Result<ObjectMeta, String> {
    if record.len() != 5 {
        return Err(format!("{} columns, expected 5", record.len()));
    }
    Ok(ObjectMeta {
        object_id: record[0].trim().to_string(),
        name: record[1].trim().to_string(),
        shape: record[2].parse()?,
        material: record[3].parse()?,
        young_modulus_pa: record[4]
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("young_modulus_pa: {e}"))?,
    })
}

/// Loads every grasp directory under `<root>/grasps`, sorted by id.
/// Grasps whose object id is not in `objects` are skipped; the count of
/// skipped records is returned alongside.
pub fn load_grasps(
    root: &Path,
    objects: &BTreeMap<String, ObjectMeta>,
) -> Result<(Vec<GraspRecord>, usize)> {
    let grasp_root = root.join("grasps");
    if !grasp_root.is_dir() {
        return Err(CoreError::MissingFile(grasp_root.display().to_string()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&grasp_root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut grasps = Vec::new();
    let mut unknown = 0usize;
    for dir in dirs {
        let grasp_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let object_id = match grasp_id.split_once("__") {
            Some((obj, _)) => obj.to_string(),
            None => {
                log::warn!("grasp dir {grasp_id:?} lacks the <object_id>__ prefix, skipping");
                unknown += 1;
                continue;
            }
        };
        if !objects.contains_key(&object_id) {
            log::warn!("grasp {grasp_id} references unknown object {object_id}, skipping");
            unknown += 1;
            continue;
        }
        let record = load_grasp_dir(&dir, grasp_id, object_id)?;
        record.validate()?;
        grasps.push(record);
    }
    Ok((grasps, unknown))
}

fn load_grasp_dir(dir: &Path, grasp_id: String, object_id: String) -> Result<GraspRecord> {
    let mut frames = Vec::with_capacity(3);
    for t in 0..3 {
        let path = dir.join("frames").join(format!("{t}.png"));
        if !path.is_file() {
            return Err(CoreError::MissingFrameFile(path.display().to_string()));
        }
        frames.push(TactileFrame {
            pixels: read_frame_png(&path)?,
            timestamp_index: t,
        });
    }
    let (force_n, width_m) = read_trajectory(&dir.join("trajectory.csv"), &grasp_id)?;
    let estimates_path = dir.join("estimates.csv");
    let estimates = if estimates_path.is_file() {
        Some(read_estimates(&estimates_path)?)
    } else {
        None
    };
    Ok(GraspRecord {
        grasp_id,
        object_id,
        frames,
        force_n,
        width_m,
        estimates,
    })
}

pub fn read_frame_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut pixels = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(pixels)
}

pub(crate) fn read_trajectory(path: &Path, grasp_id: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if !path.is_file() {
        return Err(CoreError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut force = Vec::new();
    let mut width = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let record = row?;
        if record.len() != 2 {
            return Err(CoreError::TrajectoryLengthMismatch {
                grasp_id: grasp_id.to_string(),
                details: format!("row {} has {} columns, expected 2", i + 2, record.len()),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|e| CoreError::MalformedRow {
                row: i + 2,
                reason: format!("{name}: {e}"),
            })
        };
        force.push(parse(&record[0], "force_n")?);
        width.push(parse(&record[1], "width_m")?);
    }
    Ok((force, width))
}

pub(crate) fn read_estimates(path: &Path) -> Result<AnalyticalEstimate> {
    let mut reader = csv::Reader::from_path(path)?;
    let record = reader
        .records()
        .next()
        .transpose()?
        .ok_or_else(|| CoreError::MalformedRow {
            row: 2,
            reason: "estimates.csv has no data row".into(),
        })?;
    if record.len() != 2 {
        return Err(CoreError::MalformedRow {
            row: 2,
            reason: format!("estimates.csv has {} columns, expected 2", record.len()),
        });
    }
    let parse = |field: &str, name: &str| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|e| CoreError::MalformedRow {
            row: 2,
            reason: format!("{name}: {e}"),
        })
    };
    Ok(AnalyticalEstimate {
        e_elastic_pa: parse(&record[0], "e_elastic_pa")?,
        e_hertz_pa: parse(&record[1], "e_hertz_pa")?,
    })
}

/// Loads a full dataset directory into memory.
pub fn load_catalog(root: &Path) -> Result<Catalog> {
    let objects = load_metadata(&root.join("metadata.csv"))?;
    let mut map = BTreeMap::new();
    for meta in objects {
        map.insert(meta.object_id.clone(), meta);
    }
    let (grasps, skipped) = load_grasps(root, &map)?;
    if skipped > 0 {
        log::warn!("skipped {skipped} grasp directories while loading {}", root.display());
    }
    Ok(Catalog { objects: map, grasps })
}

// ---------------------------------------------------------------------------
// canonical layout: writing

pub fn write_dataset(root: &Path, catalog: &Catalog) -> Result<()> {
    std::fs::create_dir_all(root.join("grasps"))?;
    write_metadata(&root.join("metadata.csv"), catalog.objects.values())?;
    for grasp in &catalog.grasps {
        write_grasp_dir(&root.join("grasps").join(&grasp.grasp_id), grasp)?;
    }
    Ok(())
}

pub fn write_metadata<'a>(
    path: &Path,
    objects: impl Iterator<Item = &'a ObjectMeta>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["object_id", "name", "shape", "material", "young_modulus_pa"])?;
    for meta in objects {
        writer.write_record([
            meta.object_id.as_str(),
            meta.name.as_str(),
            meta.shape.as_str(),
            meta.material.as_str(),
            &format!("{}", meta.young_modulus_pa),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_grasp_dir(dir: &Path, grasp: &GraspRecord) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    for frame in &grasp.frames {
        write_frame_png(&frames_dir.join(format!("{}.png", frame.timestamp_index)), &frame.pixels)?;
    }
    let mut writer = csv::Writer::from_path(dir.join("trajectory.csv"))?;
    writer.write_record(["force_n", "width_m"])?;
    for (f, w) in grasp.force_n.iter().zip(&grasp.width_m) {
        writer.write_record([format!("{f}"), format!("{w}")])?;
    }
    writer.flush()?;
    if let Some(est) = &grasp.estimates {
        let mut writer = csv::Writer::from_path(dir.join("estimates.csv"))?;
        writer.write_record(["e_elastic_pa", "e_hertz_pa"])?;
        writer.write_record([format!("{}", est.e_elastic_pa), format!("{}", est.e_hertz_pa)])?;
        writer.flush()?;
    }
    Ok(())
}

pub fn write_frame_png(path: &Path, pixels: &Array3<f32>) -> Result<()> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(pixels[[y, x, 0]]),
                quantize(pixels[[y, x, 1]]),
                quantize(pixels[[y, x, 2]]),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Nearest-sample bilinear resize to `size` x `size`; identity when the
/// frame already matches.
pub fn resize_frame(pixels: &Array3<f32>, size: usize) -> Array3<f32> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    if h == size && w == size {
        return pixels.clone();
    }
    let mut out = Array3::<f32>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            // map output pixel centers into input pixel coordinates
            let sy = ((y as f32 + 0.5) * h as f32 / size as f32 - 0.5).clamp(0.0, (h - 1) as f32);
            let sx = ((x as f32 + 0.5) * w as f32 / size as f32 - 0.5).clamp(0.0, (w - 1) as f32);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f32, sx - x0 as f32);
            for c in 0..3 {
                let top = pixels[[y0, x0, c]] * (1.0 - fx) + pixels[[y0, x1, c]] * fx;
                let bottom = pixels[[y1, x0, c]] * (1.0 - fx) + pixels[[y1, x1, c]] * fx;
                out[[y, x, c]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}
