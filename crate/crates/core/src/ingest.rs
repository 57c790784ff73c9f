//! Adapter from raw capture layouts to the canonical dataset. Raw
//! metadata may give stiffness as a modulus or as a hardness reading;
//! frames may carry arbitrary names; estimates are refit when absent.
//! Per-object and per-grasp problems are logged and skipped, never
//! fatal, so one bad capture cannot sink an ingest run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    read_estimates, read_frame_png, read_trajectory, write_dataset, AnalyticalEstimate, Catalog,
    GraspRecord, Material, ObjectMeta, Shape, TactileFrame,
};
use crate::physics::{elastic_fit, hertz_fit, ContactParams, Hardness, ModulusBounds};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub objects: usize,
    pub objects_skipped: usize,
    pub grasps: usize,
    pub grasps_skipped: usize,
    pub estimates_computed: usize,
}

fn field<'a>(record: &'a csv::StringRecord, idx: Option<usize>) -> Option<&'a str> {
    idx.and_then(|i| record.get(i)).map(str::trim).filter(|s| !s.is_empty())
}

/// Raw metadata rows resolve stiffness in priority order: an explicit
/// modulus column, then Shore A, then Shore 00 hardness.
fn resolve_modulus(
    record: &csv::StringRecord,
    modulus_idx: Option<usize>,
    shore_a_idx: Option<usize>,
    shore_00_idx: Option<usize>,
) -> Result<f64> {
    if let Some(raw) = field(record, modulus_idx) {
        return raw
            .parse::<f64>()
            .map_err(|e| CoreError::Config(format!("young_modulus_pa: {e}")));
    }
    if let Some(raw) = field(record, shore_a_idx) {
        let s = raw
            .parse::<f64>()
            .map_err(|e| CoreError::Config(format!("shore_a: {e}")))?;
        return Hardness::ShoreA(s).to_young_pa();
    }
    if let Some(raw) = field(record, shore_00_idx) {
        let s = raw
            .parse::<f64>()
            .map_err(|e| CoreError::Config(format!("shore_00: {e}")))?;
        return Hardness::Shore00(s).to_young_pa();
    }
    Err(CoreError::Config(
        "no young_modulus_pa, shore_a or shore_00 value".into(),
    ))
}

fn load_raw_metadata(path: &Path) -> Result<(Vec<ObjectMeta>, usize)> {
    if !path.is_file() {
        return Err(CoreError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_idx = col("object_id").ok_or_else(|| CoreError::MalformedRow {
        row: 1,
        reason: "metadata.csv has no object_id column".into(),
    })?;
    let name_idx = col("name");
    let shape_idx = col("shape");
    let material_idx = col("material");
    let modulus_idx = col("young_modulus_pa");
    let shore_a_idx = col("shore_a");
    let shore_00_idx = col("shore_00");

    let mut objects = Vec::new();
    let mut skipped = 0usize;
    for (i, row) in reader.records().enumerate() {
        let record = row?;
        let object_id = match field(&record, Some(id_idx)) {
            Some(id) => id.to_string(),
            None => {
                log::warn!("metadata row {}: empty object_id, skipping", i + 2);
                skipped += 1;
                continue;
            }
        };
        let modulus = match resolve_modulus(&record, modulus_idx, shore_a_idx, shore_00_idx) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("object {object_id}: {e}, skipping");
                skipped += 1;
                continue;
            }
        };
        let shape = field(&record, shape_idx)
            .and_then(|s| s.parse::<Shape>().ok())
            .unwrap_or(Shape::Irregular);
        let material = field(&record, material_idx)
            .and_then(|s| s.parse::<Material>().ok())
            .unwrap_or(Material::Plastic);
        let meta = ObjectMeta {
            object_id: object_id.clone(),
            name: field(&record, name_idx).unwrap_or(&object_id).to_string(),
            shape,
            material,
            young_modulus_pa: modulus,
        };
        if let Err(e) = meta.validate() {
            log::warn!("object {object_id}: {e}, skipping");
            skipped += 1;
            continue;
        }
        objects.push(meta);
    }
    Ok((objects, skipped))
}

/// Sorted image files of a raw grasp directory reduced to the three
/// canonical timestamps: first, middle, last.
fn pick_frame_paths(dir: &Path) -> Result<[std::path::PathBuf; 3]> {
    let mut images: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    if images.is_empty() {
        return Err(CoreError::MissingFrameFile(format!(
            "{}: no png frames",
            dir.display()
        )));
    }
    images.sort();
    let n = images.len();
    Ok([images[0].clone(), images[n / 2].clone(), images[n - 1].clone()])
}

fn load_raw_grasp(
    dir: &Path,
    grasp_id: &str,
    object_id: &str,
    contact: &ContactParams,
    estimates_computed: &mut usize,
) -> Result<GraspRecord> {
    let (force_n, width_m) = read_trajectory(&dir.join("trajectory.csv"), grasp_id)?;
    let frame_paths = pick_frame_paths(dir)?;
    let mut frames = Vec::with_capacity(3);
    for (t, path) in frame_paths.iter().enumerate() {
        frames.push(TactileFrame {
            pixels: read_frame_png(path)?,
            timestamp_index: t,
        });
    }
    let mut grasp = GraspRecord {
        grasp_id: grasp_id.to_string(),
        object_id: object_id.to_string(),
        frames,
        force_n,
        width_m,
        estimates: None,
    };
    grasp.validate().map_err(|e| CoreError::InvalidGrasp {
        grasp_id: grasp_id.to_string(),
        reason: e.to_string(),
    })?;
    let estimates_path = dir.join("estimates.csv");
    grasp.estimates = if estimates_path.is_file() {
        Some(read_estimates(&estimates_path)?)
    } else {
        let bounds = ModulusBounds::default();
        let hertz = hertz_fit(&grasp, contact, &bounds)?;
        let elastic = elastic_fit(&grasp, contact, &bounds)?;
        *estimates_computed += 1;
        Some(AnalyticalEstimate {
            e_elastic_pa: elastic,
            e_hertz_pa: hertz.pascals,
        })
    };
    Ok(grasp)
}

/// Converts a raw capture tree into the canonical layout at `out_root`.
/// Grasp directories are named `<object_id>__<suffix>`; anything that
/// cannot be resolved or validated is logged and dropped.
pub fn ingest(raw_root: &Path, out_root: &Path, contact: &ContactParams) -> Result<IngestSummary> {
    contact.validate()?;
    let (objects, objects_skipped) = load_raw_metadata(&raw_root.join("metadata.csv"))?;
    let by_id: BTreeMap<&str, &ObjectMeta> =
        objects.iter().map(|o| (o.object_id.as_str(), o)).collect();

    let mut summary = IngestSummary {
        objects: objects.len(),
        objects_skipped,
        ..IngestSummary::default()
    };

    let grasps_root = raw_root.join("grasps");
    let mut grasps = Vec::new();
    if grasps_root.is_dir() {
        let mut dirs: Vec<std::path::PathBuf> = std::fs::read_dir(&grasps_root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let grasp_id = dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let Some((object_id, _)) = grasp_id.split_once("__") else {
                log::warn!("grasp {grasp_id}: no object prefix, skipping");
                summary.grasps_skipped += 1;
                continue;
            };
            if !by_id.contains_key(object_id) {
                log::warn!("grasp {grasp_id}: unknown object {object_id}, skipping");
                summary.grasps_skipped += 1;
                continue;
            }
            match load_raw_grasp(
                &dir,
                &grasp_id,
                object_id,
                contact,
                &mut summary.estimates_computed,
            ) {
                Ok(grasp) => grasps.push(grasp),
                Err(e) => {
                    log::warn!("grasp {grasp_id}: {e}, skipping");
                    summary.grasps_skipped += 1;
                }
            }
        }
    }
    summary.grasps = grasps.len();

    let catalog = Catalog::new(objects, grasps)?;
    write_dataset(out_root, &catalog)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_catalog;
    use crate::physics::gent_shore_a_to_young;

    fn write_png(path: &Path, size: u32, level: u8) {
        let img = image::RgbImage::from_pixel(size, size, image::Rgb([level, level, level]));
        img.save(path).unwrap();
    }

    fn write_raw_grasp(dir: &Path, frame_names: &[&str]) {
        std::fs::create_dir_all(dir).unwrap();
        for (i, name) in frame_names.iter().enumerate() {
            write_png(&dir.join(name), 8, 40 + 40 * i as u8);
        }
        std::fs::write(
            dir.join("trajectory.csv"),
            "force_n,width_m\n0.0,0.05\n1.0,0.048\n2.0,0.046\n3.0,0.044\n",
        )
        .unwrap();
    }

    #[test]
    fn raw_tree_converts_and_computes_estimates() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        std::fs::create_dir_all(&raw).unwrap();
        std::fs::write(
            raw.join("metadata.csv"),
            "object_id,name,shape,material,shore_a,shore_00\n\
             ball,stress ball,sphere,rubber,30,\n\
             brick,toy brick,rectangular,plastic,80,\n",
        )
        .unwrap();
        write_raw_grasp(&raw.join("grasps/ball__a"), &["img_003.png", "img_001.png", "img_002.png"]);
        write_raw_grasp(&raw.join("grasps/ball__b"), &["x.png"]);
        write_raw_grasp(&raw.join("grasps/brick__a"), &["f0.png", "f1.png"]);
        write_raw_grasp(&raw.join("grasps/brick__b"), &["f0.png", "f1.png", "f2.png", "f3.png"]);
        // unknown object and unprefixed directories are skipped
        write_raw_grasp(&raw.join("grasps/ghost__a"), &["f.png"]);
        write_raw_grasp(&raw.join("grasps/loose"), &["f.png"]);

        let out = dir.path().join("canonical");
        let summary = ingest(&raw, &out, &ContactParams::default()).unwrap();
        assert_eq!(summary.objects, 2);
        assert_eq!(summary.objects_skipped, 0);
        assert_eq!(summary.grasps, 4);
        assert_eq!(summary.grasps_skipped, 2);
        assert_eq!(summary.estimates_computed, 4);

        let catalog = load_catalog(&out).unwrap();
        assert_eq!(catalog.objects.len(), 2);
        assert_eq!(catalog.grasps.len(), 4);
        let ball = &catalog.objects["ball"];
        let expect = gent_shore_a_to_young(30.0).unwrap();
        assert!((ball.young_modulus_pa - expect).abs() / expect < 1e-9);
        for grasp in &catalog.grasps {
            assert!(grasp.estimates.is_some());
            assert_eq!(grasp.frames.len(), 3);
        }
    }

    #[test]
    fn shore_00_used_when_shore_a_absent() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        std::fs::create_dir_all(&raw).unwrap();
        std::fs::write(
            raw.join("metadata.csv"),
            "object_id,shore_00\nmarshmallow,45\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let summary = ingest(&raw, &out, &ContactParams::default()).unwrap();
        assert_eq!(summary.objects, 1);
        let catalog = load_catalog(&out).unwrap();
        let expect = Hardness::Shore00(45.0).to_young_pa().unwrap();
        let got = catalog.objects["marshmallow"].young_modulus_pa;
        assert!((got - expect).abs() / expect < 1e-9);
        // defaults fill the cosmetic columns
        assert_eq!(catalog.objects["marshmallow"].shape, Shape::Irregular);
    }

    #[test]
    fn bad_hardness_skips_object_not_run() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        std::fs::create_dir_all(&raw).unwrap();
        std::fs::write(
            raw.join("metadata.csv"),
            "object_id,shore_a\ngood,50\nbad,140\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let summary = ingest(&raw, &out, &ContactParams::default()).unwrap();
        assert_eq!(summary.objects, 1);
        assert_eq!(summary.objects_skipped, 1);
    }

    #[test]
    fn missing_metadata_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest(
            &dir.path().join("raw"),
            &dir.path().join("out"),
            &ContactParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::MissingFile(_)));
    }
}
