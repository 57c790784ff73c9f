//! Loading, validation and cleaning rules for the on-disk dataset
//! layout: strict metadata parsing, frame/trajectory resolution, the
//! cleaning fixpoint and write/load round trips.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use tempfile::tempdir;

use modsense_core::dataset::{
    clean, load_catalog, load_grasps, load_metadata, resize_frame, write_dataset,
    write_grasp_dir, write_metadata, AnalyticalEstimate, Catalog, GraspRecord, Material,
    ObjectMeta, Shape, TactileFrame, MAX_FORCE_N,
};
use modsense_core::CoreError;

fn meta(id: &str, modulus: f64) -> ObjectMeta {
    ObjectMeta {
        object_id: id.to_string(),
        name: format!("object {id}"),
        shape: Shape::Sphere,
        material: Material::Rubber,
        young_modulus_pa: modulus,
    }
}

/// Pixels on the 1/255 grid so PNG quantization is lossless.
fn frame(t: usize, tint: usize) -> TactileFrame {
    let mut pixels = Array3::<f32>::zeros((6, 6, 3));
    for y in 0..6 {
        for x in 0..6 {
            for c in 0..3 {
                let v = (y * 37 + x * 11 + c * 5 + t * 13 + tint) % 256;
                pixels[[y, x, c]] = v as f32 / 255.0;
            }
        }
    }
    TactileFrame {
        pixels,
        timestamp_index: t,
    }
}

fn grasp(object: &str, suffix: &str, with_estimates: bool) -> GraspRecord {
    let tint = suffix.len() * 31;
    GraspRecord {
        grasp_id: format!("{object}__{suffix}"),
        object_id: object.to_string(),
        frames: (0..3).map(|t| frame(t, tint)).collect(),
        force_n: vec![0.0, 10.0, 25.0, 60.0],
        width_m: vec![0.05, 0.048, 0.046, 0.044],
        estimates: with_estimates.then_some(AnalyticalEstimate {
            e_elastic_pa: 2.0e5,
            e_hertz_pa: 3.0e5,
        }),
    }
}

fn object_map(objects: &[ObjectMeta]) -> BTreeMap<String, ObjectMeta> {
    objects
        .iter()
        .map(|o| (o.object_id.clone(), o.clone()))
        .collect()
}

fn write_metadata_text(path: &Path, body: &str) {
    let header = "object_id,name,shape,material,young_modulus_pa\n";
    std::fs::write(path, format!("{header}{body}")).unwrap();
}

#[test]
fn metadata_round_trips_in_catalog_order() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("metadata.csv");
    let objects = vec![meta("a1", 1.0e5), meta("b2", 3.0e8), meta("c3", 2.0e10)];
    write_metadata(&path, objects.iter()).unwrap();
    let back = load_metadata(&path).unwrap();
    assert_eq!(back, objects);
}

#[test]
fn header_only_metadata_is_empty() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("metadata.csv");
    write_metadata_text(&path, "");
    assert!(load_metadata(&path).unwrap().is_empty());
}

#[test]
fn negative_modulus_is_a_malformed_row() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("metadata.csv");
    write_metadata_text(&path, "x,thing,sphere,rubber,-5\n");
    match load_metadata(&path).unwrap_err() {
        CoreError::MalformedRow { row, .. } => assert_eq!(row, 2),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_shape_and_short_rows_are_malformed() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("metadata.csv");
    write_metadata_text(&path, "x,thing,dodecahedron,rubber,1e5\n");
    assert!(matches!(
        load_metadata(&path).unwrap_err(),
        CoreError::MalformedRow { row: 2, .. }
    ));
    write_metadata_text(&path, "x,thing,sphere,rubber,1e5\ny,thing,sphere\n");
    assert!(matches!(
        load_metadata(&path).unwrap_err(),
        CoreError::MalformedRow { row: 3, .. }
    ));
}

#[test]
fn duplicate_object_ids_are_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("metadata.csv");
    write_metadata_text(&path, "x,a,sphere,rubber,1e5\nx,b,cylinder,foam,2e5\n");
    match load_metadata(&path).unwrap_err() {
        CoreError::DuplicateObjectId(id) => assert_eq!(id, "x"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_metadata_file_is_reported() {
    assert!(matches!(
        load_metadata(Path::new("/nonexistent/metadata.csv")).unwrap_err(),
        CoreError::MissingFile(_)
    ));
}

#[test]
fn missing_frame_file_is_reported() {
    let dir = tempdir().unwrap();
    let objects = vec![meta("a", 1.0e5)];
    let g = grasp("a", "g0", true);
    let grasp_dir = dir.path().join("grasps").join(&g.grasp_id);
    write_grasp_dir(&grasp_dir, &g).unwrap();
    std::fs::remove_file(grasp_dir.join("frames").join("1.png")).unwrap();
    assert!(matches!(
        load_grasps(dir.path(), &object_map(&objects)).unwrap_err(),
        CoreError::MissingFrameFile(_)
    ));
}

#[test]
fn ragged_trajectory_rows_are_reported() {
    let dir = tempdir().unwrap();
    let objects = vec![meta("a", 1.0e5)];
    let g = grasp("a", "g0", true);
    let grasp_dir = dir.path().join("grasps").join(&g.grasp_id);
    write_grasp_dir(&grasp_dir, &g).unwrap();
    std::fs::write(
        grasp_dir.join("trajectory.csv"),
        "force_n,width_m\n0.0,0.05\n1.5\n",
    )
    .unwrap();
    assert!(matches!(
        load_grasps(dir.path(), &object_map(&objects)).unwrap_err(),
        CoreError::TrajectoryLengthMismatch { .. }
    ));
}

#[test]
fn mismatched_sequence_lengths_fail_validation() {
    let mut g = grasp("a", "g0", true);
    g.width_m.pop();
    assert!(matches!(
        g.validate().unwrap_err(),
        CoreError::TrajectoryLengthMismatch { .. }
    ));
}

#[test]
fn grasp_invariants_are_enforced() {
    let ok = grasp("a", "g0", true);
    ok.validate().unwrap();

    let mut two_frames = ok.clone();
    two_frames.frames.pop();
    assert!(matches!(two_frames.validate(), Err(CoreError::InvalidGrasp { .. })));

    let mut overshoot = ok.clone();
    overshoot.force_n[3] = MAX_FORCE_N + 1.0;
    assert!(matches!(overshoot.validate(), Err(CoreError::InvalidGrasp { .. })));
    overshoot.force_n[3] = MAX_FORCE_N; // 10% slack over the stop force is fine
    overshoot.validate().unwrap();

    let mut opening = ok.clone();
    opening.width_m[2] = opening.width_m[1] + 2e-4;
    assert!(matches!(opening.validate(), Err(CoreError::InvalidGrasp { .. })));
    opening.width_m[2] = opening.width_m[1] + 0.5e-4; // jitter tolerance
    opening.validate().unwrap();

    let mut short = ok.clone();
    short.force_n.truncate(1);
    short.width_m.truncate(1);
    assert!(matches!(short.validate(), Err(CoreError::InvalidGrasp { .. })));
}

#[test]
fn unknown_object_grasps_are_skipped_and_counted() {
    let dir = tempdir().unwrap();
    let objects = vec![meta("a", 1.0e5)];
    write_grasp_dir(
        &dir.path().join("grasps").join("a__g0"),
        &grasp("a", "g0", true),
    )
    .unwrap();
    write_grasp_dir(
        &dir.path().join("grasps").join("ghost__g0"),
        &grasp("ghost", "g0", true),
    )
    .unwrap();
    // a directory without the id separator is also skipped, not fatal
    std::fs::create_dir_all(dir.path().join("grasps").join("notes")).unwrap();
    std::fs::write(dir.path().join("grasps").join("notes").join("x.txt"), "-").unwrap();
    let (records, skipped) = load_grasps(dir.path(), &object_map(&objects)).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].grasp_id, "a__g0");
    assert_eq!(skipped, 2);
}

#[test]
fn load_order_is_lexicographic_and_repeatable() {
    let dir = tempdir().unwrap();
    let objects = vec![meta("a", 1.0e5), meta("b", 1.0e6)];
    // write in non-sorted order on purpose
    for (obj, suffix) in [("b", "g1"), ("a", "g2"), ("b", "g0"), ("a", "g1")] {
        let g = grasp(obj, suffix, true);
        write_grasp_dir(&dir.path().join("grasps").join(&g.grasp_id), &g).unwrap();
    }
    let map = object_map(&objects);
    let (first, _) = load_grasps(dir.path(), &map).unwrap();
    let ids: Vec<&str> = first.iter().map(|g| g.grasp_id.as_str()).collect();
    assert_eq!(ids, ["a__g1", "a__g2", "b__g0", "b__g1"]);
    let (second, _) = load_grasps(dir.path(), &map).unwrap();
    assert_eq!(first, second);
}

#[test]
fn clean_applies_all_removal_rules() {
    let objects = vec![meta("a", 1.0e5), meta("b", 1.0e6), meta("c", 1.0e7)];
    let mut constant_force = grasp("a", "flat", true);
    constant_force.force_n = vec![5.0; 4];
    let mut constant_width = grasp("a", "stuck", true);
    constant_width.width_m = vec![0.05; 4];
    let grasps = vec![
        grasp("a", "g0", true),
        grasp("a", "g1", true),
        grasp("a", "g2", false), // no estimates
        constant_force,
        constant_width,
        grasp("b", "only", true), // singleton object
    ];
    let catalog = Catalog::new(objects, grasps).unwrap();
    let cleaned = clean(&catalog).unwrap();
    let ids: Vec<&str> = cleaned.grasps.iter().map(|g| g.grasp_id.as_str()).collect();
    assert_eq!(ids, ["a__g0", "a__g1"]);
    // the singleton object disappears with its grasp
    assert!(!cleaned.objects.contains_key("b"));
    // metadata-only objects (zero grasps) survive cleaning
    assert!(cleaned.objects.contains_key("c"));
    for g in &cleaned.grasps {
        assert!(g.force_range() > 0.0 && g.width_range() > 0.0);
    }
}

#[test]
fn clean_is_idempotent_and_a_fixpoint_on_clean_input() {
    let objects = vec![meta("a", 1.0e5), meta("b", 1.0e6)];
    let grasps = vec![
        grasp("a", "g0", true),
        grasp("a", "g1", true),
        grasp("b", "g0", true),
        grasp("b", "g1", true),
    ];
    let catalog = Catalog::new(objects, grasps).unwrap();
    let once = clean(&catalog).unwrap();
    assert_eq!(once.grasps, catalog.grasps);
    assert_eq!(once.objects, catalog.objects);
    let twice = clean(&once).unwrap();
    assert_eq!(twice.grasps, once.grasps);
    assert_eq!(twice.objects, once.objects);
}

#[test]
fn cleaning_everything_away_is_an_error() {
    let objects = vec![meta("a", 1.0e5)];
    let grasps = vec![grasp("a", "g0", false), grasp("a", "g1", false)];
    let catalog = Catalog::new(objects, grasps).unwrap();
    assert!(matches!(clean(&catalog), Err(CoreError::EmptyAfterCleaning)));
}

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempdir().unwrap();
    let objects = vec![meta("a", 1.0e5), meta("b", 1.0e6)];
    let grasps = vec![
        grasp("a", "g0", true),
        grasp("a", "g1", false),
        grasp("b", "g0", true),
    ];
    let catalog = Catalog::new(objects, grasps).unwrap();
    write_dataset(dir.path(), &catalog).unwrap();
    let back = load_catalog(dir.path()).unwrap();
    assert_eq!(back.objects, catalog.objects);
    assert_eq!(back.grasps.len(), catalog.grasps.len());
    for (orig, loaded) in catalog.grasps.iter().zip(&back.grasps) {
        assert_eq!(orig.grasp_id, loaded.grasp_id);
        assert_eq!(orig.force_n, loaded.force_n);
        assert_eq!(orig.width_m, loaded.width_m);
        assert_eq!(orig.estimates, loaded.estimates);
        for (fo, fl) in orig.frames.iter().zip(&loaded.frames) {
            // fixture pixels sit on the 8-bit grid, so PNG is exact
            assert_eq!(fo.pixels, fl.pixels);
        }
    }
}

#[test]
fn frame_time_sampling_picks_first_middle_last() {
    assert_eq!(
        GraspRecord::at_frame_times(&[1.0, 2.0, 3.0, 4.0, 5.0]),
        [1.0, 3.0, 5.0]
    );
    assert_eq!(GraspRecord::at_frame_times(&[7.0, 9.0]), [7.0, 9.0, 9.0]);
}

#[test]
fn resize_is_identity_at_native_size_and_averages_down() {
    let native = frame(0, 0).pixels;
    assert_eq!(resize_frame(&native, 6), native);

    let mut quad = Array3::<f32>::zeros((2, 2, 3));
    quad[[0, 0, 0]] = 1.0;
    quad[[0, 1, 0]] = 0.5;
    quad[[1, 0, 0]] = 0.25;
    quad[[1, 1, 0]] = 0.25;
    let one = resize_frame(&quad, 1);
    assert_eq!(one.shape(), [1, 1, 3]);
    assert!((one[[0, 0, 0]] - 0.5).abs() < 1e-6);
    assert_eq!(one[[0, 0, 1]], 0.0);
}
