//! Splitting, balancing and augmentation behavior: proportions,
//! determinism, object isolation, bucket top-up accounting and the
//! noise/flip statistics of the augmenter. Includes property tests for
//! the metric definitions used downstream.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use ndarray::Array3;
use proptest::prelude::*;

use modsense_core::dataset::{
    AnalyticalEstimate, Catalog, GraspRecord, Material, ObjectMeta, Shape, TactileFrame,
};
use modsense_core::metrics::{log10_accuracy, n_mse};
use modsense_core::pipeline::{
    augment, augment_grasp_frames, balance, split, AugmentConfig, BalanceConfig, SplitMode,
    SplitSet,
};
use modsense_core::CoreError;

fn frame(t: usize) -> TactileFrame {
    TactileFrame {
        pixels: Array3::from_elem((4, 4, 3), 0.5),
        timestamp_index: t,
    }
}

fn grasp(object: &str, k: usize) -> GraspRecord {
    GraspRecord {
        grasp_id: format!("{object}__g{k}"),
        object_id: object.to_string(),
        frames: (0..3).map(frame).collect(),
        force_n: vec![0.0, 20.0, 40.0],
        width_m: vec![0.05, 0.048, 0.046],
        estimates: Some(AnalyticalEstimate {
            e_elastic_pa: 1.0e5,
            e_hertz_pa: 1.0e5,
        }),
    }
}

/// One object per (modulus, grasps) entry, ids o00, o01, ...
fn catalog_of(spec: &[(f64, usize)]) -> Catalog {
    let mut objects = Vec::new();
    let mut grasps = Vec::new();
    for (i, &(modulus, n)) in spec.iter().enumerate() {
        let id = format!("o{i:02}");
        objects.push(ObjectMeta {
            object_id: id.clone(),
            name: format!("object {i}"),
            shape: Shape::Sphere,
            material: Material::Rubber,
            young_modulus_pa: modulus,
        });
        for k in 0..n {
            grasps.push(grasp(&id, k));
        }
    }
    Catalog::new(objects, grasps).unwrap()
}

fn object_of_grasp(id: &str) -> &str {
    id.split_once("__").unwrap().0
}

fn assert_partition(split: &SplitSet, catalog: &Catalog) {
    let mut seen = HashSet::new();
    for list in [&split.train, &split.validation, &split.test] {
        for id in list {
            assert!(seen.insert(id.clone()), "{id} appears twice");
        }
    }
    assert_eq!(seen.len(), catalog.grasps.len());
}

#[test]
fn seen_object_split_has_20_16_64_proportions() {
    let catalog = catalog_of(&[(1.0e5, 25), (1.0e7, 25), (1.0e9, 25), (1.0e11, 25)]);
    let s = split(&catalog, SplitMode::SeenObject, 7).unwrap();
    assert_eq!(s.test.len(), 20);
    assert_eq!(s.validation.len(), 16);
    assert_eq!(s.train.len(), 64);
    assert_partition(&s, &catalog);
}

#[test]
fn unseen_object_split_isolates_objects() {
    let spec: Vec<(f64, usize)> = (0..20).map(|i| (10f64.powf(4.0 + i as f64 / 3.0), 3)).collect();
    let catalog = catalog_of(&spec);
    let s = split(&catalog, SplitMode::UnseenObject, 3).unwrap();
    assert_partition(&s, &catalog);
    fn objs(ids: &[String]) -> BTreeSet<&str> {
        ids.iter().map(|i| object_of_grasp(i)).collect()
    }
    let train = objs(&s.train);
    let val = objs(&s.validation);
    let test = objs(&s.test);
    assert!(train.is_disjoint(&val));
    assert!(train.is_disjoint(&test));
    assert!(val.is_disjoint(&test));
    // 20 objects -> 4 test, 3 validation (floor), 13 train
    assert_eq!(test.len(), 4);
    assert_eq!(val.len(), 3);
    assert_eq!(train.len(), 13);
    // every grasp follows its object
    for id in &s.test {
        assert!(test.contains(object_of_grasp(id)));
    }
}

#[test]
fn split_is_deterministic_per_seed() {
    let spec: Vec<(f64, usize)> = (0..6).map(|i| (10f64.powf(4.0 + i as f64), 5)).collect();
    let catalog = catalog_of(&spec);
    for mode in [SplitMode::SeenObject, SplitMode::UnseenObject] {
        let a = split(&catalog, mode, 42).unwrap();
        let b = split(&catalog, mode, 42).unwrap();
        assert_eq!(a, b);
        let c = split(&catalog, mode, 43).unwrap();
        assert_ne!(a.test, c.test, "{mode:?} seed should matter");
    }
}

#[test]
fn unseen_mode_needs_five_objects() {
    let catalog = catalog_of(&[(1.0e5, 2), (1.0e6, 2), (1.0e7, 2), (1.0e8, 2)]);
    assert!(matches!(
        split(&catalog, SplitMode::UnseenObject, 1),
        Err(CoreError::TooFewObjects(4))
    ));
    // seen-object mode has no object-count precondition
    split(&catalog, SplitMode::SeenObject, 1).unwrap();
}

#[test]
fn unseen_splits_have_zero_object_overlap_across_100_seeds() {
    let spec: Vec<(f64, usize)> = (0..25).map(|i| (10f64.powf(4.0 + 0.3 * i as f64), 2)).collect();
    let catalog = catalog_of(&spec);
    for seed in 0..100u64 {
        let s = split(&catalog, SplitMode::UnseenObject, seed).unwrap();
        let train: BTreeSet<&str> = s.train.iter().map(|i| object_of_grasp(i)).collect();
        let held: BTreeSet<&str> = s
            .validation
            .iter()
            .chain(&s.test)
            .map(|i| object_of_grasp(i))
            .collect();
        assert!(train.is_disjoint(&held), "overlap at seed {seed}");
    }
}

#[test]
fn split_round_trips_through_json() {
    let catalog = catalog_of(&[(1.0e5, 5), (1.0e8, 5)]);
    let s = split(&catalog, SplitMode::SeenObject, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    s.save(&path).unwrap();
    assert_eq!(SplitSet::load(&path).unwrap(), s);
}

#[test]
fn balance_tops_up_only_the_short_bucket() {
    // bucket [1e5 decade]: 10 grasps, bucket [1e7 decade]: 5 grasps
    let catalog = catalog_of(&[(2.0e5, 10), (2.0e7, 5)]);
    let ids: Vec<String> = catalog.grasps.iter().map(|g| g.grasp_id.clone()).collect();
    let cfg = BalanceConfig {
        t_balance: 10,
        ..BalanceConfig::default()
    };
    let out = balance(&ids, &catalog, &cfg, 5);
    assert_eq!(out.len(), 20);
    let mut per_object: BTreeMap<&str, usize> = BTreeMap::new();
    for id in &out {
        *per_object.entry(object_of_grasp(id)).or_default() += 1;
    }
    // o00's bucket was already full, o01's got five duplicates
    assert_eq!(per_object["o00"], 10);
    assert_eq!(per_object["o01"], 10);
    let distinct: BTreeSet<&str> = out.iter().map(|id| id.as_str()).collect();
    assert_eq!(distinct.len(), 15);
}

#[test]
fn balance_is_a_permutation_when_buckets_are_full() {
    let catalog = catalog_of(&[(2.0e5, 6), (2.0e7, 6)]);
    let ids: Vec<String> = catalog.grasps.iter().map(|g| g.grasp_id.clone()).collect();
    let cfg = BalanceConfig {
        t_balance: 5,
        ..BalanceConfig::default()
    };
    let out = balance(&ids, &catalog, &cfg, 5);
    let mut sorted_in = ids.clone();
    sorted_in.sort();
    let mut sorted_out = out.clone();
    sorted_out.sort();
    assert_eq!(sorted_in, sorted_out);
    assert_ne!(out, ids, "order is reshuffled");
}

#[test]
fn balance_to_500_fills_every_nonempty_bucket() {
    // deliberately skewed: 40 soft, 12 middle, 8 stiff grasps
    let mut spec: Vec<(f64, usize)> = (0..10).map(|i| (1.5e4 * (1.0 + i as f64 / 10.0), 4)).collect();
    spec.extend((0..4).map(|i| (2.0e7 * (1.0 + i as f64 / 10.0), 3)));
    spec.extend((0..4).map(|i| (3.0e10 * (1.0 + i as f64 / 10.0), 2)));
    let catalog = catalog_of(&spec);
    let ids: Vec<String> = catalog.grasps.iter().map(|g| g.grasp_id.clone()).collect();
    let cfg = BalanceConfig::default();
    assert_eq!(cfg.t_balance, 500);
    let out = balance(&ids, &catalog, &cfg, 11);

    // recompute the bucket histogram independently of the implementation
    let mut hist = [0usize; 9];
    for id in &out {
        let g = catalog.grasp(id).unwrap();
        let lg = catalog.object_of(g).young_modulus_pa.log10();
        hist[(lg.floor() as usize).clamp(3, 11) - 3] += 1;
    }
    for (k, &count) in hist.iter().enumerate() {
        if count > 0 {
            assert!(count >= 500, "bucket {k}: {count}");
        }
    }
    assert_eq!(hist.iter().sum::<usize>(), out.len());
    assert_eq!(hist.iter().filter(|&&c| c > 0).count(), 3);

    let distinct_in: BTreeSet<&String> = ids.iter().collect();
    let distinct_out: BTreeSet<&String> = out.iter().collect();
    assert_eq!(distinct_in, distinct_out);

    // originals retained: every input id appears at least once
    for id in &ids {
        assert!(out.contains(id));
    }
}

#[test]
fn identity_augmentation_is_exact() {
    let cfg = AugmentConfig {
        flip_prob: 0.0,
        gaussian_sigma: 0.0,
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
    let mut input = frame(0);
    for (i, v) in input.pixels.iter_mut().enumerate() {
        *v = (i % 17) as f32 / 16.0;
    }
    let out = augment(&input, &cfg, 123);
    assert_eq!(out.pixels, input.pixels);
    assert_eq!(out.timestamp_index, 0);
}

#[test]
fn forced_flips_mirror_both_axes() {
    let cfg = AugmentConfig {
        flip_prob: 1.0,
        gaussian_sigma: 0.0,
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
    let mut input = frame(1);
    for (i, v) in input.pixels.iter_mut().enumerate() {
        *v = (i % 29) as f32 / 28.0;
    }
    let out = augment(&input, &cfg, 9);
    let (h, w) = (4, 4);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                assert_eq!(
                    out.pixels[[y, x, c]],
                    input.pixels[[h - 1 - y, w - 1 - x, c]]
                );
            }
        }
    }
}

#[test]
fn gaussian_noise_statistics_match_the_model() {
    let cfg = AugmentConfig {
        flip_prob: 0.0,
        gaussian_sigma: 0.05,
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
    let input = TactileFrame {
        pixels: Array3::from_elem((64, 64, 3), 0.5),
        timestamp_index: 0,
    };
    let out = augment(&input, &cfg, 77);
    let n = out.pixels.len() as f64;
    let mean = out.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = out
        .pixels
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    let std = var.sqrt();
    assert!((std - 0.05).abs() < 0.2 * 0.05, "std {std}");
}

#[test]
fn grasp_frames_share_one_flip_decision() {
    let cfg = AugmentConfig {
        flip_prob: 0.5,
        gaussian_sigma: 0.0,
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
    // asymmetric pattern so each flip state is distinguishable
    let mut base = Array3::<f32>::zeros((4, 4, 3));
    base[[0, 0, 0]] = 1.0;
    base[[0, 3, 1]] = 1.0;
    base[[3, 0, 2]] = 1.0;
    let frames = vec![base.clone(), base.clone(), base.clone()];

    let classify = |pix: &Array3<f32>| -> (bool, bool) {
        // locate where the red corner marker went
        if pix[[0, 0, 0]] == 1.0 {
            (false, false)
        } else if pix[[0, 3, 0]] == 1.0 {
            (true, false)
        } else if pix[[3, 0, 0]] == 1.0 {
            (false, true)
        } else {
            (true, true)
        }
    };

    let mut states = BTreeSet::new();
    for g in 0..32 {
        let id = format!("o__g{g}");
        let out = augment_grasp_frames(&frames, &cfg, 1234, 0, &id);
        let s0 = classify(&out[0]);
        assert_eq!(classify(&out[1]), s0, "grasp {id}");
        assert_eq!(classify(&out[2]), s0, "grasp {id}");
        states.insert(s0);
    }
    // with 32 draws at p=0.5 per axis, all four flip states should occur
    assert_eq!(states.len(), 4);
}

#[test]
fn grasp_augmentation_is_keyed_by_epoch_and_id() {
    let cfg = AugmentConfig::default();
    let mut base = Array3::<f32>::zeros((6, 6, 3));
    for (i, v) in base.iter_mut().enumerate() {
        *v = (i % 13) as f32 / 12.0;
    }
    let frames = vec![base.clone(), base.clone(), base.clone()];
    let a = augment_grasp_frames(&frames, &cfg, 7, 0, "o__g0");
    let again = augment_grasp_frames(&frames, &cfg, 7, 0, "o__g0");
    assert_eq!(a, again);
    let other_epoch = augment_grasp_frames(&frames, &cfg, 7, 1, "o__g0");
    assert_ne!(a, other_epoch);
    let other_grasp = augment_grasp_frames(&frames, &cfg, 7, 0, "o__g1");
    assert_ne!(a, other_grasp);
}

#[test]
fn augmented_pixels_stay_in_unit_range() {
    let cfg = AugmentConfig {
        gaussian_sigma: 0.5,
        brightness: 0.9,
        ..AugmentConfig::default()
    };
    let input = TactileFrame {
        pixels: Array3::from_elem((8, 8, 3), 0.95),
        timestamp_index: 0,
    };
    for seed in 0..20 {
        let out = augment(&input, &cfg, seed);
        assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(
        n_objects in 5usize..24,
        grasps_per in 1usize..4,
        seed in any::<u64>(),
        unseen in any::<bool>(),
    ) {
        let spec: Vec<(f64, usize)> = (0..n_objects)
            .map(|i| (10f64.powf(4.0 + (i % 7) as f64), grasps_per))
            .collect();
        let catalog = catalog_of(&spec);
        let mode = if unseen { SplitMode::UnseenObject } else { SplitMode::SeenObject };
        let s = split(&catalog, mode, seed).unwrap();
        assert_partition(&s, &catalog);
    }

    #[test]
    fn balance_reaches_the_floor_and_preserves_ids(
        counts in prop::collection::vec(1usize..8, 2..5),
        t in 1usize..20,
        seed in any::<u64>(),
    ) {
        let spec: Vec<(f64, usize)> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| (10f64.powf(4.5 + 2.0 * i as f64), n))
            .collect();
        let catalog = catalog_of(&spec);
        let ids: Vec<String> = catalog.grasps.iter().map(|g| g.grasp_id.clone()).collect();
        let cfg = BalanceConfig { t_balance: t, ..BalanceConfig::default() };
        let out = balance(&ids, &catalog, &cfg, seed);
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for id in &out {
            let g = catalog.grasp(id).unwrap();
            hist.entry(cfg.bucket_of(catalog.object_of(g).young_modulus_pa))
                .and_modify(|c| *c += 1)
                .or_insert(1);
        }
        for (&bucket, &count) in &hist {
            prop_assert!(count >= t, "bucket {bucket}: {count} < {t}");
        }
        let distinct_in: BTreeSet<&String> = ids.iter().collect();
        let distinct_out: BTreeSet<&String> = out.iter().collect();
        prop_assert_eq!(distinct_in, distinct_out);
    }

    #[test]
    fn accuracy_is_scale_invariant_across_decades(
        cases in prop::collection::vec((4.0f64..9.0, -2.0f64..2.0), 1..12),
        k in -3i32..=3,
    ) {
        // keep every miss distance away from the 1-decade boundary so
        // the hit/miss decision cannot flip under fp rescaling
        let truths: Vec<f64> = cases.iter().map(|&(t, _)| 10f64.powf(t)).collect();
        let preds: Vec<f64> = cases
            .iter()
            .map(|&(t, d)| {
                let d = if (0.95..=1.05).contains(&d.abs()) { d.signum() * 0.9 } else { d };
                10f64.powf(t + d)
            })
            .collect();
        let base = log10_accuracy(&preds, &truths).unwrap();
        let s = 10f64.powi(k);
        let preds_s: Vec<f64> = preds.iter().map(|p| p * s).collect();
        let truths_s: Vec<f64> = truths.iter().map(|t| t * s).collect();
        let scaled = log10_accuracy(&preds_s, &truths_s).unwrap();
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn n_mse_is_symmetric_in_its_arguments(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..16),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(n_mse(&a, &b).unwrap(), n_mse(&b, &a).unwrap());
    }
}
