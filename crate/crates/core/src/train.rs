//! Training loop: minibatch Adam over normalized targets with early
//! stopping on validation error, plus batch assembly shared with
//! evaluation. Runs are deterministic in (config, seed).

use std::collections::HashMap;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use modsense_nn::{mse_l2, AdamConfig, LossConfig, Real};

use crate::dataset::{resize_frame, Catalog, GraspRecord, FORCE_STOP_N};
use crate::metrics;
use crate::models::{GraspBatch, InputStrategy, Model, ModelConfig};
use crate::physics::{denormalize_young, normalize_young, ModulusBounds};
use crate::pipeline::{augment_grasp_frames, balance, AugmentConfig, BalanceConfig, SplitSet};
use crate::report::{PredictionRow, SeedFailure};
use crate::seed;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Random,
    Balanced,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Random => "random",
            SamplingMode::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Consecutive epochs without validation improvement before stopping.
    pub patience: usize,
    pub sampling: SamplingMode,
    pub balance: BalanceConfig,
    /// `None` disables augmentation for train and validation alike.
    pub augment: Option<AugmentConfig>,
    pub bounds: ModulusBounds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-3,
            patience: 10,
            sampling: SamplingMode::Random,
            balance: BalanceConfig::default(),
            augment: Some(AugmentConfig::default()),
            bounds: ModulusBounds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CoreError::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return err("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err(format!("learning_rate {} must be positive", self.learning_rate));
        }
        self.balance.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.bounds.validate()?;
        Ok(())
    }
}

/// Resized frames per grasp, computed once and reused across epochs.
pub struct FrameCache {
    size: usize,
    map: HashMap<String, Vec<Array3<f32>>>,
}

impl FrameCache {
    pub fn new(size: usize) -> Self {
        FrameCache {
            size,
            map: HashMap::new(),
        }
    }

    fn frames(&mut self, grasp: &GraspRecord) -> &[Array3<f32>] {
        let size = self.size;
        self.map
            .entry(grasp.grasp_id.clone())
            .or_insert_with(|| {
                grasp
                    .frames
                    .iter()
                    .map(|f| resize_frame(&f.pixels, size))
                    .collect()
            })
    }
}

/// Epoch-keyed augmentation request for [`build_batch`].
#[derive(Clone, Copy)]
pub struct AugmentPlan<'a> {
    pub cfg: &'a AugmentConfig,
    pub base_seed: u64,
    pub epoch: usize,
}

/// Assembles a model-ready batch: frames resized (and optionally
/// augmented), force scaled by the stop threshold, width by each grasp's
/// initial width, estimates and targets log-normalized.
pub fn build_batch<F: Real>(
    catalog: &Catalog,
    ids: &[String],
    strategy: InputStrategy,
    bounds: &ModulusBounds,
    cache: &mut FrameCache,
    augment: Option<AugmentPlan>,
) -> Result<GraspBatch<F>> {
    if ids.is_empty() {
        return Err(CoreError::LengthMismatch("empty batch".into()));
    }
    let b = ids.len();
    let s = cache.size;
    let mut frames = [
        ArrayD::<F>::zeros(IxDyn(&[b, 3, s, s])),
        ArrayD::<F>::zeros(IxDyn(&[b, 3, s, s])),
        ArrayD::<F>::zeros(IxDyn(&[b, 3, s, s])),
    ];
    let mut force = Array2::<F>::zeros((b, 3));
    let mut width = Array2::<F>::zeros((b, 3));
    let mut estimates = strategy
        .includes_estimates()
        .then(|| Array2::<F>::zeros((b, 2)));
    let mut targets = Array2::<F>::zeros((b, 1));

    for (row, id) in ids.iter().enumerate() {
        let grasp = catalog
            .grasp(id)
            .ok_or_else(|| CoreError::UnknownKey(id.clone()))?;
        let resized = cache.frames(grasp);
        let prepared: Vec<Array3<f32>> = match augment {
            Some(plan) => augment_grasp_frames(resized, plan.cfg, plan.base_seed, plan.epoch, id),
            None => resized.to_vec(),
        };
        for (t, pix) in prepared.iter().enumerate() {
            for y in 0..s {
                for x in 0..s {
                    for c in 0..3 {
                        frames[t][[row, c, y, x]] = F::from_f64(pix[(y, x, c)] as f64);
                    }
                }
            }
        }
        let f3 = GraspRecord::at_frame_times(&grasp.force_n);
        let w3 = GraspRecord::at_frame_times(&grasp.width_m);
        let w0 = grasp.width_m[0];
        for t in 0..3 {
            force[(row, t)] = F::from_f64(f3[t] / FORCE_STOP_N);
            width[(row, t)] = F::from_f64(w3[t] / w0);
        }
        if let Some(est) = estimates.as_mut() {
            let available = grasp.estimates.as_ref().ok_or_else(|| {
                CoreError::StrategyMismatch {
                    strategy: strategy.as_str().into(),
                    details: format!("grasp {id} has no analytical estimates"),
                }
            })?;
            est[(row, 0)] = F::from_f64(normalize_young(available.e_elastic_pa, bounds)?);
            est[(row, 1)] = F::from_f64(normalize_young(available.e_hertz_pa, bounds)?);
        }
        let truth = catalog.object_of(grasp).young_modulus_pa;
        targets[(row, 0)] = F::from_f64(normalize_young(truth, bounds)?);
    }

    Ok(GraspBatch {
        grasp_ids: ids.to_vec(),
        frames,
        force,
        width,
        estimates,
        targets,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_n_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_n_mse: f64,
    pub history: Vec<EpochStats>,
}

fn predict_ids<F: Real>(
    model: &Model<F>,
    catalog: &Catalog,
    ids: &[String],
    bounds: &ModulusBounds,
    cache: &mut FrameCache,
    batch_size: usize,
    augment: Option<AugmentPlan>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut preds = Vec::with_capacity(ids.len());
    let mut truths = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size) {
        let batch = build_batch::<F>(
            catalog,
            chunk,
            model.config().strategy,
            bounds,
            cache,
            augment,
        )?;
        preds.extend(model.predict(&batch)?);
        truths.extend(batch.targets.iter().map(|t| t.as_f64()));
    }
    Ok((preds, truths))
}

/// Trains one model from one seed. Returns the model restored to its
/// best-validation parameters together with the training trace.
pub fn train_single<F: Real>(
    catalog: &Catalog,
    split: &SplitSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    run_seed: u64,
) -> Result<(Model<F>, TrainOutcome)> {
    train_cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(CoreError::Config(
            "training requires nonempty train and validation splits".into(),
        ));
    }
    let mut model = Model::<F>::new(model_cfg, run_seed)?;
    let mut cache = FrameCache::new(model_cfg.image_size);
    let adam = AdamConfig::with_lr(train_cfg.learning_rate);
    let loss_cfg = LossConfig {
        l2_lambda: model_cfg.l2_lambda,
    };

    let train_ids: Vec<String> = match train_cfg.sampling {
        SamplingMode::Random => split.train.clone(),
        SamplingMode::Balanced => balance(
            &split.train,
            catalog,
            &train_cfg.balance,
            seed::mix(run_seed, &["train-balance"]),
        ),
    };

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = model.store().snapshot();
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..train_cfg.epochs {
        epochs_run = epoch + 1;
        let mut ids = train_ids.clone();
        let mut shuffle_rng = seed::stream(run_seed, &["epoch-shuffle", &epoch.to_string()]);
        ids.shuffle(&mut shuffle_rng);

        let plan = train_cfg.augment.as_ref().map(|cfg| AugmentPlan {
            cfg,
            base_seed: run_seed,
            epoch,
        });

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in ids.chunks(train_cfg.batch_size) {
            let batch = build_batch::<F>(
                catalog,
                chunk,
                model_cfg.strategy,
                &train_cfg.bounds,
                &mut cache,
                plan,
            )?;
            let pred = model.forward(&batch)?;
            let target = batch.targets.clone().into_dyn();
            let loss = mse_l2(&pred, &target, model.store(), &loss_cfg)?;
            let loss_value = loss.value().sum().as_f64();
            if !loss_value.is_finite() {
                return Err(CoreError::DivergedTraining(format!(
                    "epoch {epoch}: train loss {loss_value}"
                )));
            }
            loss.backward();
            model.store_mut().adam_step(&adam)?;
            model.store_mut().zero_grads();
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;

        let (val_preds, val_truths) = predict_ids(
            &model,
            catalog,
            &split.validation,
            &train_cfg.bounds,
            &mut cache,
            train_cfg.batch_size,
            plan,
        )?;
        let val_n_mse = metrics::n_mse(&val_preds, &val_truths)?;
        if !val_n_mse.is_finite() {
            return Err(CoreError::DivergedTraining(format!(
                "epoch {epoch}: validation error {val_n_mse}"
            )));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_n_mse,
        });

        if val_n_mse < best_val {
            best_val = val_n_mse;
            best_epoch = epoch;
            best_snap = model.store().snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_cfg.patience {
                break;
            }
        }
    }

    model.store_mut().restore(&best_snap)?;
    Ok((
        model,
        TrainOutcome {
            epochs_run,
            best_epoch,
            best_val_n_mse: best_val,
            history,
        },
    ))
}

/// Test-set evaluation; `accuracy` is computed on pascals, the error
/// metrics on the normalized scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub rows: Vec<PredictionRow>,
    pub accuracy: f64,
    pub n_mse: f64,
    pub r_squared: f64,
}

pub fn evaluate<F: Real>(
    model: &Model<F>,
    catalog: &Catalog,
    ids: &[String],
    bounds: &ModulusBounds,
    batch_size: usize,
) -> Result<EvalResult> {
    let mut cache = FrameCache::new(model.config().image_size);
    let (preds_norm, truths_norm) = predict_ids(
        model,
        catalog,
        ids,
        bounds,
        &mut cache,
        batch_size.max(1),
        None,
    )?;
    let mut rows = Vec::with_capacity(ids.len());
    let mut preds_pa = Vec::with_capacity(ids.len());
    let mut truths_pa = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let grasp = catalog
            .grasp(id)
            .ok_or_else(|| CoreError::UnknownKey(id.clone()))?;
        let meta = catalog.object_of(grasp);
        let pred_pa = denormalize_young(preds_norm[i], bounds);
        rows.push(PredictionRow {
            grasp_id: id.clone(),
            truth_pa: meta.young_modulus_pa,
            pred_pa,
            material: meta.material,
            shape: meta.shape,
            se: PredictionRow::squared_error(pred_pa, meta.young_modulus_pa, bounds)?,
        });
        preds_pa.push(pred_pa);
        truths_pa.push(meta.young_modulus_pa);
    }
    let accuracy = metrics::log10_accuracy(&preds_pa, &truths_pa)?;
    let n_mse = metrics::n_mse(&preds_norm, &truths_norm)?;
    let r_squared = metrics::r_squared(&preds_norm, &truths_norm)?;
    Ok(EvalResult {
        rows,
        accuracy,
        n_mse,
        r_squared,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub eval: EvalResult,
    #[serde(skip)]
    pub checkpoint: Vec<u8>,
}

/// Every run from a multi-seed experiment, with per-seed failures kept
/// alongside the successes instead of aborting the whole experiment.
#[derive(Debug, Clone)]
pub struct MultiSeedOutcome {
    pub runs: Vec<SeedOutcome>,
    pub failures: Vec<SeedFailure>,
}

/// Trains and evaluates one model per seed, in parallel; results come
/// back in the given seed order regardless of scheduling. Errs only
/// when every seed fails.
pub fn run_seeds(
    catalog: &Catalog,
    split: &SplitSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<MultiSeedOutcome> {
    if seeds.is_empty() {
        return Err(CoreError::Config("at least one seed required".into()));
    }
    let results: Vec<(u64, Result<SeedOutcome>)> = seeds
        .par_iter()
        .map(|&run_seed| {
            let res = (|| {
                let (model, outcome) =
                    train_single::<f32>(catalog, split, model_cfg, train_cfg, run_seed)?;
                let eval = evaluate(
                    &model,
                    catalog,
                    &split.test,
                    &train_cfg.bounds,
                    train_cfg.batch_size,
                )?;
                let checkpoint = modsense_nn::checkpoint::to_bytes(model.store());
                Ok(SeedOutcome {
                    seed: run_seed,
                    outcome,
                    eval,
                    checkpoint,
                })
            })();
            (run_seed, res)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for (run_seed, res) in results {
        match res {
            Ok(o) => runs.push(o),
            Err(e) => {
                failures.push(SeedFailure {
                    seed: run_seed,
                    error: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    match (runs.is_empty(), first_err) {
        (true, Some(e)) => Err(e),
        _ => Ok(MultiSeedOutcome { runs, failures }),
    }
}
