//! The training protocol: Adam over the penalized objective, stratified
//! minibatches, temporal parameter averaging, validation-driven early
//! stopping, and grid selection of the penalty strength.

mod adam;
mod averaging;
mod batching;

pub use adam::{AdamConfig, AdamState};
pub use averaging::AveragedParams;
pub use batching::{make_batches, BatchConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Split, TabularDataset};
use crate::eval::{fit_linear_probe, EvalError, ProbeTarget};
use crate::mmd::{median_heuristic_gamma, RffProjection, RffScaleConvention};
use crate::model::{
    predict, vfae_loss, LossComponents, ModelError, Objective, SampleMode, VfaeModel,
};
use crate::seeds::{derive_seed, SeedDomain};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient ({value}) in parameter {param}")]
    NonFiniteGradient { param: String, value: f64 },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, last_good: Vec<Tensor> },
    #[error("model/dataset mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluation during training failed: {0}")]
    Eval(String),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e.to_string())
    }
}

/// How the MMD kernel bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// γ = 1/(2·median pairwise squared distance), measured once on the z₁
    /// samples of the first minibatch.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub objective: Objective,
    pub learning_rate: f64,
    pub stratify_by_s: bool,
    /// Labeled/unlabeled interleaving ratio for semi-supervised runs.
    pub mix_labeled: Option<f64>,
    /// Temporal averaging decay; averaged parameters serve evaluation.
    pub averaging_decay: f64,
    /// Early-stop patience (epochs without validation improvement); `None`
    /// disables early stopping.
    pub patience: Option<usize>,
    pub bandwidth: BandwidthMode,
    pub rff_features: usize,
    pub rff_convention: RffScaleConvention,
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 100,
            seed: 0,
            objective: Objective::default(),
            learning_rate: 1e-3,
            stratify_by_s: true,
            mix_labeled: None,
            averaging_decay: 0.999,
            patience: Some(10),
            bandwidth: BandwidthMode::Median,
            rff_features: 500,
            rff_convention: RffScaleConvention::Standard,
            check_finite: true,
        }
    }
}

impl TrainConfig {
    fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            batch_size: self.batch_size,
            stratify_by_s: self.stratify_by_s,
            mix_labeled: self.mix_labeled,
        }
    }

    pub fn validate(&self, model: &VfaeModel, dataset: &TabularDataset) -> Vec<String> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be positive".into());
        }
        if self.objective.mmd_active() && self.batch_size < 2 {
            problems.push("batch size must be at least 2 when the MMD penalty is active".into());
        }
        if model.config.x_dim != dataset.x_dim() {
            problems.push(format!(
                "model expects {} features, dataset has {}",
                model.config.x_dim,
                dataset.x_dim()
            ));
        }
        if model.config.s_groups != dataset.s_states {
            problems.push(format!(
                "model expects {} s states, dataset has {}",
                model.config.s_groups, dataset.s_states
            ));
        }
        if model.config.y_classes != dataset.y_classes {
            problems.push(format!(
                "model expects {} classes, dataset has {}",
                model.config.y_classes, dataset.y_classes
            ));
        }
        problems
    }
}

/// One row of the epoch log. Component values are per-row means over the
/// epoch so numbers stay comparable across epochs and datasets; epoch 0 is
/// the untouched model measured on the first batch.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub kl_z2: f64,
    pub kl_y: f64,
    pub classification: f64,
    pub mmd: f64,
    pub val_y_accuracy: Option<f64>,
    pub val_objective: Option<f64>,
}

impl EpochRecord {
    pub fn csv_header() -> &'static str {
        "epoch,total,reconstruction,kl_z2,kl_y,classification,mmd,val_y_accuracy"
    }

    pub fn to_csv_row(&self) -> String {
        let val = match self.val_y_accuracy {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.total,
            self.reconstruction,
            self.kl_z2,
            self.kl_y,
            self.classification,
            self.mmd,
            val
        )
    }
}

pub struct TrainResult {
    /// The trained model holding the final raw parameters.
    pub model: VfaeModel,
    /// Bias-corrected temporal average of the parameters at the last epoch.
    pub final_averaged: Vec<Tensor>,
    /// Averaged parameters at the best-validation epoch (final if no
    /// validation split).
    pub best_averaged: Vec<Tensor>,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Resolved kernel bandwidth, when the penalty was active.
    pub gamma: Option<f64>,
    /// Whether early stopping fired before the epoch budget.
    pub stopped_early: bool,
}

/// Run the full protocol on the train split. Divergence (non-finite loss or
/// gradient) aborts with the last epoch-end parameters inside the error.
pub fn train(
    model: VfaeModel,
    dataset: &TabularDataset,
    config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    let mut model = model;
    let problems = config.validate(&model, dataset);
    if let Some(p) = problems.first() {
        return Err(TrainError::Mismatch(p.clone()));
    }
    config.objective.validate();

    let master = config.seed;
    let batch_cfg = config.batch_config();
    let has_validation = !dataset.rows_in(Split::Validation).is_empty();

    // Resolve the penalty projection before any update.
    let (projection, gamma) = if config.objective.mmd_active() {
        let first_batches =
            make_batches(dataset, Split::Train, &batch_cfg, derive_seed(master, SeedDomain::Epoch(1)));
        let first = first_batches
            .first()
            .ok_or_else(|| TrainError::Mismatch("train split is empty".into()))?;
        let gamma = match config.bandwidth {
            BandwidthMode::Fixed(g) => g,
            BandwidthMode::Median => {
                let batch = dataset.batch_of(first);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, SeedDomain::Projection));
                let z = crate::model::embed(&model, &batch.x, &batch.s, SampleMode::Sample, &mut rng)?;
                median_heuristic_gamma(&z)
            }
        };
        let p = RffProjection::new(
            model.config.z1_dim,
            config.rff_features,
            gamma,
            config.rff_convention,
            derive_seed(master, SeedDomain::Projection),
        );
        (Some(p), Some(gamma))
    } else {
        (None, None)
    };

    let mut adam = AdamState::new(
        &model.params,
        AdamConfig { learning_rate: config.learning_rate, ..Default::default() },
    );
    let mut ema = AveragedParams::new(&model.params, config.averaging_decay);
    let mut log: Vec<EpochRecord> = Vec::with_capacity(config.epochs + 1);

    // Epoch-0 row: the untouched model on the first training batch.
    {
        let batches =
            make_batches(dataset, Split::Train, &batch_cfg, derive_seed(master, SeedDomain::Epoch(1)));
        let batch = dataset.batch_of(&batches[0]);
        let mut tape = Tape::new().with_finite_checks(config.check_finite);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(master, SeedDomain::Noise(noise_tag(1, 0))));
        let out = vfae_loss(&mut tape, &model, &batch, &config.objective, projection.as_ref(), &mut rng)?;
        log.push(record_from(0, &out.components, batch.len(), None, None));
    }

    let mut last_good = model.params.snapshot();
    let mut best: Option<(f64, Vec<Tensor>, usize)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut final_epoch = 0;

    for epoch in 1..=config.epochs {
        final_epoch = epoch;
        let batches =
            make_batches(dataset, Split::Train, &batch_cfg, derive_seed(master, SeedDomain::Epoch(epoch as u64)));
        let mut sums = LossComponents::default();
        let mut rows_seen = 0usize;
        for (b, rows) in batches.iter().enumerate() {
            let batch = dataset.batch_of(rows);
            let mut tape = Tape::new().with_finite_checks(config.check_finite);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                master,
                SeedDomain::Noise(noise_tag(epoch, b)),
            ));
            let out = match vfae_loss(&mut tape, &model, &batch, &config.objective, projection.as_ref(), &mut rng) {
                Ok(out) => out,
                Err(e) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: e.to_string(),
                        last_good,
                    })
                }
            };
            if !out.components.total.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("loss became {}", out.components.total),
                    last_good,
                });
            }
            tape.backward(out.loss, &mut model.params).map_err(ModelError::from)?;
            if let Err(e) = adam.step(&mut model.params) {
                let reason = e.to_string();
                return Err(TrainError::Diverged { epoch, reason, last_good });
            }
            ema.update(&model.params);
            accumulate(&mut sums, &out.components);
            rows_seen += batch.len();
        }

        // Validation pass on the averaged (evaluation) parameters.
        let (val_obj, val_acc) = if has_validation {
            let averaged = ema.snapshot(&model.params);
            let raw = model.params.snapshot();
            model.params.restore(&averaged);
            let vo = validation_objective(&model, dataset, config, projection.as_ref())?;
            let va = validation_accuracy(&model, dataset, master)?;
            model.params.restore(&raw);
            (Some(vo), va)
        } else {
            (None, None)
        };

        log.push(record_from(epoch, &sums, rows_seen, val_acc, val_obj));
        last_good = model.params.snapshot();

        if let Some(vo) = val_obj {
            let improved = best.as_ref().map(|(b, _, _)| vo < *b).unwrap_or(true);
            if improved {
                best = Some((vo, ema.snapshot(&model.params), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if let Some(patience) = config.patience {
                    if since_best >= patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    let final_averaged = ema.snapshot(&model.params);
    let (best_averaged, best_epoch) = match best {
        Some((_, snap, e)) => (snap, e),
        None => (final_averaged.clone(), final_epoch),
    };
    Ok(TrainResult {
        model,
        final_averaged,
        best_averaged,
        best_epoch,
        log,
        gamma,
        stopped_early,
    })
}

fn noise_tag(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 24) | batch as u64
}

fn accumulate(sums: &mut LossComponents, c: &LossComponents) {
    sums.total += c.total;
    sums.reconstruction += c.reconstruction;
    sums.kl_z2 += c.kl_z2;
    sums.kl_y += c.kl_y;
    sums.classification += c.classification;
    sums.mmd += c.mmd;
}

fn record_from(
    epoch: usize,
    sums: &LossComponents,
    rows: usize,
    val_y_accuracy: Option<f64>,
    val_objective: Option<f64>,
) -> EpochRecord {
    let n = rows.max(1) as f64;
    EpochRecord {
        epoch,
        total: sums.total / n,
        reconstruction: sums.reconstruction / n,
        kl_z2: sums.kl_z2 / n,
        kl_y: sums.kl_y / n,
        classification: sums.classification / n,
        mmd: sums.mmd / n,
        val_y_accuracy,
        val_objective,
    }
}

/// Mean per-row objective over the validation split, with a fixed noise
/// seed so epochs are comparable.
fn validation_objective(
    model: &VfaeModel,
    dataset: &TabularDataset,
    config: &TrainConfig,
    projection: Option<&RffProjection>,
) -> Result<f64, TrainError> {
    let rows = dataset.rows_in(Split::Validation);
    let mut total = 0.0;
    for chunk in rows.chunks(config.batch_size.max(2)) {
        let batch = dataset.batch_of(chunk);
        let mut tape = Tape::new().with_finite_checks(config.check_finite);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedDomain::Eval));
        let out = vfae_loss(&mut tape, model, &batch, &config.objective, projection, &mut rng)?;
        total += out.components.total;
    }
    Ok(total / rows.len().max(1) as f64)
}

/// Model-posterior accuracy on labeled validation rows (sample mode).
fn validation_accuracy(
    model: &VfaeModel,
    dataset: &TabularDataset,
    master: u64,
) -> Result<Option<f64>, TrainError> {
    let rows: Vec<usize> = dataset
        .rows_in(Split::Validation)
        .into_iter()
        .filter(|&i| dataset.y[i].is_some())
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let x = dataset.x.take_rows(&rows);
    let s: Vec<usize> = rows.iter().map(|&i| dataset.s[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, SeedDomain::Eval) ^ 0xACC);
    let probs = predict(model, &x, &s, SampleMode::Sample, &mut rng)?;
    let mut hits = 0usize;
    for (r, &i) in rows.iter().enumerate() {
        let row = probs.row(r);
        let mut arg = 0;
        for (c, v) in row.iter().enumerate() {
            if *v > row[arg] {
                arg = c;
            }
        }
        if arg == dataset.y[i].unwrap() {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / rows.len() as f64))
}

/// One grid point's scorecard from the penalty-strength search.
#[derive(Debug, Clone, Serialize)]
pub struct BetaReport {
    pub beta: f64,
    pub val_y_accuracy: f64,
    pub probe_s_accuracy: f64,
    pub s_chance: f64,
    /// val-y-accuracy − max(0, probe-s-accuracy − chance); higher is better.
    pub score: f64,
    pub best_epoch: usize,
}

/// Train one model per grid point and pick the β with the best composite
/// validation score. The full per-β table is returned so other criteria can
/// be applied downstream.
pub fn select_beta(
    model_config: &crate::model::ModelConfig,
    dataset: &TabularDataset,
    grid: &[f64],
    config: &TrainConfig,
    workers: usize,
) -> Result<(f64, Vec<BetaReport>), TrainError> {
    assert!(!grid.is_empty(), "select_beta: empty grid");
    let run_one = |idx: usize| -> Result<BetaReport, TrainError> {
        let beta = grid[idx];
        let seed = derive_seed(config.seed, SeedDomain::BetaGrid(idx as u64));
        let mut cfg = config.clone();
        cfg.seed = seed;
        cfg.objective.beta = beta;
        cfg.objective.use_mmd = beta > 0.0;
        let model = VfaeModel::new(model_config.clone(), seed);
        let result = train(model, dataset, &cfg)?;

        let mut model = result.model;
        model.params.restore(&result.best_averaged);

        let train_emb = crate::eval::embed_split(
            &model,
            dataset,
            Split::Train,
            SampleMode::Sample,
            derive_seed(seed, SeedDomain::Eval),
            &format!("beta-{beta}"),
        )?;
        let val_emb = crate::eval::embed_split(
            &model,
            dataset,
            Split::Validation,
            SampleMode::Sample,
            derive_seed(seed, SeedDomain::Eval) ^ 1,
            &format!("beta-{beta}"),
        )?;
        let probe = fit_linear_probe(&train_emb, ProbeTarget::S)?;
        let mut hits = 0usize;
        for (p, t) in probe.predict(&val_emb.z).iter().zip(&val_emb.s) {
            hits += (p == t) as usize;
        }
        let probe_s_accuracy = hits as f64 / val_emb.len() as f64;
        let val_rows = dataset.rows_in(Split::Validation);
        let s_chance = dataset.s_chance(&val_rows);
        let val_y_accuracy =
            validation_accuracy(&model, dataset, seed)?.unwrap_or(0.0);
        let score = val_y_accuracy - (probe_s_accuracy - s_chance).max(0.0);
        Ok(BetaReport {
            beta,
            val_y_accuracy,
            probe_s_accuracy,
            s_chance,
            score,
            best_epoch: result.best_epoch,
        })
    };

    let reports: Vec<BetaReport> = if workers <= 1 || grid.len() == 1 {
        grid.iter().enumerate().map(|(i, _)| run_one(i)).collect::<Result<_, _>>()?
    } else {
        std::thread::scope(|scope| {
            let run_one = &run_one;
            let handles: Vec<_> = (0..grid.len())
                .map(|i| scope.spawn(move || run_one(i)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("beta-grid worker panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?
    };

    let best = reports
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.score
                .partial_cmp(&b.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia)) // ties break toward the earlier grid point
        })
        .map(|(_, r)| r.beta)
        .expect("nonempty grid");
    Ok((best, reports))
}
