//! Evaluation harness: how much sensitive information is left in the
//! embeddings, and at what cost to label accuracy.

mod metrics;
mod probe;

pub use metrics::{discrimination, discrimination_prob, pad_from_error, proxy_a_distance, proxy_a_distance_z};
pub use probe::{LinearProbe, NonlinearProbe, NONLINEAR_HIDDEN};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Split, TabularDataset};
use crate::model::{embed, predict, ModelError, SampleMode, VfaeModel};
use crate::seeds::{derive_seed, SeedDomain};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("no rows to evaluate")]
    EmptyInput,
    #[error("probe training data has a single class")]
    SingleClass,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("expected binary values: {0}")]
    NotBinary(String),
    #[error("probe training failed: {0}")]
    ProbeTraining(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where an embedding set came from; carried through every report so no
/// metric is ever unattributable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub mode: SampleMode,
    pub seed: u64,
}

/// Sampled z₁ rows with aligned s (and, where known, y) labels: the unit
/// every metric operates on.
pub struct EmbeddingSet {
    pub z: Tensor,
    pub s: Vec<usize>,
    pub y: Option<Vec<usize>>,
    pub provenance: Provenance,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Row indices belonging to sensitive group `k`.
    pub fn group(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.s[i] == k).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    S,
    Y,
}

/// One probe's scorecard on held-out embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub target: ProbeTarget,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Majority-class share of the same test split.
    pub chance: f64,
}

/// Fit a linear probe for the given target on an embedding set.
pub fn fit_linear_probe(
    train: &EmbeddingSet,
    target: ProbeTarget,
) -> Result<LinearProbe, EvalError> {
    LinearProbe::fit(&train.z, &target_labels(train, target)?)
}

/// Fit the nonlinear (one-hidden-layer perceptron) probe; seed-pinned.
pub fn fit_nonlinear_probe(
    train: &EmbeddingSet,
    target: ProbeTarget,
    seed: u64,
) -> Result<NonlinearProbe, EvalError> {
    NonlinearProbe::fit(&train.z, &target_labels(train, target)?, seed)
}

fn target_labels(e: &EmbeddingSet, target: ProbeTarget) -> Result<Vec<usize>, EvalError> {
    match target {
        ProbeTarget::S => Ok(e.s.clone()),
        ProbeTarget::Y => e
            .y
            .clone()
            .ok_or_else(|| EvalError::EmptyGroup("embedding set carries no y labels".into())),
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub seed: u64,
    pub mode: SampleMode,
    pub model_id: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 0, mode: SampleMode::Sample, model_id: "unnamed".into() }
    }
}

/// The full metric set for one model/dataset pair, machine-readable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub test_rows: usize,
    pub probe_s_linear: ProbeReport,
    pub probe_s_nonlinear: ProbeReport,
    pub s_chance: f64,
    /// Appendix-style discrimination of a linear y-probe's predictions
    /// across binary s groups; absent for non-binary s or y.
    pub discrimination: Option<f64>,
    /// Same, over positive-class probabilities.
    pub discrimination_prob: Option<f64>,
    /// Accuracy of the model's own class posterior on labeled test rows.
    pub y_accuracy_model: Option<f64>,
    pub y_chance: f64,
    /// Linear separability of the two sensitive groups in embedding space
    /// (binary s only).
    pub proxy_a_distance: Option<f64>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            out.push_str(&format!("{k:<34} {v}\n"));
        };
        row("model", self.provenance.model_id.clone());
        row("embedding mode", self.provenance.mode.to_string());
        row("test rows", self.test_rows.to_string());
        row(
            "probe-s accuracy (linear)",
            format!("{:.4}  (chance {:.4})", self.probe_s_linear.accuracy, self.s_chance),
        );
        row(
            "probe-s accuracy (nonlinear)",
            format!("{:.4}  (chance {:.4})", self.probe_s_nonlinear.accuracy, self.s_chance),
        );
        match self.discrimination {
            Some(d) => row("discrimination", format!("{d:.4}")),
            None => row("discrimination", "n/a (non-binary)".into()),
        }
        match self.discrimination_prob {
            Some(d) => row("discrimination prob.", format!("{d:.4}")),
            None => row("discrimination prob.", "n/a (non-binary)".into()),
        }
        match self.y_accuracy_model {
            Some(a) => row(
                "y accuracy (model posterior)",
                format!("{a:.4}  (chance {:.4})", self.y_chance),
            ),
            None => row("y accuracy (model posterior)", "n/a (no labeled test rows)".into()),
        }
        match self.proxy_a_distance {
            Some(p) => row("proxy A-distance", format!("{p:.4}")),
            None => row("proxy A-distance", "n/a (non-binary s)".into()),
        }
        out
    }
}

/// Build embeddings for one dataset split.
pub fn embed_split(
    model: &VfaeModel,
    dataset: &TabularDataset,
    split: Split,
    mode: SampleMode,
    seed: u64,
    model_id: &str,
) -> Result<EmbeddingSet, EvalError> {
    let rows = dataset.rows_in(split);
    if rows.is_empty() {
        return Err(EvalError::EmptyGroup(format!("split {split}")));
    }
    let x = dataset.x.take_rows(&rows);
    let s: Vec<usize> = rows.iter().map(|&i| dataset.s[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = embed(model, &x, &s, mode, &mut rng)?;
    let y = if rows.iter().all(|&i| dataset.y[i].is_some()) {
        Some(rows.iter().map(|&i| dataset.y[i].unwrap()).collect())
    } else {
        None
    };
    Ok(EmbeddingSet {
        z,
        s,
        y,
        provenance: Provenance { model_id: model_id.into(), mode, seed },
    })
}

/// The evaluation protocol: embeddings are sampled (train split fits the
/// probes, test split scores them), residual s-information is probed
/// linearly and nonlinearly, discrimination metrics use a fresh linear
/// y-probe, and y-accuracy comes from the model's own class posterior.
pub fn evaluate_model(
    model: &VfaeModel,
    dataset: &TabularDataset,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let train_emb = embed_split(
        model,
        dataset,
        Split::Train,
        cfg.mode,
        derive_seed(cfg.seed, SeedDomain::Eval),
        &cfg.model_id,
    )?;
    let test_emb = embed_split(
        model,
        dataset,
        Split::Test,
        cfg.mode,
        derive_seed(cfg.seed, SeedDomain::Eval) ^ 1,
        &cfg.model_id,
    )?;
    let test_rows = dataset.rows_in(Split::Test);

    // Residual s information.
    let lin_s = fit_linear_probe(&train_emb, ProbeTarget::S)?;
    let lin_preds = lin_s.predict(&test_emb.z);
    let non_s = fit_nonlinear_probe(&train_emb, ProbeTarget::S, cfg.seed)?;
    let non_preds = non_s.predict(&test_emb.z);
    let s_chance = dataset.s_chance(&test_rows);

    let probe_s_linear = ProbeReport {
        kind: ProbeKind::Linear,
        target: ProbeTarget::S,
        accuracy: probe::accuracy_of(&lin_preds, &test_emb.s),
        per_class_accuracy: probe::per_class_accuracy(&lin_preds, &test_emb.s, dataset.s_states),
        chance: s_chance,
    };
    let probe_s_nonlinear = ProbeReport {
        kind: ProbeKind::Nonlinear,
        target: ProbeTarget::S,
        accuracy: probe::accuracy_of(&non_preds, &test_emb.s),
        per_class_accuracy: probe::per_class_accuracy(&non_preds, &test_emb.s, dataset.s_states),
        chance: s_chance,
    };

    // Discrimination metrics from a fresh linear y-probe (trained on
    // labeled train embeddings, applied to every test row).
    let (discrimination_v, discrimination_prob_v) =
        if dataset.s_states == 2 && dataset.y_classes == 2 {
            match labeled_subset(&train_emb, dataset, Split::Train) {
                Some((z_l, y_l)) if distinct(&y_l) => {
                    let y_probe = LinearProbe::fit(&z_l, &y_l)?;
                    let preds = y_probe.predict(&test_emb.z);
                    let proba = y_probe.predict_proba(&test_emb.z);
                    let pos: Vec<f64> = (0..proba.rows()).map(|r| proba.get2(r, 1)).collect();
                    (
                        Some(discrimination(&preds, &test_emb.s)?),
                        Some(discrimination_prob(&pos, &test_emb.s)?),
                    )
                }
                _ => (None, None),
            }
        } else {
            (None, None)
        };

    // Model's own predictive accuracy on labeled test rows.
    let labeled_test: Vec<usize> =
        test_rows.iter().copied().filter(|&i| dataset.y[i].is_some()).collect();
    let y_accuracy_model = if labeled_test.is_empty() {
        None
    } else {
        let x = dataset.x.take_rows(&labeled_test);
        let s: Vec<usize> = labeled_test.iter().map(|&i| dataset.s[i]).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SeedDomain::Eval) ^ 2);
        let probs = predict(model, &x, &s, cfg.mode, &mut rng)?;
        let preds = probe::argmax_rows(&probs);
        let truth: Vec<usize> = labeled_test.iter().map(|&i| dataset.y[i].unwrap()).collect();
        Some(probe::accuracy_of(&preds, &truth))
    };

    let proxy = if dataset.s_states == 2 {
        let g0 = test_emb.group(0);
        let g1 = test_emb.group(1);
        if g0.is_empty() || g1.is_empty() {
            None
        } else {
            Some(proxy_a_distance_z(
                &test_emb.z.take_rows(&g0),
                &test_emb.z.take_rows(&g1),
                derive_seed(cfg.seed, SeedDomain::Eval) ^ 3,
            )?)
        }
    } else {
        None
    };

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: test_emb.provenance.clone(),
        test_rows: test_rows.len(),
        probe_s_linear,
        probe_s_nonlinear,
        s_chance,
        discrimination: discrimination_v,
        discrimination_prob: discrimination_prob_v,
        y_accuracy_model,
        y_chance: dataset.y_chance(&test_rows),
        proxy_a_distance: proxy,
    })
}

fn labeled_subset(
    emb: &EmbeddingSet,
    dataset: &TabularDataset,
    split: Split,
) -> Option<(Tensor, Vec<usize>)> {
    let rows = dataset.rows_in(split);
    debug_assert_eq!(rows.len(), emb.len());
    let keep: Vec<usize> = (0..rows.len()).filter(|&i| dataset.y[rows[i]].is_some()).collect();
    if keep.is_empty() {
        return None;
    }
    let z = emb.z.take_rows(&keep);
    let y = keep.iter().map(|&i| dataset.y[rows[i]].unwrap()).collect();
    Some((z, y))
}

fn distinct(labels: &[usize]) -> bool {
    labels.windows(2).any(|w| w[0] != w[1])
}
