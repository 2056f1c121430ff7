//! Dataset ingestion, deterministic splits, synthetic benchmark generation
//! and embedding export.

mod export;
mod loader;
mod schema;
mod synthetic;

pub use export::{export_embeddings, import_embeddings, read_matrix_csv};
pub use loader::load_csv;
pub use schema::{Schema, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Batch;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("export error: {0}")]
    Export(String),
}

/// Which partition a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (use train|validation|test)")),
        }
    }
}

/// An encoded tabular dataset. The sensitive column never enters the
/// feature matrix; it reaches the model only through concatenation.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub x: Tensor,
    pub s: Vec<usize>,
    pub y: Vec<Option<usize>>,
    pub split: Vec<Split>,
    pub s_states: usize,
    pub y_classes: usize,
    pub feature_names: Vec<String>,
    /// Category value behind each s index.
    pub s_values: Vec<String>,
    /// Category value behind each y index.
    pub y_values: Vec<String>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Materialize the given rows as a model batch.
    pub fn batch_of(&self, rows: &[usize]) -> Batch {
        let x = self.x.take_rows(rows);
        let s = rows.iter().map(|&i| self.s[i]).collect();
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Batch::new(x, s, y)
    }

    /// Majority-class share of s among the given rows.
    pub fn s_chance(&self, rows: &[usize]) -> f64 {
        majority_share(rows.iter().map(|&i| self.s[i]), self.s_states)
    }

    /// Majority-class share of y among the labeled subset of the rows.
    pub fn y_chance(&self, rows: &[usize]) -> f64 {
        majority_share(rows.iter().filter_map(|&i| self.y[i]), self.y_classes)
    }

    /// Map every feature value to 𝕀[value > 0]. Idempotent.
    pub fn binarize(mut self) -> Self {
        for v in self.x.data_mut() {
            *v = if *v > 0.0 { 1.0 } else { 0.0 };
        }
        self
    }

    /// Sanity checks: split is a partition of rows; labels are in range.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.len();
        if self.x.rows() != n || self.y.len() != n || self.split.len() != n {
            return Err(DataError::Schema(format!(
                "misaligned columns: x {} rows, s {}, y {}, split {}",
                self.x.rows(),
                n,
                self.y.len(),
                self.split.len()
            )));
        }
        if let Some(bad) = self.s.iter().find(|&&s| s >= self.s_states) {
            return Err(DataError::Schema(format!("s index {bad} outside 0..{}", self.s_states)));
        }
        if let Some(bad) = self.y.iter().flatten().find(|&&y| y >= self.y_classes) {
            return Err(DataError::Schema(format!("y index {bad} outside 0..{}", self.y_classes)));
        }
        Ok(())
    }
}

pub(crate) fn majority_share(labels: impl Iterator<Item = usize>, classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    let mut total = 0usize;
    for l in labels {
        counts[l] += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    *counts.iter().max().expect("classes >= 1") as f64 / total as f64
}

/// Deterministic split assignment from fractions: a seeded shuffle followed
/// by cumulative-rounding quotas, so the partition is exact.
pub(crate) fn assign_splits(
    n: usize,
    train: f64,
    validation: f64,
    test: f64,
    seed: u64,
) -> Result<Vec<Split>, DataError> {
    let sum = train + validation + test;
    if !(0.999..=1.001).contains(&sum) || train < 0.0 || validation < 0.0 || test < 0.0 {
        return Err(DataError::Split(format!(
            "fractions must be nonnegative and sum to 1, got {train}/{validation}/{test}"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (train * n as f64).round() as usize;
    let n_val = ((train + validation) * n as f64).round() as usize - n_train;
    let mut out = vec![Split::Test; n];
    for (pos, &row) in order.iter().enumerate() {
        out[row] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(out)
}
