//! Dataset schema files (column roles and kinds) and split specifications.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Split};

/// Declares column roles for a CSV dataset. Everything the loader must not
/// guess lives here: which column is the sensitive factor, which the label,
/// which features are categorical, and optional explicit value orderings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub s_column: String,
    pub y_column: String,
    /// Columns to ignore entirely (ids, leakage).
    #[serde(default)]
    pub drop: Vec<String>,
    /// Feature columns to one-hot encode; all others parse as numeric.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Explicit s category order (index = state). Inferred from the train
    /// split when absent.
    #[serde(default)]
    pub s_values: Option<Vec<String>>,
    /// Explicit y category order.
    #[serde(default)]
    pub y_values: Option<Vec<String>>,
    /// Keep only this many encoded feature columns, ranked by train-split
    /// mass (for large count/n-gram matrices).
    #[serde(default)]
    pub max_features: Option<usize>,
}

impl Schema {
    pub fn from_toml_file(path: &Path) -> Result<Self, DataError> {
        let src = std::fs::read_to_string(path)?;
        toml::from_str(&src).map_err(|e| DataError::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes")
    }
}

/// How rows are assigned to train/validation/test.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Seeded random assignment by fractions (must sum to 1).
    Fractions { train: f64, validation: f64, test: f64, seed: u64 },
    /// Explicit row-index list files (one 0-based data-row index per line);
    /// together the files must cover every row exactly once. These take
    /// precedence over seeded fractions so published splits can be reused.
    Files { train: PathBuf, validation: Option<PathBuf>, test: PathBuf },
}

impl SplitSpec {
    pub fn assign(&self, n: usize) -> Result<Vec<Split>, DataError> {
        match self {
            SplitSpec::Fractions { train, validation, test, seed } => {
                super::assign_splits(n, *train, *validation, *test, *seed)
            }
            SplitSpec::Files { train, validation, test } => {
                let mut out: Vec<Option<Split>> = vec![None; n];
                let mut load = |path: &Path, split: Split| -> Result<(), DataError> {
                    for (lineno, line) in std::fs::read_to_string(path)?.lines().enumerate() {
                        let line = line.trim();
                        if line.is_empty() {
                            continue;
                        }
                        let idx: usize = line.parse().map_err(|_| DataError::Split(format!(
                            "{}:{}: bad row index {line:?}",
                            path.display(),
                            lineno + 1
                        )))?;
                        if idx >= n {
                            return Err(DataError::Split(format!(
                                "{}:{}: row index {idx} out of range (dataset has {n} rows)",
                                path.display(),
                                lineno + 1
                            )));
                        }
                        if let Some(prev) = out[idx] {
                            return Err(DataError::Split(format!(
                                "row {idx} assigned to both {prev} and {split}"
                            )));
                        }
                        out[idx] = Some(split);
                    }
                    Ok(())
                };
                load(train, Split::Train)?;
                if let Some(v) = validation {
                    load(v, Split::Validation)?;
                }
                load(test, Split::Test)?;
                out.into_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        s.ok_or_else(|| {
                            DataError::Split(format!("row {i} is in no split file"))
                        })
                    })
                    .collect()
            }
        }
    }
}
