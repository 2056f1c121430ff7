//! Prediction and embedding on trained models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::sample_reparam;
use crate::tensor::{Tape, Tensor};

use super::{ModelError, VfaeModel};

/// How z₁ is drawn when predicting or embedding. `Sample` matches the
/// training objective (the extra noise also helps invariance); `Mean` uses
/// the posterior mean deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Sample,
    Mean,
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleMode::Sample => write!(f, "sample"),
            SampleMode::Mean => write!(f, "mean"),
        }
    }
}

impl std::str::FromStr for SampleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sample" => Ok(SampleMode::Sample),
            "mean" => Ok(SampleMode::Mean),
            other => Err(format!("unknown sample mode {other:?} (use sample|mean)")),
        }
    }
}

/// Class probabilities q(y|z₁) per row, with z₁ drawn per `mode`.
pub fn predict(
    model: &VfaeModel,
    x: &Tensor,
    s: &[usize],
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let z1 = encode_with_mode(&mut tape, model, x, s, mode, rng);
    let q_y = model.classify(&mut tape, z1);
    let probs = q_y.probs(&mut tape);
    tape.healthy()?;
    Ok(tape.value(probs).clone())
}

/// z₁ rows for downstream evaluation and export.
pub fn embed(
    model: &VfaeModel,
    x: &Tensor,
    s: &[usize],
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let z1 = encode_with_mode(&mut tape, model, x, s, mode, rng);
    tape.healthy()?;
    Ok(tape.value(z1).clone())
}

fn encode_with_mode(
    tape: &mut Tape,
    model: &VfaeModel,
    x: &Tensor,
    s: &[usize],
    mode: SampleMode,
    rng: &mut impl Rng,
) -> crate::tensor::Var {
    let q = model.encode_z1(tape, x, s);
    match mode {
        SampleMode::Sample => sample_reparam(tape, &q, rng),
        SampleMode::Mean => q.mu,
    }
}
