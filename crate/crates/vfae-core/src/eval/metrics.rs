//! Group fairness and domain-distinguishability metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::probe::LinearProbe;
use super::{EmbeddingSet, EvalError};

fn group_means(values: &[f64], s: &[usize]) -> Result<(f64, f64), EvalError> {
    assert_eq!(values.len(), s.len(), "metric inputs misaligned");
    if let Some(bad) = s.iter().find(|&&g| g > 1) {
        return Err(EvalError::NotBinary(format!("s value {bad} (binary metric)")));
    }
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (&v, &g) in values.iter().zip(s) {
        sums[g] += v;
        counts[g] += 1;
    }
    for (g, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(EvalError::EmptyGroup(format!("s={g}")));
        }
    }
    Ok((sums[0] / counts[0] as f64, sums[1] / counts[1] as f64))
}

/// |positive-prediction rate(s=0) − positive-prediction rate(s=1)|.
/// Predictions are binary with class 1 "positive".
pub fn discrimination(preds: &[usize], s: &[usize]) -> Result<f64, EvalError> {
    if let Some(bad) = preds.iter().find(|&&p| p > 1) {
        return Err(EvalError::NotBinary(format!("prediction {bad}")));
    }
    let as_real: Vec<f64> = preds.iter().map(|&p| p as f64).collect();
    let (m0, m1) = group_means(&as_real, s)?;
    Ok((m0 - m1).abs())
}

/// |mean predicted probability(s=0) − mean predicted probability(s=1)|:
/// the informed variant using the positive-class probability per row.
pub fn discrimination_prob(probs: &[f64], s: &[usize]) -> Result<f64, EvalError> {
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::NotBinary(format!("probability {bad} outside [0,1]")));
    }
    let (m0, m1) = group_means(probs, s)?;
    Ok((m0 - m1).abs())
}

/// Proxy A-distance between two embedding sets: label rows by origin, split
/// 50/50 (seeded), fit a linear probe, and map its test error ε to
/// 2(1 − 2ε), clamped at 0 when ε exceeds chance.
pub fn proxy_a_distance(
    source: &EmbeddingSet,
    target: &EmbeddingSet,
    seed: u64,
) -> Result<f64, EvalError> {
    proxy_a_distance_z(&source.z, &target.z, seed)
}

pub fn proxy_a_distance_z(a: &Tensor, b: &Tensor, seed: u64) -> Result<f64, EvalError> {
    if a.cols() != b.cols() {
        return Err(EvalError::DimensionMismatch(format!(
            "source has {} columns, target {}",
            a.cols(),
            b.cols()
        )));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(EvalError::EmptyGroup("proxy A-distance input".into()));
    }
    let n = a.rows() + b.rows();
    let mut z = Vec::with_capacity(n * a.cols());
    z.extend_from_slice(a.data());
    z.extend_from_slice(b.data());
    let z = Tensor::matrix(n, a.cols(), z);
    let labels: Vec<usize> = std::iter::repeat_n(0, a.rows())
        .chain(std::iter::repeat_n(1, b.rows()))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let half = n / 2;
    let (train_rows, test_rows) = order.split_at(half);

    let train_z = z.take_rows(train_rows);
    let train_l: Vec<usize> = train_rows.iter().map(|&r| labels[r]).collect();
    let test_z = z.take_rows(test_rows);
    let test_l: Vec<usize> = test_rows.iter().map(|&r| labels[r]).collect();

    let probe = LinearProbe::fit(&train_z, &train_l)?;
    let eps = 1.0 - probe.accuracy(&test_z, &test_l);
    Ok(pad_from_error(eps))
}

/// PAD(ε) = 2(1 − 2ε), clamped at 0 for ε > ½.
pub fn pad_from_error(eps: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * eps)).max(0.0)
}
