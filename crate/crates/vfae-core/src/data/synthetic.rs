//! Synthetic benchmark generator with controlled s–y correlation and a
//! known injection of the sensitive factor into the features.
//!
//! x = z·A + shift(s) + noise, y from class directions over z, s coupled to
//! y by the declared correlation. Ground-truth latents are returned for
//! diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{assign_splits, TabularDataset};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub latent_dim: usize,
    pub x_dim: usize,
    pub s_groups: usize,
    pub y_classes: usize,
    /// Pearson correlation between s and y (exact for the binary/binary
    /// case, approximate coupling strength otherwise). In [−1, 1].
    pub s_y_correlation: f64,
    /// Per-coordinate magnitude of the per-group feature shift (each group
    /// gets a random sign pattern scaled by this).
    pub shift_scale: f64,
    /// Standard deviation of the additive feature noise.
    pub noise_scale: f64,
    /// Probability of flipping the recorded label, bounding attainable
    /// y-accuracy away from 1.
    pub label_noise: f64,
    /// Fraction of rows whose label is withheld (mask only, never a class).
    pub unlabeled_fraction: f64,
    /// Explicit per-group shift vectors (x_dim each); random unit directions
    /// scaled by `shift_scale` when absent.
    pub shifts: Option<Vec<Vec<f64>>>,
    /// Explicit per-class latent directions; random unit vectors otherwise.
    pub directions: Option<Vec<Vec<f64>>>,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 1000,
            latent_dim: 4,
            x_dim: 10,
            s_groups: 2,
            y_classes: 2,
            s_y_correlation: 0.0,
            shift_scale: 1.0,
            noise_scale: 0.5,
            label_noise: 0.0,
            unlabeled_fraction: 0.0,
            shifts: None,
            directions: None,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub dataset: TabularDataset,
    /// Ground-truth latent rows the features were generated from.
    pub latents: Tensor,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.n >= 1, "sample count must be at least 1");
    assert!(
        (-1.0..=1.0).contains(&spec.s_y_correlation),
        "correlation must be in [-1, 1], got {}",
        spec.s_y_correlation
    );
    assert!(spec.s_groups >= 2 && spec.y_classes >= 1, "need >=2 groups and >=1 class");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let latent_scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let mixing = Tensor::matrix(
        spec.latent_dim,
        spec.x_dim,
        (0..spec.latent_dim * spec.x_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * latent_scale)
            .collect(),
    );
    let directions: Vec<Vec<f64>> = match &spec.directions {
        Some(d) => {
            assert_eq!(d.len(), spec.y_classes, "one direction per class");
            d.clone()
        }
        None => (0..spec.y_classes).map(|_| unit_vector(&mut rng, spec.latent_dim)).collect(),
    };
    let shifts: Vec<Vec<f64>> = match &spec.shifts {
        Some(s) => {
            assert_eq!(s.len(), spec.s_groups, "one shift per group");
            s.clone()
        }
        None => (0..spec.s_groups)
            .map(|_| {
                (0..spec.x_dim)
                    .map(|_| {
                        let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                        sign * spec.shift_scale
                    })
                    .collect()
            })
            .collect(),
    };

    let mut latents = Vec::with_capacity(spec.n * spec.latent_dim);
    let mut x = Vec::with_capacity(spec.n * spec.x_dim);
    let mut s_labels = Vec::with_capacity(spec.n);
    let mut y_labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z: Vec<f64> = (0..spec.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut y = argmax_direction(&z, &directions);
        if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            // Re-draw uniformly among the other classes.
            if spec.y_classes > 1 {
                let offset = rng.random_range(1..spec.y_classes);
                y = (y + offset) % spec.y_classes;
            }
        }
        let s = couple_s_to_y(y, spec.s_groups, spec.s_y_correlation, &mut rng);

        for j in 0..spec.x_dim {
            let mut v = shifts[s][j] + spec.noise_scale * rng.sample::<f64, _>(StandardNormal);
            for (k, zk) in z.iter().enumerate() {
                v += zk * mixing.get2(k, j);
            }
            x.push(v);
        }
        latents.extend(z);
        s_labels.push(s);
        y_labels.push(y);
    }

    let y: Vec<Option<usize>> = y_labels
        .into_iter()
        .map(|y| {
            if spec.unlabeled_fraction > 0.0 && rng.random::<f64>() < spec.unlabeled_fraction {
                None
            } else {
                Some(y)
            }
        })
        .collect();

    let test_fraction = 1.0 - spec.train_fraction - spec.validation_fraction;
    let split = assign_splits(
        spec.n,
        spec.train_fraction,
        spec.validation_fraction,
        test_fraction,
        crate::seeds::derive_seed(spec.seed, crate::seeds::SeedDomain::Split),
    )
    .expect("fractions validated by construction");

    let dataset = TabularDataset {
        x: Tensor::matrix(spec.n, spec.x_dim, x),
        s: s_labels,
        y,
        split,
        s_states: spec.s_groups,
        y_classes: spec.y_classes.max(2),
        feature_names: (0..spec.x_dim).map(|i| format!("x_{i}")).collect(),
        s_values: (0..spec.s_groups).map(|i| format!("s{i}")).collect(),
        y_values: (0..spec.y_classes.max(2)).map(|i| format!("y{i}")).collect(),
    };
    SyntheticData { dataset, latents: Tensor::matrix(spec.n, spec.latent_dim, latents) }
}

/// Binary case: s = y with probability (1+r)/2, which yields Pearson
/// correlation exactly r for balanced y. Multi-group: s = y mod K with
/// probability |r|, else uniform.
fn couple_s_to_y(y: usize, groups: usize, r: f64, rng: &mut ChaCha8Rng) -> usize {
    if groups == 2 {
        let y2 = y % 2;
        if rng.random::<f64>() < (1.0 + r) / 2.0 {
            y2
        } else {
            1 - y2
        }
    } else if rng.random::<f64>() < r.abs() {
        y % groups
    } else {
        rng.random_range(0..groups)
    }
}

fn argmax_direction(z: &[f64], directions: &[Vec<f64>]) -> usize {
    if directions.len() == 1 {
        return 0;
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (c, d) in directions.iter().enumerate() {
        let v: f64 = d.iter().zip(z).map(|(a, b)| a * b).sum();
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}
