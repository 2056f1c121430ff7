//! Minibatch composition: per-epoch permutations, s-stratified quotas, and
//! labeled/unlabeled interleaving for the semi-supervised protocol.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Split, TabularDataset};

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub batch_size: usize,
    /// Keep every batch's s-group proportions within one row of the
    /// dataset's, so the MMD penalty always sees populated groups.
    pub stratify_by_s: bool,
    /// Interleave labeled and unlabeled rows; `Some(r)` aims for an
    /// r-fraction of labeled rows per batch. Every row is still used exactly
    /// once per epoch, so imbalanced streams bend the realized ratio.
    pub mix_labeled: Option<f64>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { batch_size: 100, stratify_by_s: true, mix_labeled: None }
    }
}

/// Row-index batches for one epoch over the given split: a fresh seeded
/// permutation each epoch, quotas by cumulative rounding so the batches
/// partition the split exactly.
pub fn make_batches(
    dataset: &TabularDataset,
    split: Split,
    config: &BatchConfig,
    epoch_seed: u64,
) -> Vec<Vec<usize>> {
    assert!(config.batch_size >= 1, "batch size must be at least 1");
    let rows = dataset.rows_in(split);
    if rows.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);

    let streams: Vec<Vec<usize>> = if let Some(ratio) = config.mix_labeled {
        assert!((0.0..=1.0).contains(&ratio), "mix ratio must be in [0,1], got {ratio}");
        let labeled: Vec<usize> = rows.iter().copied().filter(|&i| dataset.y[i].is_some()).collect();
        let unlabeled: Vec<usize> = rows.iter().copied().filter(|&i| dataset.y[i].is_none()).collect();
        vec![labeled, unlabeled]
    } else {
        vec![rows.clone()]
    };

    // Sub-streams for stratification: split each stream by s-group.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for stream in streams {
        if config.stratify_by_s {
            for k in 0..dataset.s_states {
                let g: Vec<usize> = stream.iter().copied().filter(|&i| dataset.s[i] == k).collect();
                if !g.is_empty() {
                    groups.push(g);
                }
            }
        } else if !stream.is_empty() {
            groups.push(stream);
        }
    }
    for g in groups.iter_mut() {
        g.shuffle(&mut rng);
    }

    let total = rows.len();
    let n_batches = total.div_ceil(config.batch_size);
    let mut batches: Vec<Vec<usize>> = vec![Vec::new(); n_batches];
    for g in &groups {
        // Batch b receives rows [⌊b·|g|/B⌋, ⌊(b+1)·|g|/B⌋): each batch gets
        // ⌊|g|/B⌋ or ⌈|g|/B⌉ rows and the whole group is used exactly once.
        for b in 0..n_batches {
            let lo = b * g.len() / n_batches;
            let hi = (b + 1) * g.len() / n_batches;
            batches[b].extend_from_slice(&g[lo..hi]);
        }
    }
    for b in batches.iter_mut() {
        b.shuffle(&mut rng);
    }
    batches.retain(|b| !b.is_empty());
    batches
}
