//! Named presets for the five benchmark setups, so per-dataset architecture
//! and penalty scales never live in user memory.

use crate::config::PartialConfig;

pub const PRESET_NAMES: [&str; 5] = ["adult", "german", "health", "amazon", "yaleb"];

pub fn preset(name: &str) -> Option<PartialConfig> {
    let mut p = PartialConfig::default();
    match name {
        // Income prediction; sensitive factor age. Binary features, one
        // hidden layer of 100 everywhere, 50-dimensional latents.
        "adult" => {
            p.hidden_z1_encoder = Some("100".into());
            p.hidden_z2_encoder = Some("100".into());
            p.hidden_z1_decoder = Some("100".into());
            p.hidden_x_decoder = Some("100".into());
            p.z1_dim = Some(50);
            p.z2_dim = Some(50);
            p.likelihood = Some("bernoulli".into());
            p.binarize = Some(true);
            p.alpha = Some(1.0);
        }
        // Small credit dataset; 60 hidden units, 30-dimensional latents.
        "german" => {
            p.hidden_z1_encoder = Some("60".into());
            p.hidden_z2_encoder = Some("60".into());
            p.hidden_z1_decoder = Some("60".into());
            p.hidden_x_decoder = Some("60".into());
            p.z1_dim = Some(30);
            p.z2_dim = Some(30);
            p.likelihood = Some("bernoulli".into());
            p.binarize = Some(true);
            p.alpha = Some(1.0);
        }
        // Hospitalization prediction; 300-unit outer nets, 150-unit inner.
        "health" => {
            p.hidden_z1_encoder = Some("300".into());
            p.hidden_z2_encoder = Some("150".into());
            p.hidden_z1_decoder = Some("150".into());
            p.hidden_x_decoder = Some("300".into());
            p.z1_dim = Some(50);
            p.z2_dim = Some(50);
            p.likelihood = Some("bernoulli".into());
            p.binarize = Some(true);
            p.alpha = Some(1.0);
        }
        // Review sentiment across product domains: count features under a
        // Poisson decoder, half source (labeled) half target (unlabeled)
        // batches. The supervised scale follows 100·(n_l+n_u)/n_l, which is
        // 200 at the default half/half mix; the penalty scale is 100 (times
        // the batch size applied inside the loss).
        "amazon" => {
            p.hidden_z1_encoder = Some("500".into());
            p.hidden_z2_encoder = Some("300".into());
            p.hidden_z1_decoder = Some("300".into());
            p.hidden_x_decoder = Some("500".into());
            p.z1_dim = Some(50);
            p.z2_dim = Some(50);
            p.likelihood = Some("poisson".into());
            p.alpha = Some(200.0);
            p.beta = Some(100.0);
            p.semi_supervised = Some(true);
            p.mix_labeled = Some(0.5);
        }
        // Face identity under five lighting directions: intensities in
        // [0,1] under a sigmoid-mean Gaussian decoder; no validation split.
        "yaleb" => {
            p.hidden_z1_encoder = Some("400".into());
            p.hidden_z2_encoder = Some("100".into());
            p.hidden_z1_decoder = Some("100".into());
            p.hidden_x_decoder = Some("400".into());
            p.z1_dim = Some(50);
            p.z2_dim = Some(50);
            p.likelihood = Some("gaussian_sigmoid_mean".into());
            p.alpha = Some(200.0);
            p.beta = Some(200.0);
            p.train_fraction = Some(0.7);
            p.validation_fraction = Some(0.0);
            p.test_fraction = Some(0.3);
            p.patience = Some(0);
        }
        _ => return None,
    }
    Some(p)
}
