//! Layered run configuration: defaults, then preset, then config file, then
//! explicit flags. Every resolved value remembers which layer set it, and
//! the whole resolution is written into the run directory before anything
//! else happens.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vfae_core::data::{Schema, SplitSpec};
use vfae_core::distributions::LikelihoodKind;
use vfae_core::mmd::RffScaleConvention;
use vfae_core::model::{Activation, ModelConfig, Objective};
use vfae_core::train::{BandwidthMode, TrainConfig};

/// Declares every config key once; expands to the optional layer struct,
/// the resolved struct, and the source-tracking resolution.
macro_rules! config_keys {
    ($(($name:ident, $ty:ty, $default:expr)),* $(,)?) => {
        /// One layer of configuration; unset keys defer to lower layers.
        #[derive(Debug, Clone, Default, serde::Deserialize, serde::Serialize)]
        #[serde(deny_unknown_fields)]
        pub struct PartialConfig {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $name: Option<$ty>,
            )*
        }

        /// Fully resolved configuration plus the source of every value.
        #[derive(Debug, Clone)]
        pub struct RunConfig {
            $(pub $name: $ty,)*
            pub sources: BTreeMap<String, String>,
        }

        impl RunConfig {
            /// Later layers win; absent keys fall back to built-in defaults.
            pub fn resolve(layers: &[(&str, &PartialConfig)]) -> RunConfig {
                let mut sources = BTreeMap::new();
                $(
                    let mut value: $ty = $default;
                    let mut source = "default".to_string();
                    for (layer_name, layer) in layers {
                        if let Some(v) = &layer.$name {
                            value = v.clone();
                            source = layer_name.to_string();
                        }
                    }
                    let $name = value;
                    sources.insert(stringify!($name).to_string(), source);
                )*
                RunConfig { $($name,)* sources }
            }

            /// The resolved key/value text written into the run directory,
            /// with one source comment per key.
            pub fn to_annotated_toml(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(&format!(
                        "{} = {}  # from: {}\n",
                        stringify!($name),
                        toml_value(&self.$name),
                        self.sources[stringify!($name)]
                    ));
                )*
                out
            }
        }
    };
}

fn toml_value<T: serde::Serialize>(v: &T) -> String {
    #[derive(serde::Serialize)]
    struct Wrap<'a, T: serde::Serialize> {
        v: &'a T,
    }
    let s = toml::to_string(&Wrap { v }).expect("config value serializes");
    s.trim_start_matches("v = ").trim().to_string()
}

config_keys![
    // Data
    (data, String, String::new()),
    (schema, String, String::new()),
    (out, String, String::new()),
    (binarize, bool, false),
    (train_fraction, f64, 0.7),
    (validation_fraction, f64, 0.15),
    (test_fraction, f64, 0.15),
    (split_train, String, String::new()),
    (split_validation, String, String::new()),
    (split_test, String, String::new()),
    // Architecture
    (z1_dim, usize, 50),
    (z2_dim, usize, 50),
    (hidden_z1_encoder, String, "100".to_string()),
    (hidden_z2_encoder, String, "100".to_string()),
    (hidden_z1_decoder, String, "100".to_string()),
    (hidden_x_decoder, String, "100".to_string()),
    (likelihood, String, "bernoulli".to_string()),
    (activation, String, "softplus".to_string()),
    (use_s, bool, true),
    // Objective
    (alpha, f64, 1.0),
    (beta, f64, 1.0),
    (use_mmd, bool, true),
    (single_stage, bool, false),
    // Penalty estimator
    (gamma, String, "median".to_string()),
    (rff_features, usize, 500),
    (rff_scale_convention, String, "standard".to_string()),
    // Training protocol
    (epochs, usize, 100),
    (batch_size, usize, 100),
    (learning_rate, f64, 1e-3),
    (stratify_by_s, bool, true),
    (semi_supervised, bool, false),
    (mix_labeled, f64, 0.5),
    (averaging_decay, f64, 0.999),
    (patience, usize, 10),
    (seed, u64, 0),
    // Search
    (beta_grid, String, "0,1,10,100".to_string()),
    (workers, usize, 1),
];

impl PartialConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, String> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&src).map_err(|e| format!("config {}: {e}", path.display()))
    }
}

impl RunConfig {
    /// All validation problems at once, never just the first.
    pub fn validation_problems(&self, need_data: bool) -> Vec<String> {
        let mut problems = Vec::new();
        if need_data {
            if self.data.is_empty() {
                problems.push("no dataset given (set `data` or --data)".into());
            }
            if self.schema.is_empty() {
                problems.push("no schema given (set `schema` or --schema)".into());
            }
        }
        if self.likelihood_kind().is_none() {
            problems.push(format!(
                "unknown likelihood {:?} (use bernoulli|poisson|gaussian_sigmoid_mean)",
                self.likelihood
            ));
        }
        if self.activation_kind().is_none() {
            problems.push(format!(
                "unknown activation {:?} (use softplus|tanh|relu|sigmoid)",
                self.activation
            ));
        }
        if self.convention().is_none() {
            problems.push(format!(
                "unknown rff_scale_convention {:?} (use standard|paper)",
                self.rff_scale_convention
            ));
        }
        if self.bandwidth().is_none() {
            problems.push(format!(
                "gamma must be `median` or a positive number, got {:?}",
                self.gamma
            ));
        }
        if self.alpha < 0.0 {
            problems.push("alpha must be nonnegative".into());
        }
        if self.beta < 0.0 {
            problems.push("beta must be nonnegative".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be positive".into());
        }
        if self.batch_size < 2 && self.use_mmd && self.beta > 0.0 {
            problems.push("batch_size must be at least 2 with the MMD penalty active".into());
        }
        if !(0.0..=1.0).contains(&self.mix_labeled) {
            problems.push("mix_labeled must be in [0, 1]".into());
        }
        let fsum = self.train_fraction + self.validation_fraction + self.test_fraction;
        let uses_files = !self.split_train.is_empty();
        if !uses_files && !(0.999..=1.001).contains(&fsum) {
            problems.push(format!("split fractions sum to {fsum}, expected 1"));
        }
        for h in [
            &self.hidden_z1_encoder,
            &self.hidden_z2_encoder,
            &self.hidden_z1_decoder,
            &self.hidden_x_decoder,
        ] {
            if parse_hidden(h).is_none() {
                problems.push(format!("bad hidden layer list {h:?} (comma-separated sizes)"));
            }
        }
        problems
    }

    pub fn likelihood_kind(&self) -> Option<LikelihoodKind> {
        match self.likelihood.as_str() {
            "bernoulli" => Some(LikelihoodKind::Bernoulli),
            "poisson" => Some(LikelihoodKind::Poisson),
            "gaussian_sigmoid_mean" | "gaussian" => Some(LikelihoodKind::GaussianSigmoidMean),
            _ => None,
        }
    }

    pub fn activation_kind(&self) -> Option<Activation> {
        match self.activation.as_str() {
            "softplus" => Some(Activation::Softplus),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn convention(&self) -> Option<RffScaleConvention> {
        match self.rff_scale_convention.as_str() {
            "standard" => Some(RffScaleConvention::Standard),
            "paper" => Some(RffScaleConvention::Paper),
            _ => None,
        }
    }

    pub fn bandwidth(&self) -> Option<BandwidthMode> {
        if self.gamma == "median" {
            return Some(BandwidthMode::Median);
        }
        match self.gamma.parse::<f64>() {
            Ok(g) if g > 0.0 => Some(BandwidthMode::Fixed(g)),
            _ => None,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        if !self.split_train.is_empty() {
            SplitSpec::Files {
                train: PathBuf::from(&self.split_train),
                validation: if self.split_validation.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(&self.split_validation))
                },
                test: PathBuf::from(&self.split_test),
            }
        } else {
            SplitSpec::Fractions {
                train: self.train_fraction,
                validation: self.validation_fraction,
                test: self.test_fraction,
                seed: vfae_core::seeds::derive_seed(self.seed, vfae_core::seeds::SeedDomain::Split),
            }
        }
    }

    pub fn load_schema(&self) -> Result<Schema, String> {
        Schema::from_toml_file(Path::new(&self.schema)).map_err(|e| e.to_string())
    }

    /// Architecture for a dataset with the given encoded width and label
    /// cardinalities.
    pub fn model_config(&self, x_dim: usize, s_groups: usize, y_classes: usize) -> ModelConfig {
        ModelConfig {
            x_dim,
            s_groups,
            y_classes,
            z1_dim: self.z1_dim,
            z2_dim: self.z2_dim,
            encoder_z1_hidden: parse_hidden(&self.hidden_z1_encoder).expect("validated"),
            encoder_z2_hidden: parse_hidden(&self.hidden_z2_encoder).expect("validated"),
            decoder_z1_hidden: parse_hidden(&self.hidden_z1_decoder).expect("validated"),
            decoder_x_hidden: parse_hidden(&self.hidden_x_decoder).expect("validated"),
            likelihood: self.likelihood_kind().expect("validated"),
            activation: self.activation_kind().expect("validated"),
            use_s: self.use_s,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            alpha: self.alpha,
            beta: self.beta,
            use_mmd: self.use_mmd,
            use_label_stage: !self.single_stage,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            objective: self.objective(),
            learning_rate: self.learning_rate,
            stratify_by_s: self.stratify_by_s,
            mix_labeled: if self.semi_supervised { Some(self.mix_labeled) } else { None },
            averaging_decay: self.averaging_decay,
            patience: if self.patience == 0 { None } else { Some(self.patience) },
            bandwidth: self.bandwidth().expect("validated"),
            rff_features: self.rff_features,
            rff_convention: self.convention().expect("validated"),
            check_finite: true,
        }
    }

    pub fn beta_grid_values(&self) -> Result<Vec<f64>, String> {
        let vals: Result<Vec<f64>, _> =
            self.beta_grid.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match vals {
            Ok(v) if !v.is_empty() && v.iter().all(|b| *b >= 0.0) => Ok(v),
            _ => Err(format!("bad beta grid {:?} (comma-separated nonnegative numbers)", self.beta_grid)),
        }
    }
}

pub fn parse_hidden(spec: &str) -> Option<Vec<usize>> {
    if spec.trim().is_empty() {
        return Some(Vec::new());
    }
    spec.split(',').map(|t| t.trim().parse::<usize>().ok().filter(|v| *v > 0)).collect()
}
