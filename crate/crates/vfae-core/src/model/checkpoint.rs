//! Self-describing checkpoint bundles: a TOML metadata header (architecture
//! and objective, so evaluation never has to guess) followed by the
//! parameter records of the tensor layer's text format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Objective, VfaeModel};

/// Magic header, first line of every checkpoint bundle.
pub const CHECKPOINT_BUNDLE_MAGIC: &str = "VFAEBUNDLE1";

const METADATA_END: &str = "---";

/// Metadata stored with every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub objective: Objective,
    /// Seed the model was initialized/trained with, for provenance.
    pub seed: u64,
}

/// Write model weights plus metadata to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &VfaeModel,
    objective: &Objective,
    seed: u64,
) -> Result<(), ModelError> {
    let meta = CheckpointMeta { model: model.config.clone(), objective: objective.clone(), seed };
    let toml = toml::to_string(&meta)
        .map_err(|e| ModelError::Checkpoint(format!("metadata serialization: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_BUNDLE_MAGIC}")?;
    w.write_all(toml.as_bytes())?;
    writeln!(w, "{METADATA_END}")?;
    model.params.save(&mut w)?;
    Ok(())
}

/// Rebuild a model from a checkpoint bundle. The architecture is taken from
/// the stored metadata; weights must match it exactly.
pub fn load_checkpoint(path: &Path) -> Result<(VfaeModel, CheckpointMeta), ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != CHECKPOINT_BUNDLE_MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic header {:?}, expected {CHECKPOINT_BUNDLE_MAGIC:?}",
            line.trim()
        )));
    }
    let mut toml_src = String::new();
    loop {
        line.clear();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(ModelError::Checkpoint("missing metadata terminator".into()));
        }
        if line.trim_end() == METADATA_END {
            break;
        }
        toml_src.push_str(&line);
    }
    let meta: CheckpointMeta = toml::from_str(&toml_src)
        .map_err(|e| ModelError::Checkpoint(format!("metadata parse: {e}")))?;
    let mut model = VfaeModel::new(meta.model.clone(), meta.seed);
    model.params.load(r)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::LikelihoodKind;
    use crate::model::Activation;

    fn config() -> ModelConfig {
        ModelConfig {
            x_dim: 3,
            s_groups: 2,
            y_classes: 2,
            z1_dim: 2,
            z2_dim: 2,
            encoder_z1_hidden: vec![4],
            encoder_z2_hidden: vec![3],
            decoder_z1_hidden: vec![3],
            decoder_x_hidden: vec![4],
            likelihood: LikelihoodKind::Bernoulli,
            activation: Activation::Softplus,
            use_s: true,
        }
    }

    #[test]
    fn bundle_round_trip_restores_weights_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = VfaeModel::new(config(), 123);
        let objective = Objective { alpha: 2.0, beta: 7.5, use_mmd: true, use_label_stage: true };
        save_checkpoint(&path, &model, &objective, 123).unwrap();

        let (restored, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.objective, objective);
        assert_eq!(meta.model, model.config);
        for (a, b) in model.params.ids().zip(restored.params.ids()) {
            assert_eq!(model.params.value(a).data(), restored.params.value(b).data());
        }
    }

    #[test]
    fn bundle_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint.txt");
        std::fs::write(&path, "hello\n").unwrap();
        let err = load_checkpoint(&path).err().expect("foreign file must be rejected");
        assert!(matches!(err, ModelError::Checkpoint(_)), "{err}");
    }
}
