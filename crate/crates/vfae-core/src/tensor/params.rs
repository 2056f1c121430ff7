//! Named trainable parameters with accumulated gradients, plus the
//! text checkpoint format.

use std::io::{BufRead, Write};

use super::{fmt_shape, Tensor, TensorError};

/// Magic header, first line of every parameter checkpoint.
pub const CHECKPOINT_MAGIC: &str = "VFAECKPT1";

/// Stable handle into a [`ParamSet`]; optimizer state is keyed on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

struct Entry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// Ordered registry of all trainable tensors of one model.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Register a parameter. Names must be unique and whitespace-free
    /// (they key the checkpoint format).
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "parameter name {name:?} must be non-empty and whitespace-free"
        );
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name:?}"
        );
        let grad = vec![0.0; value.numel()];
        self.entries.push(Entry { name: name.to_string(), value, grad });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let entry = &mut self.entries[id.0];
        assert_eq!(
            g.len(),
            entry.grad.len(),
            "gradient length {} does not match parameter {} ({})",
            g.len(),
            entry.name,
            fmt_shape(entry.value.shape())
        );
        for (slot, gi) in entry.grad.iter_mut().zip(g) {
            *slot += gi;
        }
    }

    /// Reset every gradient buffer to exact zeros.
    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copies of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    /// Overwrite all values from a snapshot taken on an identically built set.
    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot size mismatch");
        for (e, t) in self.entries.iter_mut().zip(snapshot) {
            assert_eq!(e.value.shape(), t.shape(), "snapshot shape mismatch for {}", e.name);
            e.value = t.clone();
        }
    }

    /// Sum of squared gradient entries across all parameters.
    pub fn grad_norm_sq(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum()
    }

    // ── Checkpoint format ────────────────────────────────────────────
    //
    // Line-oriented text, versioned by the magic first line:
    //
    //   VFAECKPT1
    //   <name> <ndim> <d0> <d1> ...
    //   <v0> <v1> ... (row-major, one line per parameter)
    //
    // Values use Rust's shortest round-trip float formatting, so a
    // write/read cycle restores bit-identical f64s.

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        for e in &self.entries {
            write!(w, "{} {}", e.name, e.value.shape().len())?;
            for d in e.value.shape() {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            let mut first = true;
            for v in e.value.iter() {
                if !first {
                    write!(w, " ")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Load values into this set. Every stored parameter must match an
    /// existing entry by name and shape, and all entries must be covered.
    pub fn load<R: BufRead>(&mut self, r: R) -> Result<(), TensorError> {
        let mut lines = r.lines();
        let magic = lines
            .next()
            .ok_or_else(|| TensorError::CheckpointFormat("empty file".into()))??;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(TensorError::CheckpointFormat(format!(
                "bad magic header {magic:?}, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let mut seen = vec![false; self.entries.len()];
        while let Some(header) = lines.next() {
            let header = header?;
            if header.trim().is_empty() {
                continue;
            }
            let mut parts = header.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| TensorError::CheckpointFormat("missing name".into()))?
                .to_string();
            let ndim: usize = parse_field(parts.next(), "ndim", &name)?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(parse_field(parts.next(), "dimension", &name)?);
            }
            let values_line = lines.next().ok_or_else(|| {
                TensorError::CheckpointFormat(format!("missing values for {name}"))
            })??;
            let values: Vec<f64> = values_line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        TensorError::CheckpointFormat(format!(
                            "unparseable value {t:?} for {name}"
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            let idx = self
                .entries
                .iter()
                .position(|e| e.name == name)
                .ok_or_else(|| {
                    TensorError::CheckpointMismatch(format!("unknown parameter {name}"))
                })?;
            let entry = &mut self.entries[idx];
            if entry.value.shape() != shape.as_slice() {
                return Err(TensorError::CheckpointMismatch(format!(
                    "{name}: stored shape {} vs model shape {}",
                    fmt_shape(&shape),
                    fmt_shape(entry.value.shape())
                )));
            }
            if values.len() != entry.value.numel() {
                return Err(TensorError::CheckpointFormat(format!(
                    "{name}: expected {} values, got {}",
                    entry.value.numel(),
                    values.len()
                )));
            }
            entry.value = Tensor::from_vec(shape, values);
            seen[idx] = true;
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(TensorError::CheckpointMismatch(format!(
                "checkpoint is missing parameter {}",
                self.entries[idx].name
            )));
        }
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(
    tok: Option<&str>,
    what: &str,
    name: &str,
) -> Result<T, TensorError> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
        TensorError::CheckpointFormat(format!("bad {what} field for parameter {name}"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_resets_exactly() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(vec![1.0, 2.0]));
        ps.accumulate_grad(id, &[0.25, -3.5]);
        assert_eq!(ps.grad(id), &[0.25, -3.5]);
        ps.zero_grad();
        assert_eq!(ps.grad(id), &[0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(0.0));
        ps.add("w", Tensor::scalar(1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut ps = ParamSet::new();
        ps.add("enc/w", Tensor::matrix(2, 3, vec![0.1, -2.5e-17, 3.0, 1.0 / 3.0, f64::MIN_POSITIVE, 9.9]));
        ps.add("enc/b", Tensor::vector(vec![0.0, -0.0, 1.2345678901234567]));
        let mut buf = Vec::new();
        ps.save(&mut buf).unwrap();

        let mut restored = ParamSet::new();
        restored.add("enc/w", Tensor::zeros(vec![2, 3]));
        restored.add("enc/b", Tensor::zeros(vec![3]));
        restored.load(buf.as_slice()).unwrap();
        for id in ps.ids() {
            let a = ps.value(id).data();
            let b = restored.value(id).data();
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_is_reported() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        ps.save(&mut buf).unwrap();

        let mut other = ParamSet::new();
        other.add("w", Tensor::zeros(vec![3]));
        let err = other.load(buf.as_slice()).unwrap_err();
        assert!(matches!(err, TensorError::CheckpointMismatch(_)), "{err}");
    }

    #[test]
    fn checkpoint_rejects_wrong_magic() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(1.0));
        let err = ps.load("NOTACKPT\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TensorError::CheckpointFormat(_)));
    }
}
