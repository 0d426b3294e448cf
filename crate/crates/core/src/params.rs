//! Named parameter blocks.
//!
//! Models expose their tensors as an ordered list of named blocks. The order
//! is fixed by the model structure and is what optimizers and checkpoint
//! files rely on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::layers::{BatchNorm, Linear};

/// How a block takes part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Updated by the optimizer.
    Trainable,
    /// A weight kept fixed during training (e.g. loaded word vectors).
    Frozen,
    /// Non-gradient state such as batch-norm running statistics.
    Buffer,
}

pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64]));

    /// Name, kind and length of every block, in visiting order.
    fn layout(&self) -> Vec<(String, BlockKind, usize)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, kind, v| out.push((String::from(name), kind, v.len())));
        out
    }

    fn trainable_len(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, kind, v| {
            if kind == BlockKind::Trainable {
                n += v.len()
            }
        });
        n
    }

    /// Concatenation of all trainable blocks.
    fn flatten_trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        self.visit("", &mut |_, kind, v| {
            if kind == BlockKind::Trainable {
                out.extend_from_slice(v)
            }
        });
        out
    }

    /// Inverse of [`flatten_trainable`](Self::flatten_trainable).
    fn load_trainable(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.trainable_len();
        if flat.len() != expected {
            return Err(shape_err(format!(
                "{} values for {expected} trainable parameters",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut("", &mut |_, kind, v| {
            if kind == BlockKind::Trainable {
                v.copy_from_slice(&flat[offset..offset + v.len()]);
                offset += v.len();
            }
        });
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        f(&join(prefix, "weight"), BlockKind::Trainable, self.weight.data());
        f(&join(prefix, "bias"), BlockKind::Trainable, &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        f(&join(prefix, "weight"), BlockKind::Trainable, self.weight.data_mut());
        f(&join(prefix, "bias"), BlockKind::Trainable, &mut self.bias);
    }
}

impl Parameters for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        f(&join(prefix, "gamma"), BlockKind::Trainable, &self.gamma);
        f(&join(prefix, "beta"), BlockKind::Trainable, &self.beta);
        f(&join(prefix, "running_mean"), BlockKind::Buffer, &self.running_mean);
        f(&join(prefix, "running_var"), BlockKind::Buffer, &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        f(&join(prefix, "gamma"), BlockKind::Trainable, &mut self.gamma);
        f(&join(prefix, "beta"), BlockKind::Trainable, &mut self.beta);
        f(&join(prefix, "running_mean"), BlockKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_var"), BlockKind::Buffer, &mut self.running_var);
    }
}
