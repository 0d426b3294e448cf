//! 1-d convolution over time followed by ReLU and max-pooling over time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::layers::{relu, Linear};
use crate::math;
use crate::params::{join, BlockKind, Parameters};
use crate::tensor::Tensor2;

/// One bank of filters per window width. A filter of width `w` over a
/// `T x C` sequence is a `Linear` from `w * C` inputs (the flattened window)
/// to `filters_per_width` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPool {
    pub widths: Vec<usize>,
    pub banks: Vec<Linear>,
    channels: usize,
}

/// Winning window start per filter, `None` when the pooled value is zero
/// (ReLU inactive or sequence shorter than the width).
#[derive(Debug, Clone)]
pub struct ConvCache {
    winners: Vec<Vec<Option<usize>>>,
    input: Tensor2,
}

impl ConvPool {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        widths: &[usize],
        filters_per_width: usize,
        rng: &mut R,
    ) -> Self {
        let banks = widths
            .iter()
            .map(|w| Linear::init(filters_per_width, w * channels, rng))
            .collect();
        Self {
            widths: widths.to_vec(),
            banks,
            channels,
        }
    }

    pub fn from_banks(channels: usize, widths: Vec<usize>, banks: Vec<Linear>) -> Result<Self> {
        if widths.len() != banks.len() {
            return Err(shape_err("one filter bank per width"));
        }
        for (w, bank) in widths.iter().zip(&banks) {
            if bank.in_dim() != w * channels || bank.out_dim() != banks[0].out_dim() {
                return Err(shape_err("filter bank size does not match width x channels"));
            }
        }
        Ok(Self {
            widths,
            banks,
            channels,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            banks: self.banks.iter().map(Linear::zeros_like).collect(),
            channels: self.channels,
        }
    }

    pub fn filters_per_width(&self) -> usize {
        self.banks.first().map_or(0, Linear::out_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.filters_per_width() * self.widths.len()
    }

    pub fn forward(&self, seq: &Tensor2) -> Result<(Vec<f64>, ConvCache)> {
        if seq.cols() != self.channels {
            return Err(shape_err(alloc::format!(
                "sequence has {} channels, convolution expects {}",
                seq.cols(),
                self.channels
            )));
        }
        let nf = self.filters_per_width();
        let mut out = vec![0.0; self.output_dim()];
        let mut winners = Vec::with_capacity(self.widths.len());
        for (bi, (&w, bank)) in self.widths.iter().zip(&self.banks).enumerate() {
            let mut win = vec![None; nf];
            if seq.rows() < w {
                log::debug!(
                    "sequence of length {} shorter than filter width {w}; pooled output is zero",
                    seq.rows()
                );
                winners.push(win);
                continue;
            }
            let mut best = vec![f64::NEG_INFINITY; nf];
            let mut best_at = vec![0usize; nf];
            for p in 0..=seq.rows() - w {
                let window = seq.rows_slice(p, p + w);
                for f in 0..nf {
                    let z = math::dot(bank.weight.row(f), window) + bank.bias[f];
                    if z > best[f] {
                        best[f] = z;
                        best_at[f] = p;
                    }
                }
            }
            for f in 0..nf {
                let v = relu(best[f]);
                out[bi * nf + f] = v;
                if v > 0.0 {
                    win[f] = Some(best_at[f]);
                }
            }
            winners.push(win);
        }
        Ok((
            out,
            ConvCache {
                winners,
                input: seq.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, d_out: &[f64], grads: &mut ConvPool) -> Tensor2 {
        let nf = self.filters_per_width();
        let seq = &cache.input;
        let mut d_seq = Tensor2::zeros(seq.rows(), seq.cols());
        for (bi, (&w, bank)) in self.widths.iter().zip(&self.banks).enumerate() {
            let gbank = &mut grads.banks[bi];
            for f in 0..nf {
                let Some(p) = cache.winners[bi][f] else { continue };
                let g = d_out[bi * nf + f];
                if g == 0.0 {
                    continue;
                }
                let window = seq.rows_slice(p, p + w);
                let cols = gbank.weight.cols();
                math::axpy(g, window, &mut gbank.weight.data_mut()[f * cols..(f + 1) * cols]);
                gbank.bias[f] += g;
                let c = seq.cols();
                let dwin = &mut d_seq.data_mut()[p * c..(p + w) * c];
                math::axpy(g, bank.weight.row(f), dwin);
            }
        }
        d_seq
    }
}

impl Parameters for ConvPool {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        for (w, bank) in self.widths.iter().zip(&self.banks) {
            bank.visit(&join(prefix, &alloc::format!("width{w}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        for (w, bank) in self.widths.iter().zip(self.banks.iter_mut()) {
            bank.visit_mut(&join(prefix, &alloc::format!("width{w}")), f);
        }
    }
}
