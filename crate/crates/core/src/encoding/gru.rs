//! Gated recurrent units, unidirectional and bidirectional.
//!
//! One step, with `h` the previous state:
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r * h) + b_n)
//! h' = z * h + (1 - z) * n
//! ```
//!
//! The three gates are stacked row-wise in `w`, `u` and `b` in the order
//! update, reset, candidate. The initial state is zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::{sigmoid, sigmoid_grad_from_output, tanh, tanh_grad_from_output};
use crate::math;
use crate::params::{join, BlockKind, Parameters};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    /// `3H x input_dim`
    pub w: Tensor2,
    /// `3H x H`
    pub u: Tensor2,
    /// `3H`
    pub b: Vec<f64>,
}

/// Saved activations of one step.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    reset_state: Vec<f64>,
}

impl Gru {
    /// Uniform init in `[-1/sqrt(H), 1/sqrt(H)]` for every weight and bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let k = 1.0 / math::sqrt(hidden_dim as f64);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-k..k)).collect() };
        let w = Tensor2::from_vec(3 * hidden_dim, input_dim, draw(3 * hidden_dim * input_dim))
            .expect("sized above");
        let u = Tensor2::from_vec(3 * hidden_dim, hidden_dim, draw(3 * hidden_dim * hidden_dim))
            .expect("sized above");
        let b = draw(3 * hidden_dim);
        Self { w, u, b }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w: Tensor2::zeros(3 * hidden_dim, input_dim),
            u: Tensor2::zeros(3 * hidden_dim, hidden_dim),
            b: vec![0.0; 3 * hidden_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    /// One recurrence step.
    pub fn cell_forward(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
        let hd = self.hidden_dim();
        if x.len() != self.input_dim() || h_prev.len() != hd {
            return Err(shape_err(format!(
                "gru step got input {} / state {}, expects {} / {hd}",
                x.len(),
                h_prev.len(),
                self.input_dim()
            )));
        }
        let mut a = self.b.clone();
        self.w.matvec_acc(x, &mut a);
        for (i, ai) in a.iter_mut().enumerate().take(2 * hd) {
            *ai += math::dot(self.u.row(i), h_prev);
        }
        let z: Vec<f64> = a[..hd].iter().map(|v| sigmoid(*v)).collect();
        let r: Vec<f64> = a[hd..2 * hd].iter().map(|v| sigmoid(*v)).collect();
        let reset_state: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        let n: Vec<f64> = (0..hd)
            .map(|i| tanh(a[2 * hd + i] + math::dot(self.u.row(2 * hd + i), &reset_state)))
            .collect();
        let h: Vec<f64> = (0..hd)
            .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * n[i])
            .collect();
        Ok((
            h,
            GruStepCache {
                x: x.to_vec(),
                h_prev: h_prev.to_vec(),
                z,
                r,
                n,
                reset_state,
            },
        ))
    }

    /// Backward through one step. Returns `(dx, dh_prev)` and accumulates
    /// parameter gradients.
    pub fn cell_backward(
        &self,
        cache: &GruStepCache,
        dh: &[f64],
        grads: &mut Gru,
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let GruStepCache {
            x,
            h_prev,
            z,
            r,
            n,
            reset_state,
        } = cache;
        let mut da = vec![0.0; 3 * hd];
        let mut dh_prev = vec![0.0; hd];
        for i in 0..hd {
            let dz = dh[i] * (h_prev[i] - n[i]);
            da[i] = dz * sigmoid_grad_from_output(z[i]);
            let dn = dh[i] * (1.0 - z[i]);
            da[2 * hd + i] = dn * tanh_grad_from_output(n[i]);
            dh_prev[i] = dh[i] * z[i];
        }
        // through U_n (r * h)
        let mut d_reset_state = vec![0.0; hd];
        for i in 0..hd {
            let g = da[2 * hd + i];
            if g != 0.0 {
                math::axpy(g, self.u.row(2 * hd + i), &mut d_reset_state);
            }
        }
        for i in 0..hd {
            let dr = d_reset_state[i] * h_prev[i];
            dh_prev[i] += d_reset_state[i] * r[i];
            da[hd + i] = dr * sigmoid_grad_from_output(r[i]);
        }
        for i in 0..2 * hd {
            if da[i] != 0.0 {
                math::axpy(da[i], self.u.row(i), &mut dh_prev);
            }
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.w.matvec_t_acc(&da, &mut dx);

        grads.w.add_outer(&da, x);
        math::axpy(1.0, &da, &mut grads.b);
        let cols = hd;
        let gu = grads.u.data_mut();
        for i in 0..3 * hd {
            let src: &[f64] = if i < 2 * hd { h_prev } else { reset_state };
            math::axpy(da[i], src, &mut gu[i * cols..(i + 1) * cols]);
        }
        (dx, dh_prev)
    }

    /// Runs the recurrence over the rows of `seq`; returns all hidden states
    /// (`T x H`).
    pub fn forward(&self, seq: &Tensor2) -> Result<(Tensor2, Vec<GruStepCache>)> {
        if seq.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let hd = self.hidden_dim();
        let mut h = vec![0.0; hd];
        let mut states = Tensor2::zeros(seq.rows(), hd);
        let mut caches = Vec::with_capacity(seq.rows());
        for t in 0..seq.rows() {
            let (next, cache) = self.cell_forward(seq.row(t), &h)?;
            states.row_mut(t).copy_from_slice(&next);
            caches.push(cache);
            h = next;
        }
        Ok((states, caches))
    }

    /// Backpropagation through time given `dL/dh_t` for every step.
    pub fn backward(&self, caches: &[GruStepCache], d_states: &Tensor2, grads: &mut Gru) -> Tensor2 {
        let hd = self.hidden_dim();
        let mut dx = Tensor2::zeros(caches.len(), self.input_dim());
        let mut carry = vec![0.0; hd];
        for t in (0..caches.len()).rev() {
            let mut dh = d_states.row(t).to_vec();
            math::axpy(1.0, &carry, &mut dh);
            let (dxt, dh_prev) = self.cell_backward(&caches[t], &dh, grads);
            dx.row_mut(t).copy_from_slice(&dxt);
            carry = dh_prev;
        }
        dx
    }
}

impl Parameters for Gru {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        f(&join(prefix, "w"), BlockKind::Trainable, self.w.data());
        f(&join(prefix, "u"), BlockKind::Trainable, self.u.data());
        f(&join(prefix, "b"), BlockKind::Trainable, &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        f(&join(prefix, "w"), BlockKind::Trainable, self.w.data_mut());
        f(&join(prefix, "u"), BlockKind::Trainable, self.u.data_mut());
        f(&join(prefix, "b"), BlockKind::Trainable, &mut self.b);
    }
}

/// Forward and backward GRUs whose states are concatenated per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    forward: Vec<GruStepCache>,
    backward: Vec<GruStepCache>,
}

fn reversed(seq: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(seq.rows(), seq.cols());
    for t in 0..seq.rows() {
        out.row_mut(seq.rows() - 1 - t).copy_from_slice(seq.row(t));
    }
    out
}

impl BiGru {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            forward: Gru::init(input_dim, hidden_dim, rng),
            backward: Gru::init(input_dim, hidden_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
        }
    }

    /// Output width, `2H`.
    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden_dim()
    }

    /// `T x 2H` states: row `t` is `[forward_t, backward_t]` where the
    /// backward state at `t` has seen inputs `t..T`.
    pub fn forward(&self, seq: &Tensor2) -> Result<(Tensor2, BiGruCache)> {
        let (fwd, fcache) = self.forward.forward(seq)?;
        let (bwd_rev, bcache) = self.backward.forward(&reversed(seq))?;
        let hd = self.forward.hidden_dim();
        let t_len = seq.rows();
        let mut out = Tensor2::zeros(t_len, 2 * hd);
        for t in 0..t_len {
            let row = out.row_mut(t);
            row[..hd].copy_from_slice(fwd.row(t));
            row[hd..].copy_from_slice(bwd_rev.row(t_len - 1 - t));
        }
        Ok((
            out,
            BiGruCache {
                forward: fcache,
                backward: bcache,
            },
        ))
    }

    pub fn backward(&self, cache: &BiGruCache, d_out: &Tensor2, grads: &mut BiGru) -> Tensor2 {
        let hd = self.forward.hidden_dim();
        let t_len = d_out.rows();
        let mut d_fwd = Tensor2::zeros(t_len, hd);
        let mut d_bwd_rev = Tensor2::zeros(t_len, hd);
        for t in 0..t_len {
            d_fwd.row_mut(t).copy_from_slice(&d_out.row(t)[..hd]);
            d_bwd_rev
                .row_mut(t_len - 1 - t)
                .copy_from_slice(&d_out.row(t)[hd..]);
        }
        let mut dx = self.forward.backward(&cache.forward, &d_fwd, &mut grads.forward);
        let dx_rev = self
            .backward
            .backward(&cache.backward, &d_bwd_rev, &mut grads.backward);
        for t in 0..t_len {
            math::axpy(1.0, dx_rev.row(t_len - 1 - t), dx.row_mut(t));
        }
        dx
    }
}

impl Parameters for BiGru {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.backward.visit_mut(&join(prefix, "bwd"), f);
    }
}
