//! The dual-task network: visual and text encoders sharing a common space,
//! and a concept decoder on top of the video embedding.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::{set_branch_mode, EncoderConfig, TextEncoder, VisualEncoder};
use crate::error::{shape_err, Error, Result};
use crate::layers::{sigmoid, BatchNorm, BnMode, Linear};
use crate::objectives::{
    classification_loss, combined_loss, ranking_loss_grouped, ClassificationObjective,
    LabelVector, LossHyperParams,
};
use crate::params::{join, BlockKind, Parameters};
use crate::tensor::Tensor2;

/// `y_hat = sigmoid(BN(W_d phi + b_d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDecoder {
    pub proj: Linear,
    pub bn: BatchNorm,
}

impl ConceptDecoder {
    pub fn init<R: rand::Rng + ?Sized>(concepts: usize, common_dim: usize, rng: &mut R) -> Self {
        Self {
            proj: Linear::init(concepts, common_dim, rng),
            bn: BatchNorm::new(concepts),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj: self.proj.zeros_like(),
            bn: self.bn.zeros_like(),
        }
    }

    pub fn concept_count(&self) -> usize {
        self.proj.out_dim()
    }

    /// Decoder logits for one embedding, using running statistics.
    pub fn logits(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.bn.infer(&self.proj.forward(phi)?)
    }

    /// Concept probabilities for one embedding, using running statistics.
    pub fn decode(&self, phi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(phi)?.into_iter().map(sigmoid).collect())
    }
}

impl Parameters for ConceptDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        self.proj.visit(&join(prefix, "proj"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// Which task losses contribute to a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskMask {
    pub matching: bool,
    pub classification: bool,
}

impl TaskMask {
    pub const BOTH: Self = Self {
        matching: true,
        classification: true,
    };
    pub const MATCHING_ONLY: Self = Self {
        matching: true,
        classification: false,
    };
    pub const CLASSIFICATION_ONLY: Self = Self {
        matching: false,
        classification: true,
    };
}

impl Default for TaskMask {
    fn default() -> Self {
        Self::BOTH
    }
}

/// One video-caption pair prepared for the network.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub frames: &'a Tensor2,
    pub tokens: &'a [usize],
    pub labels: &'a LabelVector,
    /// Pairs sharing a group (the same video) are not each other's negatives.
    pub group: usize,
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub matching: f64,
    pub classification: f64,
    pub total: f64,
}

impl BatchLoss {
    pub fn is_finite(&self) -> bool {
        self.matching.is_finite() && self.classification.is_finite() && self.total.is_finite()
    }
}

/// Visual encoder, text encoder and concept decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTaskModel {
    pub config: EncoderConfig,
    pub visual: VisualEncoder,
    pub text: TextEncoder,
    pub decoder: ConceptDecoder,
}

impl DualTaskModel {
    /// Randomly initialized model with `concepts` decoder outputs.
    pub fn new(config: EncoderConfig, concepts: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if concepts == 0 {
            return Err(Error::InvalidConfig("concept count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual = VisualEncoder::init(&config, &mut rng);
        let text = TextEncoder::init(&config, &mut rng);
        let decoder = ConceptDecoder::init(concepts, config.common_dim, &mut rng);
        Ok(Self {
            config,
            visual,
            text,
            decoder,
        })
    }

    /// Same shapes, all values zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            visual: self.visual.zeros_like(),
            text: self.text.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn concept_count(&self) -> usize {
        self.decoder.concept_count()
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        set_branch_mode(&mut self.visual.branch, mode);
        set_branch_mode(&mut self.text.branch, mode);
        self.decoder.bn.mode = mode;
    }

    /// `phi(v)` with running batch-norm statistics.
    pub fn encode_video(&self, frames: &Tensor2) -> Result<Vec<f64>> {
        Ok(self.visual.encode(frames)?.1)
    }

    /// `tau(q)` with running batch-norm statistics.
    pub fn encode_query(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.text.encode(tokens)?.1)
    }

    /// Concept probabilities for a video embedding.
    pub fn decode(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.decoder.decode(phi)
    }

    /// Forward and backward pass over one batch in the current BN mode.
    ///
    /// Returns the batch-mean losses and the parameter gradients of their sum.
    /// Masked tasks contribute neither loss nor gradient; with matching masked
    /// the text encoder is not run at all. With `update_running = false` the
    /// batch-norm running statistics are left untouched.
    pub fn loss_and_grads(
        &mut self,
        batch: &[TrainingExample<'_>],
        hp: &LossHyperParams,
        objective: ClassificationObjective,
        tasks: TaskMask,
        update_running: bool,
    ) -> Result<(BatchLoss, DualTaskModel)> {
        let b = batch.len();
        let m = self.concept_count();
        for ex in batch {
            if ex.labels.len() != m {
                return Err(shape_err(format!(
                    "label vector of length {} for {m} concepts",
                    ex.labels.len()
                )));
            }
        }
        let mut grads = self.zeros_like();
        let frames: Vec<&Tensor2> = batch.iter().map(|e| e.frames).collect();
        let (phi, v_cache) = self.visual.forward_batch(&frames, update_running)?;
        let mut d_phi = Tensor2::zeros(b, phi.cols());
        let mut loss = BatchLoss::default();

        if tasks.matching {
            let tokens: Vec<&[usize]> = batch.iter().map(|e| e.tokens).collect();
            let (tau, t_cache) = self.text.forward_batch(&tokens, update_running)?;
            let groups: Vec<usize> = batch.iter().map(|e| e.group).collect();
            let rank = ranking_loss_grouped(&phi, &tau, &groups, hp.margin)?;
            loss.matching = rank.loss;
            d_phi = rank.grad_videos;
            self.text.backward_batch(&t_cache, &rank.grad_queries, &mut grads.text);
        }

        if tasks.classification {
            let mut pre = Tensor2::zeros(b, m);
            for i in 0..b {
                pre.row_mut(i).copy_from_slice(&self.decoder.proj.forward(phi.row(i))?);
            }
            let (logits, bn_cache) = if update_running {
                self.decoder.bn.forward(&pre)?
            } else {
                self.decoder.bn.forward_frozen(&pre)?
            };
            let inv_b = 1.0 / b as f64;
            let mut d_logits = Tensor2::zeros(b, m);
            for (i, ex) in batch.iter().enumerate() {
                let pred: Vec<f64> = logits.row(i).iter().map(|&z| sigmoid(z)).collect();
                let (l, g) = classification_loss(objective, &pred, ex.labels, hp)?;
                loss.classification += l * inv_b;
                for (d, gi) in d_logits.row_mut(i).iter_mut().zip(g) {
                    *d = gi * inv_b;
                }
            }
            let d_pre = self.decoder.bn.backward(&bn_cache, &d_logits, &mut grads.decoder.bn);
            for i in 0..b {
                let d = self
                    .decoder
                    .proj
                    .backward(phi.row(i), d_pre.row(i), &mut grads.decoder.proj);
                crate::math::axpy(1.0, &d, d_phi.row_mut(i));
            }
        }

        loss.total = combined_loss(loss.matching, loss.classification);
        self.visual.backward_batch(&v_cache, &d_phi, &mut grads.visual);
        Ok((loss, grads))
    }
}

impl Parameters for DualTaskModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        self.visual.visit(&join(prefix, "visual"), f);
        self.text.visit(&join(prefix, "text"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        self.visual.visit_mut(&join(prefix, "visual"), f);
        self.text.visit_mut(&join(prefix, "text"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}
