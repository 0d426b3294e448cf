//! Multi-level visual and textual encoders.
//!
//! Both sides produce a three-level feature: a global mean (level 1), the
//! time-averaged biGRU states (level 2) and max-pooled 1-d convolutions over
//! those states (level 3). The concatenation is projected to the common
//! space by a fully connected layer followed by batch normalization.

mod conv;
mod gru;

pub use conv::{ConvCache, ConvPool};
pub use gru::{BiGru, BiGruCache, Gru, GruStepCache};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::{BatchNorm, BnCache, BnMode, Linear};
use crate::math;
use crate::params::{join, BlockKind, Parameters};
use crate::tensor::Tensor2;

/// Encoder dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub frame_feature_dim: usize,
    pub word_embedding_dim: usize,
    /// Per direction.
    pub gru_hidden_dim: usize,
    pub conv_filter_widths: Vec<usize>,
    pub conv_filters_per_width: usize,
    pub common_dim: usize,
    /// Size of the token vocabulary used for the one-hot level and the word
    /// embedding matrix.
    pub vocab_size: usize,
}

impl EncoderConfig {
    /// CPU-sized defaults: 32-d frames, 16-d word vectors, 16 GRU units per
    /// direction, widths {2,3,4} with 16 filters each, 64-d common space.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            frame_feature_dim: 32,
            word_embedding_dim: 16,
            gru_hidden_dim: 16,
            conv_filter_widths: vec![2, 3, 4],
            conv_filters_per_width: 16,
            common_dim: 64,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("frame_feature_dim", self.frame_feature_dim),
            ("word_embedding_dim", self.word_embedding_dim),
            ("gru_hidden_dim", self.gru_hidden_dim),
            ("conv_filters_per_width", self.conv_filters_per_width),
            ("common_dim", self.common_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.conv_filter_widths.is_empty() || self.conv_filter_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "conv_filter_widths must be a non-empty list of positive widths".into(),
            ));
        }
        Ok(())
    }

    fn sequence_feature_dim(&self) -> usize {
        2 * self.gru_hidden_dim + self.conv_filters_per_width * self.conv_filter_widths.len()
    }

    /// Width of the concatenated visual feature.
    pub fn visual_feature_dim(&self) -> usize {
        self.frame_feature_dim + self.sequence_feature_dim()
    }

    /// Width of the concatenated text feature.
    pub fn text_feature_dim(&self) -> usize {
        self.vocab_size + self.sequence_feature_dim()
    }
}

/// The three feature levels and their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelFeature {
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
    pub level3: Vec<f64>,
    pub concatenated: Vec<f64>,
}

impl MultiLevelFeature {
    fn new(level1: Vec<f64>, level2: Vec<f64>, level3: Vec<f64>) -> Self {
        let mut concatenated = Vec::with_capacity(level1.len() + level2.len() + level3.len());
        concatenated.extend_from_slice(&level1);
        concatenated.extend_from_slice(&level2);
        concatenated.extend_from_slice(&level3);
        Self {
            level1,
            level2,
            level3,
            concatenated,
        }
    }
}

/// Word vectors, one row per vocabulary token.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingMatrix {
    pub weights: Tensor2,
    pub trainable: bool,
}

impl WordEmbeddingMatrix {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..vocab_size * dim)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        Self {
            weights: Tensor2::from_vec(vocab_size, dim, data).expect("sized above"),
            trainable: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn lookup(&self, tokens: &[usize]) -> Result<Tensor2> {
        let mut seq = Tensor2::zeros(tokens.len(), self.dim());
        for (t, &tok) in tokens.iter().enumerate() {
            if tok >= self.vocab_size() {
                return Err(shape_err(format!(
                    "token index {tok} outside vocabulary of {}",
                    self.vocab_size()
                )));
            }
            seq.row_mut(t).copy_from_slice(self.weights.row(tok));
        }
        Ok(seq)
    }
}

/// Levels 2 and 3: biGRU states, their time mean and the pooled convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoder {
    pub gru: BiGru,
    pub conv: ConvPool,
}

#[derive(Debug, Clone)]
pub struct SequenceCache {
    gru: BiGruCache,
    conv: ConvCache,
    steps: usize,
}

impl SequenceEncoder {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, config: &EncoderConfig, rng: &mut R) -> Self {
        let gru = BiGru::init(input_dim, config.gru_hidden_dim, rng);
        let conv = ConvPool::init(
            gru.output_dim(),
            &config.conv_filter_widths,
            config.conv_filters_per_width,
            rng,
        );
        Self { gru, conv }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gru: self.gru.zeros_like(),
            conv: self.conv.zeros_like(),
        }
    }

    /// Returns `(level2, level3)`.
    pub fn forward(&self, seq: &Tensor2) -> Result<(Vec<f64>, Vec<f64>, SequenceCache)> {
        let (states, gru_cache) = self.gru.forward(seq)?;
        let level2 = states.mean_row();
        let (level3, conv_cache) = self.conv.forward(&states)?;
        Ok((
            level2,
            level3,
            SequenceCache {
                gru: gru_cache,
                conv: conv_cache,
                steps: seq.rows(),
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &SequenceCache,
        d_level2: &[f64],
        d_level3: &[f64],
        grads: &mut SequenceEncoder,
    ) -> Tensor2 {
        let mut d_states = self.conv.backward(&cache.conv, d_level3, &mut grads.conv);
        let inv = 1.0 / cache.steps as f64;
        for t in 0..cache.steps {
            math::axpy(inv, d_level2, d_states.row_mut(t));
        }
        self.gru.backward(&cache.gru, &d_states, &mut grads.gru)
    }
}

impl Parameters for SequenceEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        self.gru.visit(&join(prefix, "gru"), f);
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        self.gru.visit_mut(&join(prefix, "gru"), f);
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}

/// Shared tail of both encoders: sequence levels, projection and batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBranch {
    pub levels: SequenceEncoder,
    pub proj: Linear,
    pub bn: BatchNorm,
}

/// Per-batch cache of an [`EncoderBranch`].
#[derive(Debug, Clone)]
pub struct BranchCache {
    features: Vec<Vec<f64>>,
    level1_dim: usize,
    level2_dim: usize,
    sequences: Vec<SequenceCache>,
    bn: BnCache,
}

/// Gradient of one batch item with respect to the branch inputs.
#[derive(Debug, Clone)]
pub struct BranchInputGrad {
    pub level1: Vec<f64>,
    pub sequence: Tensor2,
}

impl EncoderBranch {
    fn init<R: Rng + ?Sized>(
        seq_dim: usize,
        level1_dim: usize,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let levels = SequenceEncoder::init(seq_dim, config, rng);
        let feat = level1_dim + levels.gru.output_dim() + levels.conv.output_dim();
        Self {
            levels,
            proj: Linear::init(config.common_dim, feat, rng),
            bn: BatchNorm::new(config.common_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self.levels.zeros_like(),
            proj: self.proj.zeros_like(),
            bn: self.bn.zeros_like(),
        }
    }

    fn features(&self, level1: Vec<f64>, seq: &Tensor2) -> Result<(MultiLevelFeature, SequenceCache)> {
        let (l2, l3, cache) = self.levels.forward(seq)?;
        Ok((MultiLevelFeature::new(level1, l2, l3), cache))
    }

    /// Projects every item and batch-normalizes the batch in the current BN
    /// mode. With `update_running = false` running statistics are left alone.
    pub fn forward_batch(
        &mut self,
        items: Vec<(Vec<f64>, &Tensor2)>,
        update_running: bool,
    ) -> Result<(Tensor2, BranchCache)> {
        let b = items.len();
        let mut pre = Tensor2::zeros(b, self.proj.out_dim());
        let mut features = Vec::with_capacity(b);
        let mut sequences = Vec::with_capacity(b);
        let mut level1_dim = 0;
        let mut level2_dim = 0;
        for (i, (level1, seq)) in items.into_iter().enumerate() {
            let (feat, cache) = self.features(level1, seq)?;
            level1_dim = feat.level1.len();
            level2_dim = feat.level2.len();
            pre.row_mut(i).copy_from_slice(&self.proj.forward(&feat.concatenated)?);
            features.push(feat.concatenated);
            sequences.push(cache);
        }
        let (out, bn) = if update_running {
            self.bn.forward(&pre)?
        } else {
            self.bn.forward_frozen(&pre)?
        };
        Ok((
            out,
            BranchCache {
                features,
                level1_dim,
                level2_dim,
                sequences,
                bn,
            },
        ))
    }

    pub fn backward_batch(
        &self,
        cache: &BranchCache,
        d_out: &Tensor2,
        grads: &mut EncoderBranch,
    ) -> Vec<BranchInputGrad> {
        let d_pre = self.bn.backward(&cache.bn, d_out, &mut grads.bn);
        let (l1, l2) = (cache.level1_dim, cache.level2_dim);
        cache
            .features
            .iter()
            .zip(&cache.sequences)
            .enumerate()
            .map(|(i, (feat, seq_cache))| {
                let d_feat = self.proj.backward(feat, d_pre.row(i), &mut grads.proj);
                let sequence = self.levels.backward(
                    seq_cache,
                    &d_feat[l1..l1 + l2],
                    &d_feat[l1 + l2..],
                    &mut grads.levels,
                );
                BranchInputGrad {
                    level1: d_feat[..l1].to_vec(),
                    sequence,
                }
            })
            .collect()
    }

    /// Single-item encoding with running batch-norm statistics.
    fn encode(&self, level1: Vec<f64>, seq: &Tensor2) -> Result<(MultiLevelFeature, Vec<f64>)> {
        let (feat, _) = self.features(level1, seq)?;
        let pre = self.proj.forward(&feat.concatenated)?;
        let out = self.bn.infer(&pre)?;
        Ok((feat, out))
    }
}

impl Parameters for EncoderBranch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        self.levels.visit(prefix, f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        self.levels.visit_mut(prefix, f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// Frame features to the common space.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEncoder {
    pub frame_dim: usize,
    pub branch: EncoderBranch,
}

impl VisualEncoder {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            frame_dim: config.frame_feature_dim,
            branch: EncoderBranch::init(
                config.frame_feature_dim,
                config.frame_feature_dim,
                config,
                rng,
            ),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            frame_dim: self.frame_dim,
            branch: self.branch.zeros_like(),
        }
    }

    fn check(&self, frames: &Tensor2) -> Result<()> {
        if frames.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if frames.cols() != self.frame_dim {
            return Err(shape_err(format!(
                "frames have {} features, encoder expects {}",
                frames.cols(),
                self.frame_dim
            )));
        }
        Ok(())
    }

    /// Global level: the frame mean, exact under frame permutation.
    pub fn global_level(frames: &Tensor2) -> Vec<f64> {
        frames.order_free_mean_row()
    }

    /// Encodes one video with running BN statistics, returning the
    /// multi-level feature and the embedding.
    pub fn encode(&self, frames: &Tensor2) -> Result<(MultiLevelFeature, Vec<f64>)> {
        self.check(frames)?;
        self.branch.encode(Self::global_level(frames), frames)
    }

    pub fn forward_batch(
        &mut self,
        videos: &[&Tensor2],
        update_running: bool,
    ) -> Result<(Tensor2, BranchCache)> {
        let mut items = Vec::with_capacity(videos.len());
        for frames in videos {
            self.check(frames)?;
            items.push((Self::global_level(frames), *frames));
        }
        self.branch.forward_batch(items, update_running)
    }

    /// Returns `dL/dframes` for every video.
    pub fn backward_batch(
        &self,
        cache: &BranchCache,
        d_out: &Tensor2,
        grads: &mut VisualEncoder,
    ) -> Vec<Tensor2> {
        self.branch
            .backward_batch(cache, d_out, &mut grads.branch)
            .into_iter()
            .map(|g| {
                let mut d = g.sequence;
                let inv = 1.0 / d.rows() as f64;
                for t in 0..d.rows() {
                    math::axpy(inv, &g.level1, d.row_mut(t));
                }
                d
            })
            .collect()
    }
}

impl Parameters for VisualEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        self.branch.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        self.branch.visit_mut(prefix, f);
    }
}

/// Token indices to the common space.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub embedding: WordEmbeddingMatrix,
    pub branch: EncoderBranch,
}

impl TextEncoder {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let embedding = WordEmbeddingMatrix::init(config.vocab_size, config.word_embedding_dim, rng);
        let branch = EncoderBranch::init(config.word_embedding_dim, config.vocab_size, config, rng);
        Self { embedding, branch }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: WordEmbeddingMatrix {
                weights: Tensor2::zeros(self.embedding.vocab_size(), self.embedding.dim()),
                trainable: self.embedding.trainable,
            },
            branch: self.branch.zeros_like(),
        }
    }

    /// Global level: the mean of the tokens' one-hot vectors.
    pub fn global_level(&self, tokens: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.embedding.vocab_size()];
        for &t in tokens {
            counts[t] += 1.0;
        }
        let n = tokens.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }

    fn prepare(&self, tokens: &[usize]) -> Result<(Vec<f64>, Tensor2)> {
        if tokens.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let seq = self.embedding.lookup(tokens)?;
        Ok((self.global_level(tokens), seq))
    }

    pub fn encode(&self, tokens: &[usize]) -> Result<(MultiLevelFeature, Vec<f64>)> {
        let (level1, seq) = self.prepare(tokens)?;
        self.branch.encode(level1, &seq)
    }

    pub fn forward_batch(
        &mut self,
        queries: &[&[usize]],
        update_running: bool,
    ) -> Result<(Tensor2, TextBatchCache)> {
        let mut prepared = Vec::with_capacity(queries.len());
        for tokens in queries {
            prepared.push(self.prepare(tokens)?);
        }
        let items = prepared.iter().map(|(l1, seq)| (l1.clone(), seq)).collect();
        let (out, branch) = self.branch.forward_batch(items, update_running)?;
        Ok((
            out,
            TextBatchCache {
                branch,
                tokens: queries.iter().map(|t| t.to_vec()).collect(),
            },
        ))
    }

    pub fn backward_batch(&self, cache: &TextBatchCache, d_out: &Tensor2, grads: &mut TextEncoder) {
        let input_grads = self.branch.backward_batch(&cache.branch, d_out, &mut grads.branch);
        if !self.embedding.trainable {
            return;
        }
        for (g, tokens) in input_grads.iter().zip(&cache.tokens) {
            for (t, &tok) in tokens.iter().enumerate() {
                math::axpy(1.0, g.sequence.row(t), grads.embedding.weights.row_mut(tok));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextBatchCache {
    branch: BranchCache,
    tokens: Vec<Vec<usize>>,
}

impl Parameters for TextEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &[f64])) {
        let kind = if self.embedding.trainable {
            BlockKind::Trainable
        } else {
            BlockKind::Frozen
        };
        f(&join(prefix, "embedding"), kind, self.embedding.weights.data());
        self.branch.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, BlockKind, &mut [f64])) {
        let kind = if self.embedding.trainable {
            BlockKind::Trainable
        } else {
            BlockKind::Frozen
        };
        f(&join(prefix, "embedding"), kind, self.embedding.weights.data_mut());
        self.branch.visit_mut(prefix, f);
    }
}

/// Sets the batch-norm mode of a branch.
pub(crate) fn set_branch_mode(branch: &mut EncoderBranch, mode: BnMode) {
    branch.bn.mode = mode;
}

/// Encodes one video: multi-level feature and embedding `phi`, using the
/// running batch-norm statistics.
pub fn encode_visual(
    frames: &Tensor2,
    encoder: &VisualEncoder,
) -> Result<(MultiLevelFeature, Vec<f64>)> {
    encoder.encode(frames)
}

/// Encodes one token sequence: multi-level feature and embedding `tau`.
pub fn encode_text(tokens: &[usize], encoder: &TextEncoder) -> Result<(MultiLevelFeature, Vec<f64>)> {
    encoder.encode(tokens)
}
