//! Joint training of both tasks with Adam, validation and model selection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{caption_labels, sequential_batches, BatchPlan, Dataset, Vocabulary};
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::model::{BatchLoss, DualTaskModel, TaskMask, TrainingExample};
use crate::objectives::{ClassificationObjective, LabelVector, LossHyperParams};
use crate::optim::{adam_step, AdamState};
use crate::params::Parameters;
use crate::ranking::RankedList;
use crate::similarity::cosine_sim;
use crate::tensor::Tensor2;

/// Learning rate used in the original large-scale setting.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Model-selection metric on the validation pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMetric {
    /// Mean reciprocal rank of the paired video under embedding scoring.
    #[default]
    MeanReciprocalRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossHyperParams,
    pub objective: ClassificationObjective,
    pub tasks: TaskMask,
    pub seed: u64,
    pub metric: ValidationMetric,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
    /// Size of the validation sample drawn from the training videos when no
    /// validation pairs are supplied.
    pub validation_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: DEFAULT_LEARNING_RATE,
            loss: LossHyperParams::default(),
            objective: ClassificationObjective::ClassSensitive,
            tasks: TaskMask::BOTH,
            seed: 0,
            metric: ValidationMetric::MeanReciprocalRank,
            patience: Some(5),
            validation_sample: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate {} invalid", self.lr)));
        }
        if !self.tasks.matching && !self.tasks.classification {
            return Err(Error::InvalidConfig("at least one task must be enabled".into()));
        }
        self.loss.validate()
    }
}

/// A caption with its in-vocabulary token indices, paired with a video.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPair {
    pub video_id: String,
    pub tokens: Vec<usize>,
}

/// Pairs prepared for the network: token indices and label vectors.
#[derive(Debug, Clone)]
pub struct PreparedData<'a> {
    pub dataset: &'a Dataset,
    video_order: Vec<&'a str>,
    tokens: Vec<Vec<usize>>,
    pair_video: Vec<usize>,
    labels: Vec<LabelVector>,
    /// Pairs dropped because their caption has no in-vocabulary token.
    pub dropped_pairs: usize,
}

impl<'a> PreparedData<'a> {
    pub fn new(dataset: &'a Dataset, text_vocab: &Vocabulary, concepts: &Vocabulary) -> Self {
        let video_order: Vec<&str> = dataset.videos.keys().map(|k| k.as_str()).collect();
        let position: BTreeMap<&str, usize> =
            video_order.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let labels = video_order
            .iter()
            .map(|v| caption_labels(v, dataset.captions_of(v), concepts))
            .collect();
        let mut tokens = Vec::new();
        let mut pair_video = Vec::new();
        let mut dropped_pairs = 0;
        for pair in &dataset.pairs {
            let t = text_vocab.encode(&pair.caption);
            if t.is_empty() {
                dropped_pairs += 1;
                log::warn!(
                    "caption {:?} of video {} has no in-vocabulary token; pair dropped",
                    pair.caption,
                    pair.video_id
                );
                continue;
            }
            tokens.push(t);
            pair_video.push(position[pair.video_id.as_str()]);
        }
        Self {
            dataset,
            video_order,
            tokens,
            pair_video,
            labels,
            dropped_pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn example(&self, pair: usize) -> TrainingExample<'_> {
        let v = self.pair_video[pair];
        TrainingExample {
            frames: &self.dataset.videos[self.video_order[v]],
            tokens: &self.tokens[pair],
            labels: &self.labels[v],
            group: v,
        }
    }

    pub fn video_id(&self, pair: usize) -> &str {
        self.video_order[self.pair_video[pair]]
    }

    pub fn tokens(&self, pair: usize) -> &[usize] {
        &self.tokens[pair]
    }

    pub fn labels_of(&self, video_id: &str) -> Option<&LabelVector> {
        self.video_order
            .iter()
            .position(|v| *v == video_id)
            .map(|i| &self.labels[i])
    }

    /// Up to `n` videos drawn with `seed`, each with its first prepared
    /// caption.
    pub fn sample_validation(&self, n: usize, seed: u64) -> Vec<ValidationPair> {
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for (pair, &v) in self.pair_video.iter().enumerate() {
            first.entry(v).or_insert(pair);
        }
        let candidates: Vec<usize> = first.values().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, candidates.len(), n.min(candidates.len())).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| {
                let pair = candidates[i];
                ValidationPair {
                    video_id: self.video_id(pair).into(),
                    tokens: self.tokens[pair].clone(),
                }
            })
            .collect()
    }
}

/// Trained model plus what is needed to use and verify it later.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: DualTaskModel,
    pub text_vocab: Vocabulary,
    pub concept_vocab_hash: u64,
    pub epoch: usize,
    pub validation_score: f64,
}

impl ModelCheckpoint {
    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.model.config
    }

    pub fn check_concept_vocab(&self, concepts: &Vocabulary) -> Result<()> {
        let found = concepts.hash();
        if found != self.concept_vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: self.concept_vocab_hash,
                found,
            });
        }
        Ok(())
    }
}

/// Loss curves and validation history of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Training loss of every optimizer step, in order.
    pub batch_losses: Vec<BatchLoss>,
    /// Mean loss over fixed sequential batches without running-stat updates;
    /// entry 0 is before the first step, entry `e` after epoch `e`.
    pub epoch_losses: Vec<f64>,
    /// Validation score after each epoch.
    pub validation_scores: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub dropped_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub report: TrainReport,
}

/// Optimizer state bound to one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: DualTaskModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(model: DualTaskModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.trainable_len(), config.lr);
        Ok(Self {
            model,
            adam,
            config,
            steps: 0,
        })
    }

    /// One forward/backward pass and Adam update on `batch`.
    pub fn step(&mut self, batch: &[TrainingExample<'_>]) -> Result<BatchLoss> {
        self.model.set_mode(BnMode::Train);
        let (loss, grads) = self.model.loss_and_grads(
            batch,
            &self.config.loss,
            self.config.objective,
            self.config.tasks,
            true,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: self.steps,
                matching: loss.matching,
                classification: loss.classification,
            });
        }
        let mut params = self.model.flatten_trainable();
        adam_step(&mut params, &grads.flatten_trainable(), &mut self.adam)?;
        self.model.load_trainable(&params)?;
        self.steps += 1;
        Ok(loss)
    }

    /// Mean total loss over sequential batches, batch statistics in train
    /// mode, running statistics untouched.
    pub fn eval_loss(&self, data: &PreparedData<'_>) -> Result<f64> {
        let mut model = self.model.clone();
        model.set_mode(BnMode::Train);
        let order: Vec<usize> = (0..data.len()).collect();
        let batches = sequential_batches(&order, self.config.batch_size);
        let mut total = 0.0;
        for batch in &batches {
            let examples: Vec<TrainingExample> = batch.iter().map(|&i| data.example(i)).collect();
            let (loss, _) = model.loss_and_grads(
                &examples,
                &self.config.loss,
                self.config.objective,
                self.config.tasks,
                false,
            )?;
            total += loss.total;
        }
        Ok(total / batches.len().max(1) as f64)
    }
}

/// Mean reciprocal rank of each caption's own video among the distinct
/// videos of `pairs`, with canonical tie-breaking.
pub fn mean_reciprocal_rank(
    model: &DualTaskModel,
    videos: &BTreeMap<String, Tensor2>,
    pairs: &[ValidationPair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("validation needs at least one pair"));
    }
    let mut embeddings: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        if !embeddings.contains_key(p.video_id.as_str()) {
            let frames = videos
                .get(&p.video_id)
                .ok_or_else(|| Error::UnknownVideo(p.video_id.clone()))?;
            embeddings.insert(&p.video_id, model.encode_video(frames)?);
        }
    }
    let mut total = 0.0;
    for p in pairs {
        let tau = model.encode_query(&p.tokens)?;
        let scores = embeddings
            .iter()
            .map(|(v, phi)| Ok((String::from(*v), cosine_sim(phi, &tau).unwrap_or(0.0))))
            .collect::<Result<Vec<_>>>()?;
        let list = RankedList::from_scores("validation", "embedding", scores)?;
        let rank = list
            .video_ids()
            .position(|v| v == p.video_id)
            .expect("paired video is scored")
            + 1;
        total += 1.0 / rank as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Scores `model` with the configured validation metric.
pub fn validate(
    metric: ValidationMetric,
    model: &DualTaskModel,
    videos: &BTreeMap<String, Tensor2>,
    pairs: &[ValidationPair],
) -> Result<f64> {
    match metric {
        ValidationMetric::MeanReciprocalRank => mean_reciprocal_rank(model, videos, pairs),
    }
}

/// Trains a freshly initialized model.
pub fn train(
    config: &TrainConfig,
    encoder: EncoderConfig,
    data: &Dataset,
    text_vocab: &Vocabulary,
    concepts: &Vocabulary,
    validation: Option<&[ValidationPair]>,
) -> Result<TrainOutcome> {
    if encoder.vocab_size != text_vocab.len() {
        return Err(Error::InvalidConfig(format!(
            "encoder vocab_size {} but text vocabulary has {} tokens",
            encoder.vocab_size,
            text_vocab.len()
        )));
    }
    if concepts.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let model = DualTaskModel::new(encoder, concepts.len(), config.seed)?;
    train_model(model, config, data, text_vocab, concepts, validation)
}

/// Trains `model` in place of a fresh initialization (e.g. with loaded word
/// vectors). Returns the checkpoint with the best validation score.
pub fn train_model(
    model: DualTaskModel,
    config: &TrainConfig,
    data: &Dataset,
    text_vocab: &Vocabulary,
    concepts: &Vocabulary,
    validation: Option<&[ValidationPair]>,
) -> Result<TrainOutcome> {
    if model.concept_count() != concepts.len() {
        return Err(Error::InvalidConfig(format!(
            "model decodes {} concepts, vocabulary has {}",
            model.concept_count(),
            concepts.len()
        )));
    }
    let prepared = PreparedData::new(data, text_vocab, concepts);
    if prepared.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "training needs at least 2 usable pairs, found {}",
            prepared.len()
        )));
    }
    let sampled;
    let validation = match validation {
        Some(v) => v,
        None => {
            sampled = prepared.sample_validation(config.validation_sample, config.seed);
            &sampled
        }
    };
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut report = TrainReport {
        dropped_pairs: prepared.dropped_pairs,
        ..Default::default()
    };
    report.epoch_losses.push(trainer.eval_loss(&prepared)?);
    let mut best: Option<(f64, usize, DualTaskModel)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let plan = BatchPlan::new(config.seed, epoch as u64, config.batch_size, prepared.len());
        for batch in plan.batches() {
            let examples: Vec<TrainingExample> = batch.iter().map(|&i| prepared.example(i)).collect();
            let loss = trainer.step(&examples)?;
            report.batch_losses.push(loss);
        }
        report.epoch_losses.push(trainer.eval_loss(&prepared)?);
        let score = validate(config.metric, &trainer.model, &data.videos, validation)?;
        report.validation_scores.push(score);
        log::info!(
            "epoch {epoch}: loss {:.6}, validation {:.6}",
            report.epoch_losses[epoch],
            score
        );
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, trainer.model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                report.stopped_early = true;
                break;
            }
        }
    }
    let (score, epoch, mut model) = best.expect("at least one epoch ran");
    model.set_mode(BnMode::Infer);
    report.best_epoch = epoch;
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint {
            model,
            text_vocab: text_vocab.clone(),
            concept_vocab_hash: concepts.hash(),
            epoch,
            validation_score: score,
        },
        report,
    })
}
