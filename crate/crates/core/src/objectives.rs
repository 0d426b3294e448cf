//! Training objectives: the hard-negative triplet ranking loss for the
//! embedding task and the class-sensitive binary cross-entropy for concept
//! decoding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::similarity::cosine_sim_with_grad;
use crate::tensor::Tensor2;

/// Default ranking margin.
pub const DEFAULT_MARGIN: f64 = 0.2;
/// Default weight of the mentioned-concept term.
pub const DEFAULT_LAMBDA: f64 = 0.2;
/// Predictions are clipped to `[clip, 1 - clip]` before taking logs.
pub const DEFAULT_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossHyperParams {
    pub margin: f64,
    pub lambda: f64,
    pub prediction_clip: f64,
}

impl Default for LossHyperParams {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            lambda: DEFAULT_LAMBDA,
            prediction_clip: DEFAULT_CLIP,
        }
    }
}

impl LossHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig(format!("margin {} < 0", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.prediction_clip > 0.0 && self.prediction_clip < 0.1) {
            return Err(Error::InvalidConfig(format!(
                "prediction clip {} outside (0, 0.1)",
                self.prediction_clip
            )));
        }
        Ok(())
    }
}

/// Which classification loss drives the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassificationObjective {
    /// Mentioned and unmentioned classes averaged separately, weighted by
    /// lambda.
    #[default]
    ClassSensitive,
    /// Plain binary cross-entropy averaged over all classes.
    PlainBce,
}

/// Binary ground-truth concepts of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    values: Vec<bool>,
    positive_count: usize,
}

impl LabelVector {
    pub fn from_bools(values: Vec<bool>) -> Self {
        let positive_count = values.iter().filter(|v| **v).count();
        Self {
            values,
            positive_count,
        }
    }

    pub fn from_positives(len: usize, positives: impl IntoIterator<Item = usize>) -> Self {
        let mut values = vec![false; len];
        for i in positives {
            values[i] = true;
        }
        Self::from_bools(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn get(&self, i: usize) -> bool {
        self.values[i]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.then_some(i))
    }
}

/// Output of [`ranking_loss`].
#[derive(Debug, Clone)]
pub struct RankingLoss {
    /// Batch mean.
    pub loss: f64,
    pub per_pair: Vec<f64>,
    pub grad_videos: Tensor2,
    pub grad_queries: Tensor2,
}

/// Triplet ranking loss with the hardest in-batch negatives.
///
/// Row `i` of `videos` and `queries` form a positive pair. For each pair the
/// most similar non-matching video (for the query) and non-matching query (for
/// the video) are the negatives:
///
/// `max(0, c + S(v-, q) - S(v, q)) + max(0, c + S(v, q-) - S(v, q))`
///
/// with `S` the cosine similarity. Returns the batch mean and its gradients.
pub fn ranking_loss(videos: &Tensor2, queries: &Tensor2, margin: f64) -> Result<RankingLoss> {
    let groups: Vec<usize> = (0..videos.rows()).collect();
    ranking_loss_grouped(videos, queries, &groups, margin)
}

/// [`ranking_loss`] where rows sharing a group id (the same video appearing
/// with several captions) are never used as each other's negatives. A pair
/// without any admissible negative contributes zero.
pub fn ranking_loss_grouped(
    videos: &Tensor2,
    queries: &Tensor2,
    groups: &[usize],
    margin: f64,
) -> Result<RankingLoss> {
    let b = videos.rows();
    if queries.rows() != b || groups.len() != b || videos.cols() != queries.cols() {
        return Err(shape_err(format!(
            "{} videos, {} queries, {} group ids",
            b,
            queries.rows(),
            groups.len()
        )));
    }
    if b < 2 {
        return Err(Error::NoNegatives(b));
    }
    // sim[i][j] = S(video i, query j)
    let mut sim = vec![0.0; b * b];
    let mut d_sim_video = vec![Vec::new(); b * b];
    let mut d_sim_query = vec![Vec::new(); b * b];
    for i in 0..b {
        for j in 0..b {
            let (s, dv, dq) = cosine_sim_with_grad(videos.row(i), queries.row(j))?;
            sim[i * b + j] = s;
            d_sim_video[i * b + j] = dv;
            d_sim_query[i * b + j] = dq;
        }
    }
    let mut coeff = vec![0.0; b * b];
    let mut per_pair = vec![0.0; b];
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let pos = sim[i * b + i];
        let hardest = |pick: &dyn Fn(usize) -> f64| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            for j in (0..b).filter(|&j| groups[j] != groups[i]) {
                let s = pick(j);
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((j, s));
                }
            }
            best.map(|(j, _)| j)
        };
        // negative video for query i
        if let Some(j) = hardest(&|j| sim[j * b + i]) {
            let h = margin + sim[j * b + i] - pos;
            if h > 0.0 {
                per_pair[i] += h;
                coeff[j * b + i] += inv_b;
                coeff[i * b + i] -= inv_b;
            }
        }
        // negative query for video i
        if let Some(j) = hardest(&|j| sim[i * b + j]) {
            let h = margin + sim[i * b + j] - pos;
            if h > 0.0 {
                per_pair[i] += h;
                coeff[i * b + j] += inv_b;
                coeff[i * b + i] -= inv_b;
            }
        }
    }
    let mut grad_videos = Tensor2::zeros(b, videos.cols());
    let mut grad_queries = Tensor2::zeros(b, queries.cols());
    for i in 0..b {
        for j in 0..b {
            let c = coeff[i * b + j];
            if c != 0.0 {
                math::axpy(c, &d_sim_video[i * b + j], grad_videos.row_mut(i));
                math::axpy(c, &d_sim_query[i * b + j], grad_queries.row_mut(j));
            }
        }
    }
    let loss = per_pair.iter().sum::<f64>() * inv_b;
    Ok(RankingLoss {
        loss,
        per_pair,
        grad_videos,
        grad_queries,
    })
}

fn check_lengths(pred: &[f64], labels: &LabelVector) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(shape_err(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Per-class binary cross-entropy on clipped predictions.
pub fn bce_per_class(pred: &[f64], labels: &LabelVector, clip: f64) -> Result<Vec<f64>> {
    check_lengths(pred, labels)?;
    Ok(pred
        .iter()
        .zip(labels.values())
        .map(|(&p, &y)| {
            let p = p.clamp(clip, 1.0 - clip);
            if y {
                -math::ln(p)
            } else {
                -math::ln(1.0 - p)
            }
        })
        .collect())
}

/// `d BCE_i / d logit_i` for sigmoid outputs; zero where the clip is active.
fn bce_logit_grad(pred: &[f64], labels: &LabelVector, clip: f64) -> Vec<f64> {
    pred.iter()
        .zip(labels.values())
        .map(|(&p, &y)| {
            if p < clip || p > 1.0 - clip {
                0.0
            } else {
                p - if y { 1.0 } else { 0.0 }
            }
        })
        .collect()
}

/// Per-class weights of the class-sensitive loss: `lambda / P` on the `P`
/// mentioned classes and `(1 - lambda) / N` on the `N` others. An empty side
/// gets weight zero.
pub fn class_sensitive_weights(labels: &LabelVector, lambda: f64) -> Vec<f64> {
    let p = labels.positive_count();
    let n = labels.len() - p;
    let wp = if p == 0 { 0.0 } else { lambda / p as f64 };
    let wn = if n == 0 { 0.0 } else { (1.0 - lambda) / n as f64 };
    labels
        .values()
        .iter()
        .map(|&y| if y { wp } else { wn })
        .collect()
}

/// Class-sensitive loss
/// `lambda * mean(BCE over mentioned) + (1 - lambda) * mean(BCE over the rest)`,
/// with its gradient with respect to the decoder logits (`pred` being their
/// sigmoid).
pub fn class_sensitive_loss(
    pred: &[f64],
    labels: &LabelVector,
    lambda: f64,
    clip: f64,
) -> Result<(f64, Vec<f64>)> {
    let bce = bce_per_class(pred, labels, clip)?;
    let weights = class_sensitive_weights(labels, lambda);
    let loss = bce.iter().zip(&weights).map(|(l, w)| l * w).sum();
    let grad = bce_logit_grad(pred, labels, clip)
        .into_iter()
        .zip(&weights)
        .map(|(g, w)| g * w)
        .collect();
    Ok((loss, grad))
}

/// The two class-sensitive terms separately: `(mentioned mean, other mean)`.
pub fn class_sensitive_terms(pred: &[f64], labels: &LabelVector, clip: f64) -> Result<(f64, f64)> {
    let bce = bce_per_class(pred, labels, clip)?;
    let (mut pos, mut neg) = (0.0, 0.0);
    for (l, &y) in bce.iter().zip(labels.values()) {
        if y {
            pos += l;
        } else {
            neg += l;
        }
    }
    let p = labels.positive_count();
    let n = labels.len() - p;
    Ok((
        if p == 0 { 0.0 } else { pos / p as f64 },
        if n == 0 { 0.0 } else { neg / n as f64 },
    ))
}

/// Plain binary cross-entropy averaged over all classes, with its logit
/// gradient.
pub fn plain_bce_loss(pred: &[f64], labels: &LabelVector, clip: f64) -> Result<(f64, Vec<f64>)> {
    let bce = bce_per_class(pred, labels, clip)?;
    let m = bce.len().max(1) as f64;
    let loss = bce.iter().sum::<f64>() / m;
    let grad = bce_logit_grad(pred, labels, clip)
        .into_iter()
        .map(|g| g / m)
        .collect();
    Ok((loss, grad))
}

/// Dispatches on the configured classification objective.
pub fn classification_loss(
    objective: ClassificationObjective,
    pred: &[f64],
    labels: &LabelVector,
    hp: &LossHyperParams,
) -> Result<(f64, Vec<f64>)> {
    match objective {
        ClassificationObjective::ClassSensitive => {
            class_sensitive_loss(pred, labels, hp.lambda, hp.prediction_clip)
        }
        ClassificationObjective::PlainBce => plain_bce_loss(pred, labels, hp.prediction_clip),
    }
}

/// Unweighted sum of the two task losses.
pub fn combined_loss(matching: f64, classification: f64) -> f64 {
    matching + classification
}
