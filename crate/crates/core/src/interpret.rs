//! Decoded concepts per video and keyword-based pruning of result lists.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::index::{IndexEntry, VideoIndex};
use crate::ranking::RankedList;

pub const DEFAULT_CONCEPT_DEPTH: usize = 30;
pub const DEFAULT_RESULT_DEPTH: usize = 10;

/// Top concepts of one video, most probable first, ties by ascending
/// vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedConceptList {
    pub video_id: String,
    pub concepts: Vec<(String, f64)>,
    pub k: usize,
}

impl DecodedConceptList {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(|(t, _)| t.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens().any(|t| t == token)
    }
}

/// Indices of the `k` largest entries of `probs`, canonical ties.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// The `min(k, m)` most probable concepts of `entry`.
pub fn decode_concepts(entry: &IndexEntry, vocab: &Vocabulary, k: usize) -> Result<DecodedConceptList> {
    if k == 0 {
        return Err(Error::InvalidConfig("concept depth must be at least 1".into()));
    }
    if entry.concepts.len() != vocab.len() {
        return Err(Error::Shape(format!(
            "{} concept scores for a vocabulary of {}",
            entry.concepts.len(),
            vocab.len()
        )));
    }
    let concepts = top_k_indices(&entry.concepts, k)
        .into_iter()
        .map(|i| (vocab.token(i).expect("index in range").to_string(), entry.concepts[i]))
        .collect();
    Ok(DecodedConceptList {
        video_id: entry.video_id.clone(),
        concepts,
        k,
    })
}

/// Keywords every kept video must show among its top decoded concepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneSpec {
    pub keywords: Vec<String>,
    pub concept_depth: usize,
    pub result_depth: usize,
}

impl PruneSpec {
    pub fn new(keywords: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let keywords: Vec<String> = keywords
            .into_iter()
            .map(|k| k.into().trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return Err(Error::InvalidConfig("a prune spec needs at least one keyword".into()));
        }
        Ok(Self {
            keywords,
            concept_depth: DEFAULT_CONCEPT_DEPTH,
            result_depth: DEFAULT_RESULT_DEPTH,
        })
    }
}

/// Partition of the top of a result list.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub kept: RankedList,
    pub removed: RankedList,
    pub warnings: Vec<String>,
}

/// Splits the top `result_depth` videos of `list` into those whose top
/// `concept_depth` decoded concepts contain every keyword and the rest.
/// Keywords missing from the vocabulary never match.
pub fn prune_by_keywords(
    list: &RankedList,
    index: &VideoIndex,
    spec: &PruneSpec,
    vocab: &Vocabulary,
) -> Result<PruneOutcome> {
    if list.is_empty() {
        return Err(Error::InvalidConfig("cannot prune an empty list".into()));
    }
    let mut warnings = Vec::new();
    for kw in &spec.keywords {
        if !vocab.contains(kw) {
            let w = format!("keyword {kw:?} is not in the concept vocabulary and can never match");
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    let top = list.truncated(spec.result_depth);
    let mut keep = BTreeMap::new();
    for video in top.video_ids() {
        let entry = index.get(video).ok_or_else(|| Error::UnknownVideo(video.to_string()))?;
        let decoded = decode_concepts(entry, vocab, spec.concept_depth)?;
        keep.insert(video.to_string(), spec.keywords.iter().all(|k| decoded.contains(k)));
    }
    Ok(PruneOutcome {
        kept: top.filtered(|v| keep[v]),
        removed: top.filtered(|v| !keep[v]),
        warnings,
    })
}

/// Confusion cells of a pruning decision against relevance judgments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PruningReport {
    pub relevant_kept: usize,
    pub nonrelevant_kept: usize,
    pub relevant_removed: usize,
    pub nonrelevant_removed: usize,
    pub unjudged_kept: usize,
    pub unjudged_removed: usize,
    /// Relevant fraction of kept + removed; unjudged count as nonrelevant.
    pub precision_before: f64,
    /// Relevant fraction of kept; 0 when nothing is kept.
    pub precision_after: f64,
}

/// Tabulates `kept` and `removed` against `judgments` (`true` = relevant);
/// videos without a judgment land in the unjudged cells.
pub fn pruning_report(
    kept: &RankedList,
    removed: &RankedList,
    judgments: &BTreeMap<String, bool>,
) -> PruningReport {
    let mut r = PruningReport::default();
    for v in kept.video_ids() {
        match judgments.get(v) {
            Some(true) => r.relevant_kept += 1,
            Some(false) => r.nonrelevant_kept += 1,
            None => r.unjudged_kept += 1,
        }
    }
    for v in removed.video_ids() {
        match judgments.get(v) {
            Some(true) => r.relevant_removed += 1,
            Some(false) => r.nonrelevant_removed += 1,
            None => r.unjudged_removed += 1,
        }
    }
    let total = kept.len() + removed.len();
    if total > 0 {
        r.precision_before = (r.relevant_kept + r.relevant_removed) as f64 / total as f64;
    }
    if !kept.is_empty() {
        r.precision_after = r.relevant_kept as f64 / kept.len() as f64;
    }
    r
}
