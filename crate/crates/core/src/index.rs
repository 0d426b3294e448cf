//! In-memory video index and the embedding, concept and fused scorers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{tokenize, StopwordList, Vocabulary};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::model::DualTaskModel;
use crate::ranking::RankedList;
use crate::similarity::cosine_sim;
use crate::tensor::Tensor2;

/// Default weight of the concept score in the fused scorer.
pub const DEFAULT_THETA: f64 = 0.3;

/// Smallest and largest stored concept probability, keeping entries strictly
/// inside `(0, 1)` even when the sigmoid saturates.
const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub video_id: String,
    pub embedding: Vec<f64>,
    pub concepts: Vec<f64>,
    /// Frames without any variation (e.g. all zero); the entry is still
    /// usable but worth a look.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoIndex {
    dim: usize,
    concept_count: usize,
    vocab_hash: u64,
    entries: Vec<IndexEntry>,
    positions: BTreeMap<String, usize>,
}

impl VideoIndex {
    /// Entries must have consistent sizes and distinct ids.
    pub fn from_entries(
        dim: usize,
        concept_count: usize,
        vocab_hash: u64,
        entries: Vec<IndexEntry>,
    ) -> Result<Self> {
        let mut positions = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.len() != dim || e.concepts.len() != concept_count {
                return Err(shape_err(format!(
                    "entry {} has sizes ({}, {}), index expects ({dim}, {concept_count})",
                    e.video_id,
                    e.embedding.len(),
                    e.concepts.len()
                )));
            }
            if positions.insert(e.video_id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("video {} indexed twice", e.video_id)));
            }
        }
        Ok(Self {
            dim,
            concept_count,
            vocab_hash,
            entries,
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn concept_count(&self) -> usize {
        self.concept_count
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, video_id: &str) -> Option<usize> {
        self.positions.get(video_id).copied()
    }

    pub fn get(&self, video_id: &str) -> Option<&IndexEntry> {
        self.position(video_id).map(|i| &self.entries[i])
    }

    /// Copy keeping only the `k` largest concept probabilities per video;
    /// the others are set to `floor`. Rankings under the concept scorer may
    /// drift accordingly.
    pub fn sparsified(&self, k: usize, floor: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            let mut order: Vec<usize> = (0..e.concepts.len()).collect();
            order.sort_by(|&a, &b| {
                e.concepts[b]
                    .partial_cmp(&e.concepts[a])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            for &i in order.iter().skip(k) {
                e.concepts[i] = floor;
            }
        }
        out
    }
}

fn has_no_variation(frames: &Tensor2) -> bool {
    let first = frames.data().first().copied().unwrap_or(0.0);
    frames.data().iter().all(|&x| x == first)
}

/// Encodes every video with running batch-norm statistics and decodes its
/// concept probabilities.
pub fn build_index<'a, I>(model: &DualTaskModel, concept_vocab_hash: u64, videos: I) -> Result<VideoIndex>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor2)>,
{
    let mut entries = Vec::new();
    for (id, frames) in videos {
        let embedding = model.encode_video(frames)?;
        let concepts: Vec<f64> = model
            .decode(&embedding)?
            .into_iter()
            .map(|p| p.clamp(PROB_FLOOR, PROB_CEIL))
            .collect();
        let degenerate = has_no_variation(frames) || math::norm(&embedding) == 0.0;
        if degenerate {
            log::warn!("video {id}: frames carry no variation; entry flagged");
        }
        entries.push(IndexEntry {
            video_id: id.to_string(),
            embedding,
            concepts,
            degenerate,
        });
    }
    VideoIndex::from_entries(
        model.config.common_dim,
        model.concept_count(),
        concept_vocab_hash,
        entries,
    )
}

/// Query concepts `c_q` as a set of vocabulary indices, each with weight 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptQueryVector {
    indices: BTreeSet<usize>,
    size: usize,
}

impl ConceptQueryVector {
    pub fn new(indices: impl IntoIterator<Item = usize>, size: usize) -> Result<Self> {
        let indices: BTreeSet<usize> = indices.into_iter().collect();
        if indices.iter().any(|&i| i >= size) {
            return Err(shape_err(format!("concept index outside vocabulary of {size}")));
        }
        Ok(Self { indices, size })
    }

    pub fn indices(&self) -> &BTreeSet<usize> {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.size];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }
}

/// Tokenizes, drops stopwords and keeps vocabulary tokens. An empty result
/// is reported as [`Error::EmptyConceptQuery`].
pub fn query_to_concepts(
    query: &str,
    vocab: &Vocabulary,
    stopwords: &StopwordList,
) -> Result<ConceptQueryVector> {
    let indices: Vec<usize> = tokenize(query)
        .iter()
        .filter(|t| !stopwords.contains(t))
        .filter_map(|t| vocab.index_of(t))
        .collect();
    if indices.is_empty() {
        return Err(Error::EmptyConceptQuery);
    }
    ConceptQueryVector::new(indices, vocab.len())
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> Result<f64> {
    match cosine_sim(a, b) {
        Err(Error::ZeroNorm) => Ok(0.0),
        other => other,
    }
}

/// Cosine between each stored embedding and `tau`.
pub fn score_embedding(index: &VideoIndex, query_id: &str, tau: &[f64]) -> Result<RankedList> {
    if tau.len() != index.dim() {
        return Err(shape_err(format!(
            "query embedding of length {}, index stores {}",
            tau.len(),
            index.dim()
        )));
    }
    let scores = index
        .entries()
        .iter()
        .map(|e| Ok((e.video_id.clone(), cosine_or_zero(&e.embedding, tau)?)))
        .collect::<Result<Vec<_>>>()?;
    RankedList::from_scores(query_id, "embedding", scores)
}

/// Cosine between each stored concept vector and the dense query concepts.
pub fn score_concept(index: &VideoIndex, query_id: &str, cq: &ConceptQueryVector) -> Result<RankedList> {
    if cq.is_empty() {
        return Err(Error::EmptyConceptQuery);
    }
    if cq.size != index.concept_count() {
        return Err(shape_err(format!(
            "concept query over {} concepts, index stores {}",
            cq.size,
            index.concept_count()
        )));
    }
    let dense = cq.dense();
    let scores = index
        .entries()
        .iter()
        .map(|e| Ok((e.video_id.clone(), cosine_or_zero(&e.concepts, &dense)?)))
        .collect::<Result<Vec<_>>>()?;
    RankedList::from_scores(query_id, "concept", scores)
}

/// `(1 - theta) * embedding + theta * concept`, per video, on raw scores.
pub fn combine_scores(
    embedding: &RankedList,
    concept: &RankedList,
    theta: f64,
    query_id: &str,
) -> Result<RankedList> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidConfig(format!("theta {theta} outside [0, 1]")));
    }
    let concept_scores: BTreeMap<&str, f64> = concept.items().iter().map(|(v, s)| (v.as_str(), *s)).collect();
    if concept_scores.len() != embedding.len() {
        return Err(shape_err("fused lists cover different videos"));
    }
    let scores = embedding
        .items()
        .iter()
        .map(|(v, e)| {
            let c = concept_scores
                .get(v.as_str())
                .ok_or_else(|| Error::UnknownVideo(v.clone()))?;
            Ok((v.clone(), (1.0 - theta) * e + theta * c))
        })
        .collect::<Result<Vec<_>>>()?;
    RankedList::from_scores(query_id, format!("combined({theta})"), scores)
}

/// Which score drives a search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Embedding,
    Concept,
    /// Fused with the given concept weight.
    Combined(f64),
}

/// A scorer could not be used for a query and another one stood in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// No query token maps to a concept: embedding scores only.
    EmbeddingOnly,
    /// No query token is in the text vocabulary: concept scores only.
    ConceptOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub list: RankedList,
    pub fallback: Option<Fallback>,
}

/// Everything needed to turn query text into ranked lists.
#[derive(Debug, Clone, Copy)]
pub struct SearchEngine<'a> {
    pub index: &'a VideoIndex,
    pub model: &'a DualTaskModel,
    pub text_vocab: &'a Vocabulary,
    pub concepts: &'a Vocabulary,
    pub stopwords: &'a StopwordList,
}

impl<'a> SearchEngine<'a> {
    pub fn new(
        index: &'a VideoIndex,
        model: &'a DualTaskModel,
        text_vocab: &'a Vocabulary,
        concepts: &'a Vocabulary,
        stopwords: &'a StopwordList,
    ) -> Result<Self> {
        if index.vocab_hash() != concepts.hash() {
            return Err(Error::VocabularyMismatch {
                expected: index.vocab_hash(),
                found: concepts.hash(),
            });
        }
        if index.dim() != model.config.common_dim || index.concept_count() != model.concept_count() {
            return Err(shape_err("index was built with a different model shape"));
        }
        if text_vocab.len() != model.config.vocab_size {
            return Err(shape_err("text vocabulary does not match the model"));
        }
        Ok(Self {
            index,
            model,
            text_vocab,
            concepts,
            stopwords,
        })
    }

    /// `tau(q)`; [`Error::EmptyQuery`] when no token is in the text
    /// vocabulary.
    pub fn embed_query(&self, query: &str) -> Result<Vec<f64>> {
        let tokens = self.text_vocab.encode(query);
        if tokens.is_empty() {
            return Err(Error::EmptyQuery);
        }
        self.model.encode_query(&tokens)
    }

    pub fn concept_query(&self, query: &str) -> Result<ConceptQueryVector> {
        query_to_concepts(query, self.concepts, self.stopwords)
    }

    pub fn search(&self, query_id: &str, query: &str, scorer: Scorer) -> Result<SearchResult> {
        let tau = match self.embed_query(query) {
            Ok(t) => Some(t),
            Err(Error::EmptyQuery) => None,
            Err(e) => return Err(e),
        };
        let cq = match self.concept_query(query) {
            Ok(c) => Some(c),
            Err(Error::EmptyConceptQuery) => None,
            Err(e) => return Err(e),
        };
        let emb = |tau: &[f64]| score_embedding(self.index, query_id, tau);
        let con = |cq: &ConceptQueryVector| score_concept(self.index, query_id, cq);
        let (list, fallback) = match (scorer, tau, cq) {
            (_, None, None) => return Err(Error::EmptyQuery),
            (Scorer::Embedding, Some(t), _) => (emb(&t)?, None),
            (Scorer::Concept, _, Some(c)) => (con(&c)?, None),
            (Scorer::Combined(theta), Some(t), Some(c)) => {
                (combine_scores(&emb(&t)?, &con(&c)?, theta, query_id)?, None)
            }
            (_, Some(t), None) => (emb(&t)?, Some(Fallback::EmbeddingOnly)),
            (_, None, Some(c)) => (con(&c)?, Some(Fallback::ConceptOnly)),
        };
        if let Some(f) = fallback {
            log::info!("query {query_id}: scorer fallback {f:?}");
        }
        Ok(SearchResult { list, fallback })
    }
}

/// Fused search; falls back to embedding-only when the query has no
/// concept token.
pub fn search_combined(
    engine: &SearchEngine<'_>,
    query_id: &str,
    query: &str,
    theta: f64,
) -> Result<SearchResult> {
    engine.search(query_id, query, Scorer::Combined(theta))
}
