//! Tokenization, vocabularies, label vectors, datasets and batching.

mod stopwords;
pub mod synthetic;

pub use stopwords::{StopwordList, ENGLISH as ENGLISH_STOPWORDS};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::LabelVector;
use crate::tensor::Tensor2;

/// Default minimum number of distinct captions a token must appear in.
pub const DEFAULT_MIN_COUNT: usize = 5;

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Tokens with the number of distinct captions they occur in, ordered by
/// descending count and then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<(String, usize)>,
    index: BTreeMap<String, usize>,
}

fn canonical(a: &(String, usize), b: &(String, usize)) -> core::cmp::Ordering {
    b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs, sorting them into
    /// canonical order. Duplicate or empty tokens are rejected.
    pub fn from_entries(mut entries: Vec<(String, usize)>) -> Result<Self> {
        entries.sort_by(canonical);
        let mut index = BTreeMap::new();
        for (i, (tok, _)) in entries.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::InvalidConfig("empty vocabulary token".into()));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("token {tok:?} listed twice")));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, usize)] {
        &self.entries
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.entries.get(i).map(|(t, _)| t.as_str())
    }

    pub fn count(&self, i: usize) -> Option<usize> {
        self.entries.get(i).map(|(_, c)| *c)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Indices of the in-vocabulary tokens of `text`, in order, duplicates
    /// kept.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .filter_map(|t| self.index_of(t))
            .collect()
    }

    /// First 8 bytes (big-endian) of the SHA-256 of the canonical
    /// `token\tcount\n` listing.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (tok, count) in &self.entries {
            h.update(tok.as_bytes());
            h.update(b"\t");
            h.update(count.to_string().as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        u64::from_be_bytes(first)
    }
}

/// Counts, for each token, the distinct captions containing it, and keeps
/// tokens reaching `min_count` that are not stopwords.
pub fn build_vocabulary<'a, I>(
    captions: I,
    min_count: usize,
    stopwords: &StopwordList,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for caption in captions {
        let distinct: BTreeSet<String> = tokenize(caption).into_iter().collect();
        for tok in distinct {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, c)| *c >= min_count && !stopwords.contains(tok))
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    Vocabulary::from_entries(entries)
}

/// Multi-hot label vector of a video: concept `i` is positive iff its token
/// occurs in any of the video's captions. An all-zero vector is allowed and
/// logged.
pub fn caption_labels(video_id: &str, captions: &[String], vocab: &Vocabulary) -> LabelVector {
    let positives: BTreeSet<usize> = captions
        .iter()
        .flat_map(|c| tokenize(c))
        .filter_map(|t| vocab.index_of(&t))
        .collect();
    if positives.is_empty() {
        log::warn!("video {video_id}: captions contain no vocabulary concept");
    }
    LabelVector::from_positives(vocab.len(), positives)
}

/// One training example: a video and one of its captions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoTextPair {
    pub video_id: String,
    pub caption: String,
}

/// Videos, their captions and the caption pairs derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: BTreeMap<String, Tensor2>,
    pub captions: BTreeMap<String, Vec<String>>,
    pub pairs: Vec<VideoTextPair>,
}

impl Dataset {
    /// Pairs are generated in video-id order, captions in file order.
    pub fn new(
        videos: BTreeMap<String, Tensor2>,
        captions: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        for (vid, caps) in &captions {
            if !videos.contains_key(vid) {
                return Err(Error::UnknownVideo(vid.clone()));
            }
            for c in caps {
                if c.trim().is_empty() {
                    return Err(Error::InvalidConfig(format!("empty caption for video {vid}")));
                }
                pairs.push(VideoTextPair {
                    video_id: vid.clone(),
                    caption: c.clone(),
                });
            }
        }
        Ok(Self {
            videos,
            captions,
            pairs,
        })
    }

    pub fn all_captions(&self) -> impl Iterator<Item = &str> {
        self.captions.values().flatten().map(|c| c.as_str())
    }

    pub fn captions_of(&self, video_id: &str) -> &[String] {
        self.captions.get(video_id).map_or(&[], |c| c.as_slice())
    }
}

/// Seeded shuffle of pair indices for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub permutation: Vec<usize>,
}

impl BatchPlan {
    pub fn new(seed: u64, epoch: u64, batch_size: usize, n_pairs: usize) -> Self {
        let mut permutation: Vec<usize> = (0..n_pairs).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        permutation.shuffle(&mut rng);
        Self {
            seed,
            batch_size,
            permutation,
        }
    }

    /// In-order batches; a trailing batch of a single pair is dropped since
    /// neither the ranking loss nor train-mode batch norm is defined for it.
    pub fn batches(&self) -> Vec<&[usize]> {
        sequential_batches(&self.permutation, self.batch_size)
    }
}

/// Consecutive chunks of `batch_size`, without a trailing singleton.
pub fn sequential_batches(items: &[usize], batch_size: usize) -> Vec<&[usize]> {
    items
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .collect()
}
