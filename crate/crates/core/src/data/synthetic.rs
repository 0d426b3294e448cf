//! Seeded synthetic corpus with known latent concepts.
//!
//! Each latent concept has a Gaussian prototype in frame-feature space and a
//! name. A video draws a few concepts; every frame is the sum of their
//! prototypes plus Gaussian noise, and every caption mentions the concept
//! names mixed with stopword fillers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::stopwords::StopwordList;
use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Plain words used as the first concept names.
const WORDS: &[&str] = &[
    "cat", "dog", "palm", "trees", "beach", "car", "bicycle", "person", "backpack", "wearing",
    "two", "horse", "boat", "snow", "mountain", "kitchen", "guitar", "drinking", "beverage",
    "wine", "beer", "bridge", "river", "city", "street", "child", "ball", "bird", "flag", "train",
    "airplane", "fire", "rain", "desk", "phone", "baby", "sheep", "tractor", "crowd", "singer",
    "piano", "forest", "road", "bus", "truck", "lake", "tower", "dancing", "cooking", "running",
    "swimming", "painting", "reading", "window", "door", "table", "chair", "lamp", "clock", "cup",
];

/// Fillers placed between concept names; all of them are stopwords.
const FILLERS: &[&str] = &["a", "the", "with", "and", "of", "in", "is", "there", "some", "on"];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_videos: usize,
    pub n_latent_concepts: usize,
    pub frame_dim: usize,
    pub frames_per_video: usize,
    pub captions_per_video: usize,
    /// Inclusive range of concepts per video, drawn uniformly.
    pub concepts_per_video: (usize, usize),
    /// Standard deviation of the per-frame noise.
    pub noise: f64,
    /// Probability that a caption mentions each of its video's concepts; at
    /// least one is always mentioned.
    pub mention_prob: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, n_videos: usize, n_latent_concepts: usize) -> Self {
        Self {
            seed,
            n_videos,
            n_latent_concepts,
            frame_dim: 32,
            frames_per_video: 8,
            captions_per_video: 2,
            concepts_per_video: (1, 4),
            noise: 0.5,
            mention_prob: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("n_videos", self.n_videos),
            ("n_latent_concepts", self.n_latent_concepts),
            ("frame_dim", self.frame_dim),
            ("frames_per_video", self.frames_per_video),
            ("captions_per_video", self.captions_per_video),
            ("concepts_per_video minimum", self.concepts_per_video.0),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.concepts_per_video.1 < self.concepts_per_video.0 {
            return Err(Error::InvalidConfig("empty concepts_per_video range".into()));
        }
        if !(0.0..=1.0).contains(&self.mention_prob) || !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig("mention_prob or noise out of range".into()));
        }
        Ok(())
    }

    /// Concepts per video after clamping to the number of latent concepts.
    pub fn effective_range(&self) -> (usize, usize) {
        let n = self.n_latent_concepts;
        (self.concepts_per_video.0.min(n), self.concepts_per_video.1.min(n))
    }

    /// Probability that a given concept is drawn for a given video.
    pub fn concept_probability(&self) -> f64 {
        let (lo, hi) = self.effective_range();
        let mean = (lo + hi) as f64 / 2.0;
        mean / self.n_latent_concepts as f64
    }
}

/// Generated dataset together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub concept_names: Vec<String>,
    /// Latent concepts of each video, ascending.
    pub video_concepts: BTreeMap<String, Vec<usize>>,
    pub prototypes: Tensor2,
}

impl SyntheticCorpus {
    /// Videos showing every concept in `all` and none in `none`.
    pub fn videos_with(&self, all: &[usize], none: &[usize]) -> BTreeSet<String> {
        self.video_concepts
            .iter()
            .filter(|(_, cs)| all.iter().all(|c| cs.contains(c)) && !none.iter().any(|c| cs.contains(c)))
            .map(|(v, _)| v.clone())
            .collect()
    }
}

fn syllable(i: usize) -> [u8; 2] {
    [CONSONANTS[i % CONSONANTS.len()], VOWELS[(i / CONSONANTS.len()) % VOWELS.len()]]
}

/// `n` distinct concept names: the plain word list first, then deterministic
/// three-syllable pseudo-words.
pub fn concept_names(n: usize) -> Vec<String> {
    let stop = StopwordList::english();
    let mut names: Vec<String> = WORDS.iter().take(n).map(|w| w.to_string()).collect();
    let mut taken: BTreeSet<String> = names.iter().cloned().collect();
    let per = CONSONANTS.len() * VOWELS.len();
    let mut i = 0;
    while names.len() < n {
        let mut w = Vec::with_capacity(6);
        w.extend_from_slice(&syllable(i % per));
        w.extend_from_slice(&syllable((i / per) % per));
        w.extend_from_slice(&syllable((i / (per * per)) % per));
        let w = String::from_utf8(w).expect("ascii");
        if !stop.contains(&w) && taken.insert(w.clone()) {
            names.push(w);
        }
        i += 1;
    }
    names
}

/// Deterministic corpus for `spec`; the same spec always yields the same
/// corpus.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_latent_concepts;
    let names = concept_names(n);
    let proto_data: Vec<f64> = (0..n * spec.frame_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let prototypes = Tensor2::from_vec(n, spec.frame_dim, proto_data)?;
    let (lo, hi) = spec.effective_range();
    let width = format!("{}", spec.n_videos).len().max(4);

    let mut videos = BTreeMap::new();
    let mut captions = BTreeMap::new();
    let mut video_concepts = BTreeMap::new();
    for v in 0..spec.n_videos {
        let id = format!("vid{v:0width$}");
        let k = rng.random_range(lo..=hi);
        let mut concepts = index::sample(&mut rng, n, k).into_vec();
        concepts.sort_unstable();

        let mut frames = Tensor2::zeros(spec.frames_per_video, spec.frame_dim);
        for t in 0..spec.frames_per_video {
            let row = frames.row_mut(t);
            for &c in &concepts {
                for (x, p) in row.iter_mut().zip(prototypes.row(c)) {
                    *x += p;
                }
            }
            for x in row.iter_mut() {
                *x += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }

        let mut caps = Vec::with_capacity(spec.captions_per_video);
        for _ in 0..spec.captions_per_video {
            let mut mentioned: Vec<usize> = concepts
                .iter()
                .copied()
                .filter(|_| rng.random_bool(spec.mention_prob))
                .collect();
            if mentioned.is_empty() {
                mentioned.push(*concepts.choose(&mut rng).expect("k >= 1"));
            }
            let mut words: Vec<&str> = mentioned.iter().map(|&c| names[c].as_str()).collect();
            for _ in 0..rng.random_range(1..=3) {
                let at = rng.random_range(0..=words.len());
                words.insert(at, FILLERS.choose(&mut rng).expect("non-empty"));
            }
            caps.push(words.join(" "));
        }
        videos.insert(id.clone(), frames);
        captions.insert(id.clone(), caps);
        video_concepts.insert(id, concepts);
    }
    Ok(SyntheticCorpus {
        dataset: Dataset::new(videos, captions)?,
        concept_names: names,
        video_concepts,
        prototypes,
    })
}
