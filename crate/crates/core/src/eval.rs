//! Retrieval and decoding metrics: average precision, inferred AP over
//! stratified sampled judgments, concept recall@k and the paired
//! randomization test.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::interpret::DecodedConceptList;
use crate::ranking::RankedList;

/// Default run depth.
pub const DEFAULT_RUN_DEPTH: usize = 1000;

/// Judgment of one pooled video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relevance {
    Relevant,
    Nonrelevant,
    /// Pooled but not sampled for assessment.
    Unjudged,
}

impl Relevance {
    /// `1`, `0` and `-1` as in judgment files.
    pub fn from_code(code: i32) -> Result<Self> {
        match code {
            1 => Ok(Self::Relevant),
            0 => Ok(Self::Nonrelevant),
            -1 => Ok(Self::Unjudged),
            _ => Err(Error::InvalidConfig(format!("relevance code {code} not in {{-1, 0, 1}}"))),
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Self::Relevant => 1,
            Self::Nonrelevant => 0,
            Self::Unjudged => -1,
        }
    }
}

/// Pool depths `depth_from..=depth_to` (1-based) sampled at `rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stratum {
    pub id: u32,
    pub depth_from: usize,
    pub depth_to: usize,
    pub rate: f64,
}

/// Judgments of one query with their sampling strata. Videos absent from
/// `judgments` were not pooled and count as nonrelevant.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentSet {
    pub query_id: String,
    judgments: BTreeMap<String, (Relevance, u32)>,
    strata: BTreeMap<u32, Stratum>,
}

impl JudgmentSet {
    pub fn new(
        query_id: impl Into<String>,
        judgments: BTreeMap<String, (Relevance, u32)>,
        strata: impl IntoIterator<Item = Stratum>,
    ) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for s in strata {
            if !(s.rate > 0.0 && s.rate <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "stratum {} has rate {} outside (0, 1]",
                    s.id, s.rate
                )));
            }
            if s.depth_from == 0 || s.depth_to < s.depth_from {
                return Err(Error::InvalidConfig(format!("stratum {} has an empty depth range", s.id)));
            }
            if by_id.insert(s.id, s).is_some() {
                return Err(Error::InvalidConfig(format!("stratum {} defined twice", s.id)));
            }
        }
        let ranges: Vec<&Stratum> = by_id.values().collect();
        for (i, a) in ranges.iter().enumerate() {
            for b in &ranges[i + 1..] {
                if a.depth_from <= b.depth_to && b.depth_from <= a.depth_to {
                    return Err(Error::InvalidConfig(format!(
                        "strata {} and {} overlap",
                        a.id, b.id
                    )));
                }
            }
        }
        for (v, (_, s)) in &judgments {
            if !by_id.contains_key(s) {
                return Err(Error::InvalidConfig(format!("video {v} refers to unknown stratum {s}")));
            }
        }
        Ok(Self {
            query_id: query_id.into(),
            judgments,
            strata: by_id,
        })
    }

    /// Every listed video judged, one stratum at rate 1.
    pub fn complete(query_id: impl Into<String>, relevance: &BTreeMap<String, bool>) -> Self {
        let n = relevance.len().max(1);
        let judgments = relevance
            .iter()
            .map(|(v, &r)| {
                let rel = if r { Relevance::Relevant } else { Relevance::Nonrelevant };
                (v.clone(), (rel, 1))
            })
            .collect();
        let stratum = Stratum {
            id: 1,
            depth_from: 1,
            depth_to: n,
            rate: 1.0,
        };
        Self::new(query_id, judgments, [stratum]).expect("a single full-rate stratum is valid")
    }

    pub fn judgment(&self, video_id: &str) -> Option<(Relevance, u32)> {
        self.judgments.get(video_id).copied()
    }

    pub fn judgments(&self) -> &BTreeMap<String, (Relevance, u32)> {
        &self.judgments
    }

    pub fn strata(&self) -> impl Iterator<Item = &Stratum> {
        self.strata.values()
    }

    /// Videos judged relevant.
    pub fn relevant_set(&self) -> BTreeSet<String> {
        self.judgments
            .iter()
            .filter(|(_, (r, _))| *r == Relevance::Relevant)
            .map(|(v, _)| v.clone())
            .collect()
    }

    /// Judged videos as `video -> relevant`.
    pub fn judged(&self) -> BTreeMap<String, bool> {
        self.judgments
            .iter()
            .filter(|(_, (r, _))| *r != Relevance::Unjudged)
            .map(|(v, (r, _))| (v.clone(), *r == Relevance::Relevant))
            .collect()
    }
}

/// Mean over relevant retrieved ranks `r` of precision@r, divided by the
/// number of relevant videos.
pub fn average_precision(list: &RankedList, relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::UndefinedMetric("average precision needs a relevant video"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, v) in list.video_ids().enumerate() {
        if relevant.contains(v) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Inferred AP with its estimation warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct InferredAp {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Stratified inferred AP.
///
/// For a judged relevant video at rank `k` in stratum `s`, the expected
/// precision at `k` is `1/k + (1/k) * sum_t n_t * p_t`, where `n_t` counts
/// pooled videos of stratum `t` above `k` and `p_t` is the relevant fraction
/// among the judged ones (0.5 when none above `k` is judged). Each such term
/// is weighted by `1 / rate_s`, and the sum is divided by the estimated
/// number of relevant videos `sum_s relevant_s / rate_s`.
pub fn inferred_ap(list: &RankedList, judgments: &JudgmentSet) -> Result<InferredAp> {
    let mut warnings = Vec::new();
    let mut estimated_relevant = 0.0;
    for s in judgments.strata() {
        let (mut rel, mut judged) = (0usize, 0usize);
        for (r, sid) in judgments.judgments.values() {
            if *sid == s.id && *r != Relevance::Unjudged {
                judged += 1;
                if *r == Relevance::Relevant {
                    rel += 1;
                }
            }
        }
        if judged == 0 {
            warnings.push(format!(
                "stratum {} is sampled at rate {} but has no judged video",
                s.id, s.rate
            ));
        }
        estimated_relevant += rel as f64 / s.rate;
    }
    if estimated_relevant == 0.0 {
        return Ok(InferredAp {
            value: 0.0,
            warnings,
        });
    }
    // per stratum: (pooled, relevant, nonrelevant) above the current rank
    let mut above: BTreeMap<u32, (usize, usize, usize)> =
        judgments.strata.keys().map(|&id| (id, (0, 0, 0))).collect();
    let mut sum = 0.0;
    let mut smoothed = false;
    for (i, v) in list.video_ids().enumerate() {
        let k = (i + 1) as f64;
        let Some((rel, sid)) = judgments.judgment(v) else {
            continue;
        };
        if rel == Relevance::Relevant {
            let mut expected = 1.0;
            for &(n, r, nr) in above.values() {
                if n == 0 {
                    continue;
                }
                let p = if r + nr > 0 {
                    r as f64 / (r + nr) as f64
                } else {
                    smoothed = true;
                    0.5
                };
                expected += n as f64 * p;
            }
            sum += expected / k / judgments.strata[&sid].rate;
        }
        let cell = above.get_mut(&sid).expect("validated stratum");
        cell.0 += 1;
        match rel {
            Relevance::Relevant => cell.1 += 1,
            Relevance::Nonrelevant => cell.2 += 1,
            Relevance::Unjudged => {}
        }
    }
    if smoothed {
        warnings.push("precision above a relevant video estimated from a stratum without judged videos".into());
    }
    for w in &warnings {
        log::warn!("query {}: {w}", judgments.query_id);
    }
    Ok(InferredAp {
        value: sum / estimated_relevant,
        warnings,
    })
}

/// Draws a stratified sample of complete judgments. `pool` lists the pooled
/// videos by depth; in each stratum `round(rate * n)` videos (at least one)
/// are judged and the rest marked unjudged. The stored rate is the realized
/// fraction.
pub fn sample_judgments(
    query_id: &str,
    pool: &[String],
    relevant: &BTreeSet<String>,
    strata: &[Stratum],
    seed: u64,
) -> Result<JudgmentSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut judgments = BTreeMap::new();
    let mut realized = Vec::new();
    for s in strata {
        let lo = s.depth_from.saturating_sub(1).min(pool.len());
        let hi = s.depth_to.min(pool.len());
        let members = &pool[lo..hi];
        if members.is_empty() {
            realized.push(*s);
            continue;
        }
        let n = members.len();
        let take = (libm::round(s.rate * n as f64) as usize).clamp(1, n);
        let picked: BTreeSet<usize> = index::sample(&mut rng, n, take).into_iter().collect();
        for (i, v) in members.iter().enumerate() {
            let rel = if !picked.contains(&i) {
                Relevance::Unjudged
            } else if relevant.contains(v) {
                Relevance::Relevant
            } else {
                Relevance::Nonrelevant
            };
            judgments.insert(v.clone(), (rel, s.id));
        }
        realized.push(Stratum {
            rate: take as f64 / n as f64,
            ..*s
        });
    }
    JudgmentSet::new(query_id, judgments, realized)
}

/// `|top-k decoded ∩ truth| / min(k, |truth|)`.
pub fn concept_recall_at_k(
    decoded: &DecodedConceptList,
    ground_truth: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    if ground_truth.is_empty() {
        return Err(Error::UndefinedMetric("recall needs a non-empty ground truth"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let hits = decoded
        .tokens()
        .take(k)
        .filter(|t| ground_truth.contains(*t))
        .count();
    Ok(hits as f64 / k.min(ground_truth.len()) as f64)
}

fn paired_differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} scores against {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("the randomization test needs at least 2 queries".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

fn abs_signed_mean(d: &[f64], mut flip: impl FnMut(usize) -> bool) -> f64 {
    let s: f64 = d
        .iter()
        .enumerate()
        .map(|(i, x)| if flip(i) { -x } else { *x })
        .sum();
    (s / d.len() as f64).abs()
}

/// Two-sided paired randomization test. Each iteration swaps every query's
/// pair of scores with probability 1/2; the p-value is
/// `(1 + #{|mean diff| >= observed}) / (iterations + 1)`.
pub fn randomization_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    let d = paired_differences(a, b)?;
    let observed = abs_signed_mean(&d, |_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flips = Vec::with_capacity(d.len());
    let mut at_least = 0usize;
    for _ in 0..iterations {
        flips.clear();
        flips.extend((0..d.len()).map(|_| rng.random::<bool>()));
        if abs_signed_mean(&d, |i| flips[i]) >= observed {
            at_least += 1;
        }
    }
    Ok((1 + at_least) as f64 / (iterations + 1) as f64)
}

/// Exact p-value over all `2^n` swap patterns (`n <= 24`).
pub fn randomization_test_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = paired_differences(a, b)?;
    if d.len() > 24 {
        return Err(Error::InvalidConfig("exact enumeration limited to 24 queries".into()));
    }
    let observed = abs_signed_mean(&d, |_| false);
    let patterns = 1u64 << d.len();
    let at_least = (0..patterns)
        .filter(|mask| abs_signed_mean(&d, |i| mask >> i & 1 == 1) >= observed)
        .count();
    Ok(at_least as f64 / patterns as f64)
}

/// Ranked lists of several queries, each cut at a fixed depth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub tag: String,
    pub lists: BTreeMap<String, RankedList>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            lists: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, list: &RankedList, depth: usize) {
        self.lists.insert(list.query_id.clone(), list.truncated(depth));
    }
}

/// Per-query inferred AP of a run; queries without judgments are skipped.
pub fn evaluate_run(run: &RunFile, judgments: &BTreeMap<String, JudgmentSet>) -> Result<BTreeMap<String, InferredAp>> {
    let mut out = BTreeMap::new();
    for (q, list) in &run.lists {
        if let Some(j) = judgments.get(q) {
            out.insert(q.to_string(), inferred_ap(list, j)?);
        }
    }
    Ok(out)
}

/// Arithmetic mean, 0 for no values.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
