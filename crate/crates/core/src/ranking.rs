//! Ranked result lists with a canonical order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

/// Videos ordered by non-increasing score, ties broken by ascending video id,
/// each video at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub scorer: String,
    items: Vec<(String, f64)>,
}

/// Canonical comparison: higher score first, then ascending id.
pub fn canonical_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

impl RankedList {
    /// Sorts `scores` canonically. Duplicate ids and NaN scores are rejected.
    pub fn from_scores(
        query_id: impl Into<String>,
        scorer: impl Into<String>,
        mut scores: Vec<(String, f64)>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (id, s) in &scores {
            if s.is_nan() {
                return Err(Error::InvalidConfig(format!("NaN score for video {id}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidConfig(format!("video {id} listed twice")));
            }
        }
        scores.sort_by(canonical_order);
        Ok(Self {
            query_id: query_id.into(),
            scorer: scorer.into(),
            items: scores,
        })
    }

    /// Keeps the given order, which must already be canonical.
    pub fn from_sorted(
        query_id: impl Into<String>,
        scorer: impl Into<String>,
        items: Vec<(String, f64)>,
    ) -> Result<Self> {
        let list = Self {
            query_id: query_id.into(),
            scorer: scorer.into(),
            items,
        };
        if !list.is_canonical() {
            return Err(Error::InvalidConfig(format!(
                "list for query {} is not in canonical order",
                list.query_id
            )));
        }
        Ok(list)
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }

    pub fn score_of(&self, video_id: &str) -> Option<f64> {
        self.items
            .iter()
            .find(|(id, _)| id == video_id)
            .map(|(_, s)| *s)
    }

    /// First `depth` entries.
    pub fn truncated(&self, depth: usize) -> Self {
        Self {
            query_id: self.query_id.clone(),
            scorer: self.scorer.clone(),
            items: self.items.iter().take(depth).cloned().collect(),
        }
    }

    /// Order-preserving filter.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        Self {
            query_id: self.query_id.clone(),
            scorer: self.scorer.clone(),
            items: self
                .items
                .iter()
                .filter(|(id, _)| keep(id))
                .cloned()
                .collect(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.items.iter().all(|(id, _)| seen.insert(id.as_str()))
            && self
                .items
                .windows(2)
                .all(|w| canonical_order(&w[0], &w[1]) == Ordering::Less)
    }
}
