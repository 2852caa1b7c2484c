//! User-based collaborative filtering over past session vectors.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::KnowledgeBank;
use crate::feature::FeatureVector;
use crate::ErrorCode;

/// Tolerance used when comparing a weighted mean against the `rho` cutoff,
/// so that exact boundary cases survive floating-point rounding.
pub const SCORE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfParams {
    /// Maximum number of peer sessions.
    pub k: usize,
    /// Minimum cosine similarity for a peer.
    pub theta: f64,
    /// Minimum similarity-weighted mean rating for a candidate.
    pub rho: f64,
}

impl Default for CfParams {
    fn default() -> Self {
        CfParams {
            k: 5,
            theta: 0.5,
            rho: 3.0,
        }
    }
}

impl CfParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(1.0..=5.0).contains(&self.rho) {
            return Err(format!("rho must lie in [1, 5], got {}", self.rho));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CfError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

impl ErrorCode for CfError {
    fn code(&self) -> &'static str {
        "DimensionMismatch"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub session_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rec_id: String,
    pub weighted_score: f64,
    /// Number of peer ratings that contributed.
    pub support: usize,
}

/// Recommendations top-rated by similar peers, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, rec_id: &str) -> bool {
        self.get(rec_id).is_some()
    }

    pub fn get(&self, rec_id: &str) -> Option<&Candidate> {
        self.entries.iter().find(|c| c.rec_id == rec_id)
    }

    pub fn rec_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.rec_id.as_str())
    }
}

/// Cosine of the angle between two equal-length slices. Zero when either
/// side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, CfError> {
    if a.len() != b.len() {
        return Err(CfError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64, CfError> {
    cosine(&a.values, &b.values)
}

/// At most `k` past sessions with similarity `>= theta`, best first, ties
/// by session id. Sessions under another schema version and the session
/// named by `exclude` are ignored.
pub fn similar_sessions(
    query: &FeatureVector,
    bank: &KnowledgeBank,
    k: usize,
    theta: f64,
    exclude: Option<&str>,
) -> Vec<SimilarityScore> {
    let mut scored: Vec<SimilarityScore> = bank
        .sessions()
        .filter(|s| Some(s.session_id.as_str()) != exclude)
        .filter(|s| s.feature_vector.schema_version == query.schema_version)
        .filter_map(|s| {
            let score = cosine_similarity(query, &s.feature_vector).ok()?;
            (score >= theta).then(|| SimilarityScore {
                session_id: s.session_id.clone(),
                score,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    scored.truncate(k);
    scored
}

/// Similarity-weighted mean rating of each active recommendation rated by
/// at least one peer, keeping those at or above `rho`.
///
/// Peers with zero similarity carry no weight and are left out entirely.
pub fn candidate_set(peers: &[SimilarityScore], bank: &KnowledgeBank, rho: f64) -> CandidateSet {
    // rec_id -> (similarity, rating) of every contributing peer
    let mut acc: BTreeMap<&str, Vec<(f64, u8)>> = BTreeMap::new();
    for peer in peers.iter().filter(|p| p.score > 0.0) {
        for rating in bank.ratings_by_session(&peer.session_id) {
            if bank.is_active(&rating.rec_id) {
                acc.entry(rating.rec_id.as_str())
                    .or_default()
                    .push((peer.score, rating.score));
            }
        }
    }
    let mut entries: Vec<Candidate> = acc
        .into_iter()
        .map(|(rec_id, votes)| Candidate {
            rec_id: rec_id.to_string(),
            weighted_score: weighted_mean(&votes),
            support: votes.len(),
        })
        .filter(|c| c.weighted_score >= rho - SCORE_EPSILON)
        .collect();
    entries.sort_by(|a, b| {
        b.weighted_score
            .partial_cmp(&a.weighted_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.rec_id.cmp(&b.rec_id))
    });
    CandidateSet { entries }
}

/// Weighted mean taken as an offset from the lowest rating, so a single
/// rating or a run of equal ratings comes out exact.
fn weighted_mean(votes: &[(f64, u8)]) -> f64 {
    let base = votes.iter().map(|&(_, r)| r).min().unwrap_or(0);
    let (mut offset, mut total) = (0.0, 0.0);
    for &(w, r) in votes {
        offset += w * f64::from(r - base);
        total += w;
    }
    f64::from(base) + offset / total
}
