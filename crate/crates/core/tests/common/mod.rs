//! Independent reference implementations and generators for property tests.
#![allow(dead_code)]

use num::{BigInt, BigRational, ToPrimitive, Zero};

use pedarec_core::{FeatureVector, KnowledgeBank, NewRecommendation, SessionRecord};

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact cos^2 of two non-negative vectors, `None` when a norm is zero.
pub fn exact_cos_sq(a: &[f64], b: &[f64]) -> Option<BigRational> {
    let (mut dot, mut na, mut nb) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (rat(*x), rat(*y));
        dot += &x * &y;
        na += &x * &x;
        nb += &y * &y;
    }
    if na.is_zero() || nb.is_zero() {
        return None;
    }
    Some(&dot * &dot / (na * nb))
}

/// Cosine from exact rational arithmetic; only the final square root is
/// taken in floating point. Inputs must be non-negative.
pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    exact_cos_sq(a, b).map_or(0.0, |c| c.to_f64().unwrap().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCandidate {
    pub rec_id: String,
    pub score: BigRational,
    pub support: usize,
}

/// Brute force: score every session, pick peers, then take exact weighted
/// means over every (peer, rating) pair.
pub fn oracle_candidates(query: &[f64], bank: &KnowledgeBank, k: usize, theta: f64, rho: f64) -> Vec<OracleCandidate> {
    let mut peers: Vec<(f64, String)> = bank
        .sessions()
        .map(|s| (oracle_cosine(query, &s.feature_vector.values), s.session_id.clone()))
        .filter(|(c, _)| *c >= theta)
        .collect();
    peers.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    peers.truncate(k);

    let mut out = Vec::new();
    for rec in bank.recommendations() {
        if !bank.is_active(&rec.rec_id) {
            continue;
        }
        let mut num = BigRational::zero();
        let mut den = BigRational::zero();
        let mut support = 0;
        for (sim, sid) in &peers {
            if *sim <= 0.0 {
                continue;
            }
            for r in bank.ratings() {
                if r.session_id == *sid && r.rec_id == rec.rec_id {
                    num += rat(*sim) * BigRational::from_integer(BigInt::from(r.score));
                    den += rat(*sim);
                    support += 1;
                }
            }
        }
        if support == 0 {
            continue;
        }
        let score = num / den;
        if score >= rat(rho) {
            out.push(OracleCandidate {
                rec_id: rec.rec_id.clone(),
                score,
                support,
            });
        }
    }
    out.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.rec_id.cmp(&b.rec_id)));
    out
}

pub fn fv(values: Vec<f64>) -> FeatureVector {
    FeatureVector::new("gen", values)
}

/// Builds a bank from plain data: sessions as vectors, recs by id, ratings
/// as (session index, rec index, score).
pub fn build_bank(sessions: &[Vec<f64>], recs: usize, ratings: &[(usize, usize, u8)]) -> KnowledgeBank {
    let mut bank = KnowledgeBank::new();
    for r in 0..recs {
        bank.add_recommendation(NewRecommendation::new(
            &format!("r{r:02}"),
            &format!("rec {r}"),
            "body",
            "learner-content",
        ))
        .unwrap();
    }
    for (i, v) in sessions.iter().enumerate() {
        bank.record_session(SessionRecord {
            session_id: format!("s{i:02}"),
            feature_vector: fv(v.clone()),
            anonymous: i % 2 == 0,
            user_ref: (i % 2 == 1).then(|| format!("user{i}")),
            completed_at: chrono::Utc::now(),
        })
        .unwrap();
    }
    for &(s, r, score) in ratings {
        if s < sessions.len() && r < recs {
            bank.record_rating(&format!("s{s:02}"), &format!("r{r:02}"), i64::from(score))
                .unwrap();
        }
    }
    bank
}
