mod common;

use common::*;
use num::ToPrimitive;
use pedarec_core::cf::{candidate_set, cosine, similar_sessions};
use proptest::prelude::*;

fn vec_pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(0.0f64..=1.0, d),
            prop::collection::vec(0.0f64..=1.0, d),
        )
    })
}

/// (query, session vectors, rec count, (session, rec, score) ratings)
type BankCase = (Vec<f64>, Vec<Vec<f64>>, usize, Vec<(usize, usize, u8)>);

/// Random banks: up to 10 sessions, 10 recs, 5 ratings per session.
fn bank_case() -> impl Strategy<Value = BankCase> {
    (2usize..=6, 1usize..=10, 1usize..=10).prop_flat_map(|(dim, n_sessions, n_recs)| {
        (
            prop::collection::vec(0.0f64..=1.0, dim),
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, dim), n_sessions),
            Just(n_recs),
            prop::collection::vec((0..n_sessions, 0..n_recs, 1u8..=5), 0..=5 * n_sessions),
        )
    })
}

proptest! {
    #[test]
    fn cosine_symmetric_and_bounded((a, b) in vec_pair(64)) {
        let ab = cosine(&a, &b).unwrap();
        prop_assert_eq!(ab.to_bits(), cosine(&b, &a).unwrap().to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - oracle_cosine(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn cosine_scale_invariant((a, b) in vec_pair(32), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        prop_assert!((cosine(&scaled, &b).unwrap() - cosine(&a, &b).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn similar_sessions_truncates((q, sessions, recs, ratings) in bank_case(), k in 1usize..=5, theta in 0.0f64..=1.0) {
        let bank = build_bank(&sessions, recs, &ratings);
        let got = similar_sessions(&fv(q), &bank, k, theta, None);
        prop_assert!(got.len() <= k);
        prop_assert!(got.iter().all(|s| s.score >= theta));
        prop_assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn candidate_set_matches_brute_force((q, sessions, recs, ratings) in bank_case(), k in 1usize..=10, theta in 0.0f64..=0.9, rho in 1.0f64..=5.0) {
        let bank = build_bank(&sessions, recs, &ratings);
        let peers = similar_sessions(&fv(q.clone()), &bank, k, theta, None);
        let got = candidate_set(&peers, &bank, rho);
        let want = oracle_candidates(&q, &bank, k, theta, rho);
        let got_ids: Vec<_> = got.entries.iter().map(|c| c.rec_id.clone()).collect();
        let want_ids: Vec<_> = want.iter().map(|c| c.rec_id.clone()).collect();
        prop_assert_eq!(got_ids, want_ids);
        for (g, w) in got.entries.iter().zip(&want) {
            prop_assert!((g.weighted_score - w.score.to_f64().unwrap()).abs() <= 1e-9);
            prop_assert_eq!(g.support, w.support);
        }
    }

    #[test]
    fn five_star_feedback_never_hurts((q, sessions, recs, ratings) in bank_case(), peer in 0usize..10, rec in 0usize..10) {
        let peer = peer % sessions.len();
        let rec = rec % recs;
        let bank = build_bank(&sessions, recs, &ratings);
        let query = fv(q);
        let peers = similar_sessions(&query, &bank, 10, 0.0, None);
        let rec_id = format!("r{rec:02}");
        let before = candidate_set(&peers, &bank, 1.0);

        let mut after_bank = bank.clone();
        after_bank.record_rating(&format!("s{peer:02}"), &rec_id, 5).unwrap();
        let peer_positive = peers.iter().any(|p| p.session_id == format!("s{peer:02}") && p.score > 0.0);
        let prior_rating = bank.ratings().find(|r| r.session_id == format!("s{peer:02}") && r.rec_id == rec_id).map(|r| r.score);
        let after = candidate_set(&peers, &after_bank, 1.0);
        if peer_positive && prior_rating.is_none() {
            for c in &before.entries {
                prop_assert!(after.contains(&c.rec_id));
            }
            if let Some(prev) = before.get(&rec_id) {
                prop_assert!(after.get(&rec_id).unwrap().weighted_score >= prev.weighted_score - 1e-12);
            } else {
                prop_assert!(after.contains(&rec_id));
            }
        }
    }
}

#[test]
fn cosine_hand_values() {
    assert!((cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() < 1e-15);
    assert!((oracle_cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]) - 8.0 / 9.0).abs() < 1e-15);
}
