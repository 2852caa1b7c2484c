//! Synthetic workloads for the benchmarks: a bank of past sessions over the
//! built-in schema, with ratings and a rule table, all from a fixed seed.

use pedarec_core::{
    Answer, Condition, FeatureKind, FeatureSchema, KnowledgeBank, NewRecommendation, Rule, SessionFeatures,
    SessionRecord, Test, Verdict,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Workload {
    pub schema: FeatureSchema,
    pub bank: KnowledgeBank,
    pub rules: Vec<Rule>,
    /// Fresh consultations that are not in the bank.
    pub queries: Vec<SessionFeatures>,
}

#[derive(Debug, Clone, Copy)]
pub struct Size {
    pub sessions: usize,
    pub recs: usize,
    pub ratings_per_session: usize,
    pub rules: usize,
}

impl Size {
    pub const SMALL: Size = Size {
        sessions: 100,
        recs: 20,
        ratings_per_session: 3,
        rules: 20,
    };
    pub const MEDIUM: Size = Size {
        sessions: 1_000,
        recs: 60,
        ratings_per_session: 4,
        rules: 100,
    };
    pub const LARGE: Size = Size {
        sessions: 10_000,
        recs: 200,
        ratings_per_session: 5,
        rules: 400,
    };
}

/// Answers every question the schema asks, in order, honouring skips.
pub fn random_features(schema: &FeatureSchema, rng: &mut impl Rng) -> SessionFeatures {
    let mut features = SessionFeatures::new(schema);
    while let Some(def) = schema.next_question(&features) {
        let answer = match &def.kind {
            FeatureKind::Categorical { values } => Answer::Text(values.choose(rng).expect("non-empty").clone()),
            FeatureKind::Numeric { min, max } => Answer::Number(rng.gen_range(*min..=*max).round()),
            FeatureKind::Boolean => Answer::Bool(rng.gen()),
        };
        let id = def.id.clone();
        features
            .record(schema, &id, Some(&answer))
            .expect("generated answers are valid");
    }
    features
}

fn random_condition(schema: &FeatureSchema, rng: &mut impl Rng) -> Condition {
    let def = schema.features.choose(rng).expect("non-empty schema");
    let test = match &def.kind {
        FeatureKind::Categorical { values } => {
            let n = rng.gen_range(1..=values.len());
            Test::InSet(values.choose_multiple(rng, n).cloned().collect())
        }
        FeatureKind::Numeric { min, max } => {
            let a = rng.gen_range(*min..=*max);
            let b = rng.gen_range(*min..=*max);
            Test::Range(a.min(b), a.max(b))
        }
        FeatureKind::Boolean => {
            if rng.gen() {
                Test::IsTrue
            } else {
                Test::IsFalse
            }
        }
    };
    Condition {
        feature: def.id.clone(),
        test,
    }
}

pub fn workload(size: Size, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = FeatureSchema::default_schema();
    let modes = ["learner-content", "learner-instructor", "learner-learner"];

    let mut bank = KnowledgeBank::new();
    bank.adopt_schema_version(&schema.version).expect("fresh bank");
    let rec_ids: Vec<String> = (0..size.recs).map(|i| format!("rec-{i:04}")).collect();
    for (i, id) in rec_ids.iter().enumerate() {
        let rec = NewRecommendation::new(id, &format!("Practice {i}"), "Generated.", modes[i % modes.len()]);
        bank.add_recommendation(rec).expect("unique ids");
    }

    let at = chrono::DateTime::UNIX_EPOCH;
    for s in 0..size.sessions {
        let features = random_features(&schema, &mut rng);
        let session_id = format!("past-{s:06}");
        bank.record_session(SessionRecord {
            session_id: session_id.clone(),
            feature_vector: schema.encode(&features).expect("complete"),
            anonymous: true,
            user_ref: None,
            completed_at: at,
        })
        .expect("unique sessions");
        for rec in rec_ids.choose_multiple(&mut rng, size.ratings_per_session.min(size.recs)) {
            bank.record_rating(&session_id, rec, rng.gen_range(1..=5))
                .expect("valid rating");
        }
    }

    let rules = (0..size.rules)
        .map(|i| {
            let verdict = if rng.gen_bool(0.4) {
                Verdict::Reject
            } else {
                Verdict::Accept
            };
            let conditions = (0..rng.gen_range(1..=3))
                .map(|_| random_condition(&schema, &mut rng))
                .collect();
            Rule {
                rule_id: format!("rule-{i:04}"),
                rec_id: rec_ids.choose(&mut rng).expect("recs").clone(),
                verdict,
                priority: rng.gen_range(0..4),
                conditions,
            }
        })
        .collect();

    let queries = (0..64).map(|_| random_features(&schema, &mut rng)).collect();
    Workload {
        schema,
        bank,
        rules,
        queries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_is_deterministic_and_valid() {
        let a = workload(Size::SMALL, 7);
        let b = workload(Size::SMALL, 7);
        let shape = |w: &Workload| {
            let sessions: Vec<_> = w.bank.sessions().cloned().collect();
            let ratings: Vec<_> = w
                .bank
                .ratings()
                .map(|r| (r.session_id.clone(), r.rec_id.clone(), r.score))
                .collect();
            (sessions, ratings)
        };
        assert_eq!(shape(&a), shape(&b));
        assert_eq!(a.rules, b.rules);
        pedarec_core::validate_rules(&a.rules, &a.schema, &a.bank).unwrap();
        assert_eq!(a.bank.sessions().count(), 100);
    }
}
