//! Predicates over session answers, shared by skip conditions and expert rules.

use serde::{Deserialize, Serialize};

use crate::feature::{Answer, FeatureKind, FeatureSchema, SessionFeatures};

/// A single test of one feature's answer.
///
/// Serialized flat as `{"feature": "class_size", "op": "range", "value": [50, 500]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    #[serde(flatten)]
    pub test: Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum Test {
    Eq(String),
    Ne(String),
    InSet(Vec<String>),
    /// Inclusive on both ends.
    Range(f64, f64),
    IsTrue,
    IsFalse,
}

impl Test {
    pub fn op_name(&self) -> &'static str {
        match self {
            Test::Eq(_) => "eq",
            Test::Ne(_) => "ne",
            Test::InSet(_) => "in_set",
            Test::Range(..) => "range",
            Test::IsTrue => "is_true",
            Test::IsFalse => "is_false",
        }
    }

    fn accepts_kind(&self, kind: &FeatureKind) -> bool {
        matches!(
            (self, kind),
            (
                Test::Eq(_) | Test::Ne(_) | Test::InSet(_),
                FeatureKind::Categorical { .. }
            ) | (Test::Range(..), FeatureKind::Numeric { .. })
                | (Test::IsTrue | Test::IsFalse, FeatureKind::Boolean)
        )
    }
}

/// Why a condition does not fit a schema.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionProblem {
    UnknownFeature,
    KindMismatch { op: &'static str, kind: &'static str },
    BadValue(String),
}

impl Condition {
    pub fn new(feature: impl Into<String>, test: Test) -> Self {
        Condition {
            feature: feature.into(),
            test,
        }
    }

    /// Evaluates against the answers given so far. A feature that was not
    /// answered (skipped, declined, or not reached yet) makes every test false.
    pub fn holds(&self, features: &SessionFeatures) -> bool {
        let Some(answer) = features.answer(&self.feature) else {
            return false;
        };
        match (&self.test, answer) {
            (Test::Eq(v), Answer::Text(t)) => t.eq_ignore_ascii_case(v),
            (Test::Ne(v), Answer::Text(t)) => !t.eq_ignore_ascii_case(v),
            (Test::InSet(vs), Answer::Text(t)) => vs.iter().any(|v| t.eq_ignore_ascii_case(v)),
            (Test::Range(lo, hi), Answer::Number(x)) => *lo <= *x && *x <= *hi,
            (Test::IsTrue, Answer::Bool(b)) => *b,
            (Test::IsFalse, Answer::Bool(b)) => !*b,
            _ => false,
        }
    }

    /// Checks feature existence, operator/kind compatibility and that any
    /// categorical values are in the feature's vocabulary.
    pub fn check(&self, schema: &FeatureSchema) -> Result<(), ConditionProblem> {
        let def = schema.feature(&self.feature).ok_or(ConditionProblem::UnknownFeature)?;
        if !self.test.accepts_kind(&def.kind) {
            return Err(ConditionProblem::KindMismatch {
                op: self.test.op_name(),
                kind: def.kind.name(),
            });
        }
        match (&self.test, &def.kind) {
            (Test::Eq(v) | Test::Ne(v), FeatureKind::Categorical { values }) => check_vocab(v, values),
            (Test::InSet(vs), FeatureKind::Categorical { values }) => {
                if vs.is_empty() {
                    return Err(ConditionProblem::BadValue("in_set needs at least one value".into()));
                }
                vs.iter().try_for_each(|v| check_vocab(v, values))
            }
            (Test::Range(lo, hi), _) => {
                if lo.is_finite() && hi.is_finite() && lo <= hi {
                    Ok(())
                } else {
                    Err(ConditionProblem::BadValue(format!(
                        "range [{lo}, {hi}] is empty or not finite"
                    )))
                }
            }
            _ => Ok(()),
        }
    }
}

fn check_vocab(value: &str, values: &[String]) -> Result<(), ConditionProblem> {
    if values.iter().any(|v| v.eq_ignore_ascii_case(value)) {
        Ok(())
    } else {
        Err(ConditionProblem::BadValue(format!("{value:?} is not an allowed value")))
    }
}
