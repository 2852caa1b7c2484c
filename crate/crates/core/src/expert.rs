//! Expert rule engine. Refines the collaborative candidate set into the
//! final set: vetoes unsuitable candidates and adds recommendations the
//! rules endorse, which is also how sessions are served when nothing has
//! been rated yet.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::KnowledgeBank;
use crate::cf::CandidateSet;
use crate::condition::{Condition, ConditionProblem};
use crate::feature::{FeatureSchema, SessionFeatures};
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// Conjunction of conditions deciding one recommendation's fate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub rec_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub priority: u32,
    #[serde(default)]
    pub conditions: Vec<Condition>,
}

impl Rule {
    pub fn matches(&self, features: &SessionFeatures) -> bool {
        self.conditions.iter().all(|c| c.holds(features))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesDocument {
    pub version: String,
    pub rules: Vec<Rule>,
}

/// Result of evaluating all rules for one recommendation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Judgement {
    Accept { rule_id: String, priority: u32 },
    Reject { rule_id: String, priority: u32 },
    Unmatched,
}

impl Judgement {
    pub fn verdict(&self) -> Option<Verdict> {
        match self {
            Judgement::Accept { .. } => Some(Verdict::Accept),
            Judgement::Reject { .. } => Some(Verdict::Reject),
            Judgement::Unmatched => None,
        }
    }
}

/// The highest-priority matching rule decides; a reject at that priority
/// beats any accept. Among equals the smallest rule_id is reported.
pub fn evaluate_rules(rec_id: &str, features: &SessionFeatures, rules: &[Rule]) -> Judgement {
    let matching = rules.iter().filter(|r| r.rec_id == rec_id && r.matches(features));
    let mut best: Option<&Rule> = None;
    for rule in matching {
        let better = match best {
            None => true,
            Some(b) => {
                (
                    rule.priority,
                    rule.verdict == Verdict::Reject,
                    std::cmp::Reverse(&rule.rule_id),
                ) > (b.priority, b.verdict == Verdict::Reject, std::cmp::Reverse(&b.rule_id))
            }
        };
        if better {
            best = Some(rule);
        }
    }
    match best {
        None => Judgement::Unmatched,
        Some(r) => match r.verdict {
            Verdict::Accept => Judgement::Accept {
                rule_id: r.rule_id.clone(),
                priority: r.priority,
            },
            Verdict::Reject => Judgement::Reject {
                rule_id: r.rule_id.clone(),
                priority: r.priority,
            },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Cf,
    ExpertAdded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEntry {
    pub rec_id: String,
    pub provenance: Provenance,
    /// Weighted peer score for `cf` entries, rule priority for expert ones.
    pub weight: f64,
    /// Rule that decided this entry, if any. Debugging aid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_rule: Option<String>,
}

/// What the user is shown, in order: collaborative picks first, then
/// expert additions by descending priority.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalSet {
    pub entries: Vec<FinalEntry>,
}

impl FinalSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&FinalEntry> {
        self.entries.get(i)
    }

    pub fn rec_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.rec_id.as_str())
    }
}

pub fn refine(candidates: &CandidateSet, features: &SessionFeatures, rules: &[Rule], bank: &KnowledgeBank) -> FinalSet {
    let mut entries = Vec::new();
    for c in &candidates.entries {
        if !bank.is_active(&c.rec_id) {
            continue;
        }
        let judgement = evaluate_rules(&c.rec_id, features, rules);
        let keep = if bank.has_ratings(&c.rec_id) {
            judgement.verdict() != Some(Verdict::Reject)
        } else {
            // Unreachable through candidate_set; only an explicit accept keeps it.
            judgement.verdict() == Some(Verdict::Accept)
        };
        if keep {
            entries.push(FinalEntry {
                rec_id: c.rec_id.clone(),
                provenance: Provenance::Cf,
                weight: c.weighted_score,
                matched_rule: rule_id(&judgement),
            });
        }
    }

    let in_candidates: HashSet<&str> = candidates.rec_ids().collect();
    let mut added: Vec<(u32, FinalEntry)> = bank
        .active_recommendations()
        .filter(|r| !in_candidates.contains(r.rec_id.as_str()))
        .filter_map(|r| match evaluate_rules(&r.rec_id, features, rules) {
            Judgement::Accept { rule_id, priority } => Some((
                priority,
                FinalEntry {
                    rec_id: r.rec_id.clone(),
                    provenance: Provenance::ExpertAdded,
                    weight: f64::from(priority),
                    matched_rule: Some(rule_id),
                },
            )),
            _ => None,
        })
        .collect();
    added.sort_by(|(pa, a), (pb, b)| pb.cmp(pa).then_with(|| a.rec_id.cmp(&b.rec_id)));
    entries.extend(added.into_iter().map(|(_, e)| e));
    FinalSet { entries }
}

fn rule_id(j: &Judgement) -> Option<String> {
    match j {
        Judgement::Accept { rule_id, .. } | Judgement::Reject { rule_id, .. } => Some(rule_id.clone()),
        Judgement::Unmatched => None,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("malformed rules document: {0}")]
    Malformed(String),
    #[error("rule {rule_id:?} references unknown feature {feature:?}")]
    UnknownFeatureInRule { rule_id: String, feature: String },
    #[error("rule {rule_id:?}: operator {op} does not apply to {kind} feature {feature:?}")]
    OperatorKindMismatch {
        rule_id: String,
        feature: String,
        op: &'static str,
        kind: &'static str,
    },
    #[error("rule {rule_id:?} references unknown recommendation {rec_id:?}")]
    UnknownRecommendation { rule_id: String, rec_id: String },
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("rule {rule_id:?}: {message}")]
    InvalidRule { rule_id: String, message: String },
}

impl ErrorCode for RuleError {
    fn code(&self) -> &'static str {
        match self {
            RuleError::Malformed(_) => "MalformedRules",
            RuleError::UnknownFeatureInRule { .. } => "UnknownFeatureInRule",
            RuleError::OperatorKindMismatch { .. } => "OperatorKindMismatch",
            RuleError::UnknownRecommendation { .. } => "UnknownRecommendation",
            RuleError::DuplicateRuleId(_) => "DuplicateRuleId",
            RuleError::InvalidRule { .. } => "InvalidRule",
        }
    }
}

/// Checks rules against the schema and the bank's recommendations.
pub fn validate_rules(rules: &[Rule], schema: &FeatureSchema, bank: &KnowledgeBank) -> Result<(), RuleError> {
    let mut ids = BTreeSet::new();
    for rule in rules {
        if !ids.insert(rule.rule_id.as_str()) {
            return Err(RuleError::DuplicateRuleId(rule.rule_id.clone()));
        }
        if rule.rule_id.trim().is_empty() {
            return Err(RuleError::InvalidRule {
                rule_id: rule.rule_id.clone(),
                message: "rule_id must not be empty".into(),
            });
        }
        if bank.recommendation(&rule.rec_id).is_none() {
            return Err(RuleError::UnknownRecommendation {
                rule_id: rule.rule_id.clone(),
                rec_id: rule.rec_id.clone(),
            });
        }
        // A blanket reject is spelled "retire the recommendation".
        if rule.verdict == Verdict::Reject && rule.conditions.is_empty() {
            return Err(RuleError::InvalidRule {
                rule_id: rule.rule_id.clone(),
                message: "reject rules need at least one condition".into(),
            });
        }
        for cond in &rule.conditions {
            cond.check(schema).map_err(|p| match p {
                ConditionProblem::UnknownFeature => RuleError::UnknownFeatureInRule {
                    rule_id: rule.rule_id.clone(),
                    feature: cond.feature.clone(),
                },
                ConditionProblem::KindMismatch { op, kind } => RuleError::OperatorKindMismatch {
                    rule_id: rule.rule_id.clone(),
                    feature: cond.feature.clone(),
                    op,
                    kind,
                },
                ConditionProblem::BadValue(message) => RuleError::InvalidRule {
                    rule_id: rule.rule_id.clone(),
                    message,
                },
            })?;
        }
    }
    Ok(())
}

/// Parses and validates a rules document. Nothing is returned unless every
/// rule is valid; order is preserved.
pub fn load_rules(document: &str, schema: &FeatureSchema, bank: &KnowledgeBank) -> Result<Vec<Rule>, RuleError> {
    let doc: RulesDocument = serde_json::from_str(document).map_err(|e| RuleError::Malformed(e.to_string()))?;
    validate_rules(&doc.rules, schema, bank)?;
    Ok(doc.rules)
}
