//! The knowledge bank: recommendations, session vectors, ratings, expert
//! rules and the suggestion moderation queue.
//!
//! All durable state lives here and is persisted as one JSON document
//! written through a temp file and an atomic rename.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::expert::Rule;
use crate::feature::FeatureVector;
use crate::ErrorCode;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionMode {
    LearnerContent,
    LearnerInstructor,
    LearnerLearner,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 3] = [
        InteractionMode::LearnerContent,
        InteractionMode::LearnerInstructor,
        InteractionMode::LearnerLearner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::LearnerContent => "learner-content",
            InteractionMode::LearnerInstructor => "learner-instructor",
            InteractionMode::LearnerLearner => "learner-learner",
        }
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InteractionMode {
    type Err = BankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BankError::InvalidInteractionMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Seeded,
    ExpertAdded,
    UserSuggested,
}

impl Origin {
    pub const ALL: [Origin; 3] = [Origin::Seeded, Origin::ExpertAdded, Origin::UserSuggested];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Seeded => "seeded",
            Origin::ExpertAdded => "expert_added",
            Origin::UserSuggested => "user_suggested",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationStatus {
    #[default]
    Active,
    Pending,
    Retired,
}

impl RecommendationStatus {
    pub const ALL: [RecommendationStatus; 3] = [
        RecommendationStatus::Active,
        RecommendationStatus::Pending,
        RecommendationStatus::Retired,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecommendationStatus::Active => "active",
            RecommendationStatus::Pending => "pending",
            RecommendationStatus::Retired => "retired",
        }
    }
}

/// One pedagogical practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rec_id: String,
    pub title: String,
    pub body: String,
    pub interaction_mode: InteractionMode,
    pub origin: Origin,
    pub status: RecommendationStatus,
    pub created_at: DateTime<Utc>,
}

/// Recommendation fields as supplied by an operator or a corpus file.
/// The interaction mode is still a raw string here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewRecommendation {
    pub rec_id: String,
    pub title: String,
    pub body: String,
    pub interaction_mode: String,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default)]
    pub status: RecommendationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

impl NewRecommendation {
    pub fn new(rec_id: &str, title: &str, body: &str, mode: &str) -> Self {
        NewRecommendation {
            rec_id: rec_id.into(),
            title: title.into(),
            body: body.into(),
            interaction_mode: mode.into(),
            origin: Origin::Seeded,
            status: RecommendationStatus::Active,
            created_at: None,
        }
    }

    fn build(self, now: DateTime<Utc>) -> Result<Recommendation, BankError> {
        if self.rec_id.trim().is_empty() || self.title.trim().is_empty() {
            return Err(BankError::MalformedRecommendation(
                "rec_id and title must not be empty".into(),
            ));
        }
        let interaction_mode = self.interaction_mode.parse()?;
        Ok(Recommendation {
            rec_id: self.rec_id,
            title: self.title,
            body: self.body,
            interaction_mode,
            origin: self.origin,
            status: self.status,
            created_at: self.created_at.unwrap_or(now),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: String,
    pub rec_id: String,
    pub score: u8,
    pub timestamp: DateTime<Utc>,
}

/// A completed consultation. Anonymous sessions carry no `user_ref` at all,
/// not even an empty one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub feature_vector: FeatureVector,
    pub anonymous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_ref: Option<String>,
    pub completed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionState {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub suggestion_id: String,
    pub text: String,
    pub proposer_session_id: String,
    #[serde(default)]
    pub anonymous: bool,
    pub state: SuggestionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resulting_rec_id: Option<String>,
}

/// A pending suggestion as shown to a moderator. `proposer` is the session
/// id, or `"anonymous"` for anonymous sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSuggestion {
    pub suggestion_id: String,
    pub text: String,
    pub proposer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuggestionDecision {
    Approve(NewRecommendation),
    Reject,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BankError {
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("invalid interaction mode {0:?}; expected learner-content, learner-instructor or learner-learner")]
    InvalidInteractionMode(String),
    #[error("malformed recommendation: {0}")]
    MalformedRecommendation(String),
    #[error("unknown recommendation {0:?}")]
    UnknownRecommendation(String),
    #[error("score {0} is outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("suggestion text is empty")]
    EmptySuggestion,
    #[error("unknown suggestion {0:?}")]
    UnknownSuggestion(String),
    #[error("suggestion {0:?} is already resolved")]
    AlreadyResolved(String),
    #[error("schema version mismatch: bank has {expected:?}, got {found:?}")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("malformed corpus: {0}")]
    MalformedCorpus(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bank {0} is locked by another process")]
    Locked(String),
}

impl ErrorCode for BankError {
    fn code(&self) -> &'static str {
        match self {
            BankError::DuplicateId(_) => "DuplicateId",
            BankError::InvalidInteractionMode(_) => "InvalidInteractionMode",
            BankError::MalformedRecommendation(_) => "MalformedRecommendation",
            BankError::UnknownRecommendation(_) => "UnknownRecommendation",
            BankError::ScoreOutOfRange(_) => "ScoreOutOfRange",
            BankError::EmptySuggestion => "EmptySuggestion",
            BankError::UnknownSuggestion(_) => "UnknownSuggestion",
            BankError::AlreadyResolved(_) => "AlreadyResolved",
            BankError::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            BankError::CorruptSnapshot(_) => "CorruptSnapshot",
            BankError::MalformedCorpus(_) => "MalformedCorpus",
            BankError::Io(_) => "IoError",
            BankError::Locked(_) => "BankLocked",
        }
    }
}

/// The on-disk document. Also the seed corpus format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub schema_version: Option<String>,
    pub recommendations: Vec<Recommendation>,
    pub sessions: Vec<SessionRecord>,
    pub ratings: Vec<RatingRecord>,
    pub rules: Vec<Rule>,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCounts {
    pub recommendations: usize,
    pub active_recommendations: usize,
    pub sessions: usize,
    pub ratings: usize,
    pub rules: usize,
    pub suggestions: usize,
    pub pending_suggestions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankStats {
    pub recommendations_by_mode: BTreeMap<String, usize>,
    pub recommendations_by_origin: BTreeMap<String, usize>,
    pub recommendations_by_status: BTreeMap<String, usize>,
    pub rating_count: usize,
    pub mean_rating: BTreeMap<String, f64>,
    pub session_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBank {
    schema_version: Option<String>,
    recommendations: BTreeMap<String, Recommendation>,
    sessions: BTreeMap<String, SessionRecord>,
    /// Keyed by (session_id, rec_id); one opinion per pair.
    ratings: BTreeMap<(String, String), RatingRecord>,
    rules: Vec<Rule>,
    suggestions: BTreeMap<String, Suggestion>,
}

impl KnowledgeBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schema_version(&self) -> Option<&str> {
        self.schema_version.as_deref()
    }

    /// Binds the bank to a schema version. Fails if stored session vectors
    /// were produced under a different one.
    pub fn adopt_schema_version(&mut self, version: &str) -> Result<(), BankError> {
        match &self.schema_version {
            Some(v) if v != version && !self.sessions.is_empty() => Err(BankError::SchemaVersionMismatch {
                expected: v.clone(),
                found: version.to_string(),
            }),
            _ => {
                self.schema_version = Some(version.to_string());
                Ok(())
            }
        }
    }

    // ---- recommendations -------------------------------------------------

    pub fn add_recommendation(&mut self, rec: NewRecommendation) -> Result<String, BankError> {
        if self.recommendations.contains_key(&rec.rec_id) {
            return Err(BankError::DuplicateId(rec.rec_id));
        }
        let rec = rec.build(Utc::now())?;
        let id = rec.rec_id.clone();
        self.recommendations.insert(id.clone(), rec);
        Ok(id)
    }

    /// Imports a batch of recommendations; either all go in or none do.
    pub fn import_recommendations(&mut self, recs: Vec<NewRecommendation>) -> Result<usize, BankError> {
        let mut seen = BTreeSet::new();
        let mut dups = BTreeSet::new();
        for r in &recs {
            if self.recommendations.contains_key(&r.rec_id) || !seen.insert(r.rec_id.as_str()) {
                dups.insert(r.rec_id.clone());
            }
        }
        if !dups.is_empty() {
            return Err(BankError::DuplicateId(dups.into_iter().collect::<Vec<_>>().join(", ")));
        }
        let now = Utc::now();
        let built = recs
            .into_iter()
            .map(|r| {
                let id = r.rec_id.clone();
                r.build(now)
                    .map_err(|e| BankError::MalformedCorpus(format!("recommendation {id:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = built.len();
        for rec in built {
            self.recommendations.insert(rec.rec_id.clone(), rec);
        }
        Ok(n)
    }

    pub fn recommendation(&self, rec_id: &str) -> Option<&Recommendation> {
        self.recommendations.get(rec_id)
    }

    pub fn recommendations(&self) -> impl Iterator<Item = &Recommendation> {
        self.recommendations.values()
    }

    /// Active recommendations in rec_id order.
    pub fn active_recommendations(&self) -> impl Iterator<Item = &Recommendation> {
        self.recommendations
            .values()
            .filter(|r| r.status == RecommendationStatus::Active)
    }

    pub fn is_active(&self, rec_id: &str) -> bool {
        self.recommendations
            .get(rec_id)
            .is_some_and(|r| r.status == RecommendationStatus::Active)
    }

    pub fn set_status(&mut self, rec_id: &str, status: RecommendationStatus) -> Result<(), BankError> {
        let rec = self
            .recommendations
            .get_mut(rec_id)
            .ok_or_else(|| BankError::UnknownRecommendation(rec_id.to_string()))?;
        rec.status = status;
        Ok(())
    }

    pub fn update_text(&mut self, rec_id: &str, title: &str, body: &str) -> Result<(), BankError> {
        let rec = self
            .recommendations
            .get_mut(rec_id)
            .ok_or_else(|| BankError::UnknownRecommendation(rec_id.to_string()))?;
        rec.title = title.to_string();
        rec.body = body.to_string();
        Ok(())
    }

    // ---- sessions and ratings -------------------------------------------

    pub fn record_session(&mut self, record: SessionRecord) -> Result<(), BankError> {
        if let Some(v) = &self.schema_version {
            if *v != record.feature_vector.schema_version {
                return Err(BankError::SchemaVersionMismatch {
                    expected: v.clone(),
                    found: record.feature_vector.schema_version.clone(),
                });
            }
        }
        if let Some(existing) = self.sessions.values().next() {
            if existing.feature_vector.dimension() != record.feature_vector.dimension() {
                return Err(BankError::SchemaVersionMismatch {
                    expected: format!("dimension {}", existing.feature_vector.dimension()),
                    found: format!("dimension {}", record.feature_vector.dimension()),
                });
            }
        }
        if self.sessions.contains_key(&record.session_id) {
            return Err(BankError::DuplicateId(record.session_id));
        }
        let mut record = record;
        if record.anonymous {
            record.user_ref = None;
        }
        self.schema_version
            .get_or_insert_with(|| record.feature_vector.schema_version.clone());
        self.sessions.insert(record.session_id.clone(), record);
        Ok(())
    }

    pub fn session(&self, session_id: &str) -> Option<&SessionRecord> {
        self.sessions.get(session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionRecord> {
        self.sessions.values()
    }

    pub fn record_rating(&mut self, session_id: &str, rec_id: &str, score: i64) -> Result<(), BankError> {
        self.record_rating_at(session_id, rec_id, score, Utc::now())
    }

    /// Stores a 1–5 rating, replacing any earlier one for the same
    /// (session, recommendation) pair.
    pub fn record_rating_at(
        &mut self,
        session_id: &str,
        rec_id: &str,
        score: i64,
        timestamp: DateTime<Utc>,
    ) -> Result<(), BankError> {
        if !self.is_active(rec_id) {
            return Err(BankError::UnknownRecommendation(rec_id.to_string()));
        }
        if !(1..=5).contains(&score) {
            return Err(BankError::ScoreOutOfRange(score));
        }
        self.ratings.insert(
            (session_id.to_string(), rec_id.to_string()),
            RatingRecord {
                session_id: session_id.to_string(),
                rec_id: rec_id.to_string(),
                score: score as u8,
                timestamp,
            },
        );
        Ok(())
    }

    /// Scores given to `rec_id`, ordered by session id.
    pub fn ratings_for(&self, rec_id: &str) -> Vec<u8> {
        self.ratings
            .values()
            .filter(|r| r.rec_id == rec_id)
            .map(|r| r.score)
            .collect()
    }

    /// Ratings given during one session, ordered by rec_id.
    pub fn ratings_by_session<'a>(&'a self, session_id: &'a str) -> impl Iterator<Item = &'a RatingRecord> + 'a {
        self.ratings
            .range((session_id.to_string(), String::new())..)
            .take_while(move |((s, _), _)| s == session_id)
            .map(|(_, r)| r)
    }

    pub fn ratings(&self) -> impl Iterator<Item = &RatingRecord> {
        self.ratings.values()
    }

    pub fn has_ratings(&self, rec_id: &str) -> bool {
        self.ratings.values().any(|r| r.rec_id == rec_id)
    }

    // ---- rules -----------------------------------------------------------

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Swaps in a complete rule set. Feature-level validation happens in
    /// [`crate::expert::load_rules`]; this only checks the bank-side references.
    pub fn replace_rules(&mut self, rules: Vec<Rule>) -> Result<(), BankError> {
        check_rules(&rules, &self.recommendations)?;
        self.rules = rules;
        Ok(())
    }

    // ---- suggestions -----------------------------------------------------

    pub fn submit_suggestion(&mut self, text: &str, session_id: &str, anonymous: bool) -> Result<String, BankError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(BankError::EmptySuggestion);
        }
        // Suggestions are never deleted, so the count is a safe counter.
        let id = format!("sg-{:06}", self.suggestions.len() + 1);
        self.suggestions.insert(
            id.clone(),
            Suggestion {
                suggestion_id: id.clone(),
                text: text.to_string(),
                proposer_session_id: session_id.to_string(),
                anonymous,
                state: SuggestionState::Pending,
                resulting_rec_id: None,
            },
        );
        Ok(id)
    }

    pub fn suggestion(&self, id: &str) -> Option<&Suggestion> {
        self.suggestions.get(id)
    }

    pub fn suggestions(&self) -> impl Iterator<Item = &Suggestion> {
        self.suggestions.values()
    }

    pub fn pending_suggestions(&self) -> impl Iterator<Item = &Suggestion> {
        self.suggestions
            .values()
            .filter(|s| s.state == SuggestionState::Pending)
    }

    pub fn moderation_queue(&self) -> Vec<PendingSuggestion> {
        self.pending_suggestions()
            .map(|s| PendingSuggestion {
                suggestion_id: s.suggestion_id.clone(),
                text: s.text.clone(),
                proposer: if s.anonymous {
                    "anonymous".to_string()
                } else {
                    s.proposer_session_id.clone()
                },
            })
            .collect()
    }

    pub fn resolve_suggestion(
        &mut self,
        suggestion_id: &str,
        decision: SuggestionDecision,
    ) -> Result<Option<String>, BankError> {
        let suggestion = self
            .suggestions
            .get(suggestion_id)
            .ok_or_else(|| BankError::UnknownSuggestion(suggestion_id.to_string()))?;
        if suggestion.state != SuggestionState::Pending {
            return Err(BankError::AlreadyResolved(suggestion_id.to_string()));
        }
        let (state, rec_id) = match decision {
            SuggestionDecision::Reject => (SuggestionState::Rejected, None),
            SuggestionDecision::Approve(mut rec) => {
                rec.origin = Origin::UserSuggested;
                rec.status = RecommendationStatus::Active;
                (SuggestionState::Approved, Some(self.add_recommendation(rec)?))
            }
        };
        let suggestion = self.suggestions.get_mut(suggestion_id).expect("checked above");
        suggestion.state = state;
        suggestion.resulting_rec_id = rec_id.clone();
        Ok(rec_id)
    }

    // ---- queries ---------------------------------------------------------

    pub fn counts(&self) -> BankCounts {
        BankCounts {
            recommendations: self.recommendations.len(),
            active_recommendations: self.active_recommendations().count(),
            sessions: self.sessions.len(),
            ratings: self.ratings.len(),
            rules: self.rules.len(),
            suggestions: self.suggestions.len(),
            pending_suggestions: self.pending_suggestions().count(),
        }
    }

    pub fn stats(&self) -> BankStats {
        let mut by_mode: BTreeMap<String, usize> = InteractionMode::ALL
            .iter()
            .map(|m| (m.as_str().to_string(), 0))
            .collect();
        let mut by_origin: BTreeMap<String, usize> = Origin::ALL.iter().map(|o| (o.as_str().to_string(), 0)).collect();
        let mut by_status: BTreeMap<String, usize> = RecommendationStatus::ALL
            .iter()
            .map(|s| (s.as_str().to_string(), 0))
            .collect();
        for r in self.recommendations.values() {
            *by_mode.entry(r.interaction_mode.as_str().into()).or_default() += 1;
            *by_origin.entry(r.origin.as_str().into()).or_default() += 1;
            *by_status.entry(r.status.as_str().into()).or_default() += 1;
        }
        let mut sums: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for r in self.ratings.values() {
            let e = sums.entry(r.rec_id.as_str()).or_default();
            e.0 += u64::from(r.score);
            e.1 += 1;
        }
        BankStats {
            recommendations_by_mode: by_mode,
            recommendations_by_origin: by_origin,
            recommendations_by_status: by_status,
            rating_count: self.ratings.len(),
            mean_rating: sums
                .into_iter()
                .map(|(id, (sum, n))| (id.to_string(), sum as f64 / n as f64))
                .collect(),
            session_count: self.sessions.len(),
        }
    }

    /// Everything observable through the query methods, as one JSON value.
    /// Two banks are interchangeable exactly when their dumps are equal.
    pub fn query_dump(&self) -> Value {
        let per_rec: BTreeMap<&str, Value> = self
            .recommendations
            .keys()
            .map(|id| {
                (
                    id.as_str(),
                    serde_json::json!({
                        "ratings": self.ratings_for(id),
                        "active": self.is_active(id),
                    }),
                )
            })
            .collect();
        let per_session: BTreeMap<&str, Vec<&RatingRecord>> = self
            .ratings
            .keys()
            .map(|(s, _)| (s.as_str(), self.ratings_by_session(s).collect()))
            .collect();
        serde_json::json!({
            "schema_version": self.schema_version,
            "recommendations": self.recommendations.values().collect::<Vec<_>>(),
            "active": self.active_recommendations().map(|r| &r.rec_id).collect::<Vec<_>>(),
            "per_recommendation": per_rec,
            "per_session_ratings": per_session,
            "sessions": self.sessions.values().collect::<Vec<_>>(),
            "rules": self.rules,
            "suggestions": self.suggestions.values().collect::<Vec<_>>(),
            "pending": self.pending_suggestions().map(|s| &s.suggestion_id).collect::<Vec<_>>(),
            "counts": self.counts(),
            "stats": self.stats(),
        })
    }

    // ---- persistence -----------------------------------------------------

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            schema_version: self.schema_version.clone(),
            recommendations: self.recommendations.values().cloned().collect(),
            sessions: self.sessions.values().cloned().collect(),
            ratings: self.ratings.values().cloned().collect(),
            rules: self.rules.clone(),
            suggestions: self.suggestions.values().cloned().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    /// Rebuilds a bank from a snapshot, checking every invariant.
    pub fn from_snapshot(snap: Snapshot) -> Result<Self, BankError> {
        let corrupt = |m: String| BankError::CorruptSnapshot(m);
        if snap.version != SNAPSHOT_VERSION {
            return Err(corrupt(format!(
                "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        let mut bank = KnowledgeBank {
            schema_version: snap.schema_version,
            ..Default::default()
        };
        for rec in snap.recommendations {
            if bank.recommendations.contains_key(&rec.rec_id) {
                return Err(corrupt(format!("duplicate recommendation {:?}", rec.rec_id)));
            }
            bank.recommendations.insert(rec.rec_id.clone(), rec);
        }
        let mut dimension = None;
        for s in snap.sessions {
            if s.anonymous && s.user_ref.is_some() {
                return Err(corrupt(format!(
                    "anonymous session {:?} carries a user_ref",
                    s.session_id
                )));
            }
            if bank.schema_version.as_deref() != Some(s.feature_vector.schema_version.as_str()) {
                return Err(corrupt(format!(
                    "session {:?} has schema version {:?}, bank has {:?}",
                    s.session_id, s.feature_vector.schema_version, bank.schema_version
                )));
            }
            if *dimension.get_or_insert(s.feature_vector.dimension()) != s.feature_vector.dimension() {
                return Err(corrupt(format!(
                    "session {:?} has a mismatched vector dimension",
                    s.session_id
                )));
            }
            if bank.sessions.insert(s.session_id.clone(), s).is_some() {
                return Err(corrupt("duplicate session id".into()));
            }
        }
        for r in snap.ratings {
            if !(1..=5).contains(&r.score) {
                return Err(corrupt(format!("rating score {} out of range", r.score)));
            }
            if !bank.recommendations.contains_key(&r.rec_id) {
                return Err(corrupt(format!(
                    "rating references unknown recommendation {:?}",
                    r.rec_id
                )));
            }
            let key = (r.session_id.clone(), r.rec_id.clone());
            if bank.ratings.insert(key, r).is_some() {
                return Err(corrupt("duplicate (session, recommendation) rating".into()));
            }
        }
        check_rules(&snap.rules, &bank.recommendations).map_err(|e| corrupt(e.to_string()))?;
        bank.rules = snap.rules;
        for s in snap.suggestions {
            match (s.state, &s.resulting_rec_id) {
                // the linked rec may have been retired since approval
                (SuggestionState::Approved, Some(id)) if bank.recommendations.contains_key(id) => {}
                (SuggestionState::Approved, _) => {
                    return Err(corrupt(format!(
                        "approved suggestion {:?} does not link a known recommendation",
                        s.suggestion_id
                    )))
                }
                (_, Some(_)) => {
                    return Err(corrupt(format!(
                        "unapproved suggestion {:?} links a recommendation",
                        s.suggestion_id
                    )))
                }
                _ => {}
            }
            if bank.suggestions.insert(s.suggestion_id.clone(), s).is_some() {
                return Err(corrupt("duplicate suggestion id".into()));
            }
        }
        Ok(bank)
    }

    pub fn from_json_str(text: &str) -> Result<Self, BankError> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| BankError::CorruptSnapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BankError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Replaces this bank with the one stored at `path`. On any error the
    /// current state is left as it was.
    pub fn reload(&mut self, path: impl AsRef<Path>) -> Result<(), BankError> {
        *self = Self::load(path)?;
        Ok(())
    }

    /// Writes the snapshot to a sibling temp file, fsyncs it, then renames
    /// it over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BankError> {
        atomic_write(path.as_ref(), self.to_json().as_bytes())
            .map_err(|e| BankError::Io(format!("{}: {e}", path.as_ref().display())))
    }
}

fn check_rules(rules: &[Rule], recs: &BTreeMap<String, Recommendation>) -> Result<(), BankError> {
    let mut ids = BTreeSet::new();
    for r in rules {
        if !recs.contains_key(&r.rec_id) {
            return Err(BankError::UnknownRecommendation(r.rec_id.clone()));
        }
        if !ids.insert(r.rule_id.as_str()) {
            return Err(BankError::DuplicateId(r.rule_id.clone()));
        }
    }
    Ok(())
}

/// Parses a seed corpus (the snapshot layout, with lenient recommendation
/// entries) into its recommendations and optional rules. Errors name the
/// offending entry.
pub fn parse_corpus(text: &str) -> Result<(Vec<NewRecommendation>, Vec<Value>), BankError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| BankError::MalformedCorpus(e.to_string()))?;
    let recs = doc
        .get("recommendations")
        .and_then(Value::as_array)
        .ok_or_else(|| BankError::MalformedCorpus("missing \"recommendations\" array".into()))?;
    let mut out = Vec::with_capacity(recs.len());
    for (i, raw) in recs.iter().enumerate() {
        let label = raw
            .get("rec_id")
            .and_then(Value::as_str)
            .map(|s| format!("{s:?}"))
            .unwrap_or_else(|| format!("#{i}"));
        let rec: NewRecommendation = serde_json::from_value(raw.clone())
            .map_err(|e| BankError::MalformedCorpus(format!("recommendation {label}: {e}")))?;
        if let Err(e) = rec.interaction_mode.parse::<InteractionMode>() {
            return Err(BankError::MalformedCorpus(format!("recommendation {label}: {e}")));
        }
        out.push(rec);
    }
    let rules = doc.get("rules").and_then(Value::as_array).cloned().unwrap_or_default();
    Ok((out, rules))
}

/// Takes the exclusive lock guarding the snapshot at `path`. The lock lives
/// on a `.lock` sidecar because saving replaces the snapshot file itself.
/// Released when the returned file is dropped.
pub fn lock_bank(path: &Path) -> Result<std::fs::File, BankError> {
    let mut name = path.as_os_str().to_owned();
    name.push(".lock");
    let lock_path = std::path::PathBuf::from(name);
    if let Some(dir) = lock_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BankError::Io(format!("{}: {e}", dir.display())))?;
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| BankError::Io(format!("{}: {e}", lock_path.display())))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(std::fs::TryLockError::WouldBlock) => Err(BankError::Locked(path.display().to_string())),
        Err(std::fs::TryLockError::Error(e)) => Err(BankError::Io(format!("{}: {e}", lock_path.display()))),
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("bank.json");
    let tmp = dir.join(format!(".{name}.{}.tmp", uuid::Uuid::new_v4().simple()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> NewRecommendation {
        NewRecommendation::new(id, &format!("title {id}"), &format!("body {id}"), "learner-learner")
    }

    fn vector() -> FeatureVector {
        FeatureVector::new("v1", vec![1.0, 0.0])
    }

    #[test]
    fn add_and_lookup() {
        let mut bank = KnowledgeBank::new();
        let id = bank.add_recommendation(rec("x")).unwrap();
        let r = bank.recommendation(&id).unwrap();
        assert_eq!(r.title, "title x");
        assert_eq!(r.interaction_mode, InteractionMode::LearnerLearner);
        assert_eq!(r.origin, Origin::Seeded);
        assert_eq!(bank.add_recommendation(rec("x")).unwrap_err().code(), "DuplicateId");
        let mut bad = rec("y");
        bad.interaction_mode = "peer-to-peer".into();
        assert_eq!(
            bank.add_recommendation(bad).unwrap_err().code(),
            "InvalidInteractionMode"
        );
        assert!(bank.recommendation("y").is_none());
    }

    #[test]
    fn rating_examples() {
        let mut bank = KnowledgeBank::new();
        bank.add_recommendation(rec("x")).unwrap();
        bank.record_rating("a", "x", 5).unwrap();
        assert_eq!(bank.ratings_for("x"), vec![5]);
        bank.record_rating("a", "x", 2).unwrap();
        assert_eq!(bank.ratings_for("x"), vec![2]);
        assert_eq!(
            bank.record_rating("a", "x", 0).unwrap_err(),
            BankError::ScoreOutOfRange(0)
        );
        assert_eq!(
            bank.record_rating("a", "x", 6).unwrap_err(),
            BankError::ScoreOutOfRange(6)
        );
        assert_eq!(
            bank.record_rating("a", "nope", 3).unwrap_err().code(),
            "UnknownRecommendation"
        );
        bank.set_status("x", RecommendationStatus::Retired).unwrap();
        assert_eq!(
            bank.record_rating("b", "x", 3).unwrap_err().code(),
            "UnknownRecommendation"
        );
    }

    #[test]
    fn ratings_by_session_is_a_prefix_scan() {
        let mut bank = KnowledgeBank::new();
        for id in ["x", "y"] {
            bank.add_recommendation(rec(id)).unwrap();
        }
        bank.record_rating("s1", "y", 4).unwrap();
        bank.record_rating("s1", "x", 3).unwrap();
        bank.record_rating("s10", "x", 1).unwrap();
        bank.record_rating("s0", "x", 1).unwrap();
        let got: Vec<_> = bank
            .ratings_by_session("s1")
            .map(|r| (r.rec_id.as_str(), r.score))
            .collect();
        assert_eq!(got, vec![("x", 3), ("y", 4)]);
    }

    #[test]
    fn suggestion_lifecycle() {
        let mut bank = KnowledgeBank::new();
        let id = bank
            .submit_suggestion("use think-pair-share in recitations", "s1", false)
            .unwrap();
        assert_eq!(bank.suggestion(&id).unwrap().state, SuggestionState::Pending);
        assert_eq!(bank.active_recommendations().count(), 0);
        assert_eq!(
            bank.submit_suggestion("  ", "s1", false).unwrap_err(),
            BankError::EmptySuggestion
        );

        let new_rec = bank
            .resolve_suggestion(&id, SuggestionDecision::Approve(rec("tps")))
            .unwrap()
            .unwrap();
        let r = bank.recommendation(&new_rec).unwrap();
        assert_eq!(r.origin, Origin::UserSuggested);
        assert_eq!(r.status, RecommendationStatus::Active);
        assert_eq!(bank.suggestion(&id).unwrap().resulting_rec_id.as_deref(), Some("tps"));
        assert_eq!(
            bank.resolve_suggestion(&id, SuggestionDecision::Reject)
                .unwrap_err()
                .code(),
            "AlreadyResolved"
        );

        let other = bank.submit_suggestion("exit tickets", "s2", true).unwrap();
        assert_eq!(
            bank.resolve_suggestion(&other, SuggestionDecision::Reject).unwrap(),
            None
        );
        assert_eq!(bank.suggestion(&other).unwrap().state, SuggestionState::Rejected);
        assert_eq!(bank.recommendations().count(), 1);
        assert_eq!(
            bank.resolve_suggestion("sg-999", SuggestionDecision::Reject)
                .unwrap_err()
                .code(),
            "UnknownSuggestion"
        );
    }

    #[test]
    fn failed_approval_leaves_suggestion_pending() {
        let mut bank = KnowledgeBank::new();
        bank.add_recommendation(rec("x")).unwrap();
        let id = bank.submit_suggestion("idea", "s", false).unwrap();
        let err = bank
            .resolve_suggestion(&id, SuggestionDecision::Approve(rec("x")))
            .unwrap_err();
        assert_eq!(err.code(), "DuplicateId");
        assert_eq!(bank.suggestion(&id).unwrap().state, SuggestionState::Pending);
    }

    #[test]
    fn anonymous_sessions_drop_user_ref() {
        let mut bank = KnowledgeBank::new();
        bank.record_session(SessionRecord {
            session_id: "s".into(),
            feature_vector: vector(),
            anonymous: true,
            user_ref: Some("leaky".into()),
            completed_at: Utc::now(),
        })
        .unwrap();
        assert!(bank.session("s").unwrap().user_ref.is_none());
        assert!(!bank.to_json().contains("leaky"));
        assert!(!bank.to_json().contains("user_ref"));
    }

    #[test]
    fn session_schema_mismatch() {
        let mut bank = KnowledgeBank::new();
        bank.adopt_schema_version("v2").unwrap();
        let err = bank
            .record_session(SessionRecord {
                session_id: "s".into(),
                feature_vector: vector(),
                anonymous: false,
                user_ref: None,
                completed_at: Utc::now(),
            })
            .unwrap_err();
        assert_eq!(err.code(), "SchemaVersionMismatch");
    }

    #[test]
    fn stats_examples() {
        let mut bank = KnowledgeBank::new();
        let empty = bank.stats();
        assert!(empty.recommendations_by_mode.values().all(|&n| n == 0));
        assert_eq!(empty.recommendations_by_mode.len(), 3);
        assert_eq!(empty.rating_count, 0);
        assert_eq!(empty.session_count, 0);
        assert!(empty.mean_rating.is_empty());

        bank.add_recommendation(rec("x")).unwrap();
        bank.record_rating("a", "x", 4).unwrap();
        bank.record_rating("b", "x", 2).unwrap();
        assert_eq!(bank.stats().mean_rating["x"], 3.0);
        assert_eq!(bank.stats().rating_count, 2);
    }

    #[test]
    fn import_is_all_or_nothing() {
        let mut bank = KnowledgeBank::new();
        bank.add_recommendation(rec("b")).unwrap();
        let err = bank
            .import_recommendations(vec![rec("a"), rec("b"), rec("c"), rec("c")])
            .unwrap_err();
        assert_eq!(err, BankError::DuplicateId("b, c".into()));
        assert_eq!(bank.recommendations().count(), 1);

        let mut bad = rec("d");
        bad.interaction_mode = "lecture".into();
        let err = bank.import_recommendations(vec![rec("a"), bad]).unwrap_err();
        assert_eq!(err.code(), "MalformedCorpus");
        assert!(err.to_string().contains("\"d\""));
        assert_eq!(bank.recommendations().count(), 1);
    }

    #[test]
    fn corpus_names_offending_entry() {
        let text = r#"{"recommendations":[
            {"rec_id":"ok","title":"t","body":"b","interaction_mode":"learner-content"},
            {"rec_id":"bad","title":"t","body":"b","interaction_mode":"peer-to-peer"}]}"#;
        let err = parse_corpus(text).unwrap_err();
        assert_eq!(err.code(), "MalformedCorpus");
        assert!(err.to_string().contains("\"bad\""), "{err}");
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");

        let empty = KnowledgeBank::new();
        empty.save(&path).unwrap();
        assert_eq!(KnowledgeBank::load(&path).unwrap(), empty);

        let mut bank = KnowledgeBank::new();
        for id in ["x", "y", "z"] {
            bank.add_recommendation(rec(id)).unwrap();
        }
        bank.record_rating("s1", "x", 5).unwrap();
        bank.record_rating("s2", "y", 3).unwrap();
        bank.save(&path).unwrap();
        let loaded = KnowledgeBank::load(&path).unwrap();
        assert_eq!(loaded.query_dump(), bank.query_dump());

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let mut target = bank.clone();
        let err = target.reload(&path).unwrap_err();
        assert_eq!(err.code(), "CorruptSnapshot");
        assert_eq!(target, bank);
    }

    #[test]
    fn snapshot_invariants_checked_on_load() {
        let mut bank = KnowledgeBank::new();
        bank.add_recommendation(rec("x")).unwrap();
        bank.record_rating("s1", "x", 5).unwrap();
        let mut snap = bank.snapshot();
        snap.recommendations.clear();
        assert_eq!(
            KnowledgeBank::from_snapshot(snap).unwrap_err().code(),
            "CorruptSnapshot"
        );

        let mut snap = bank.snapshot();
        snap.version = 99;
        assert_eq!(
            KnowledgeBank::from_snapshot(snap).unwrap_err().code(),
            "CorruptSnapshot"
        );
    }

    #[test]
    fn retired_approved_suggestion_survives_round_trip() {
        let mut bank = KnowledgeBank::new();
        let sid = bank.submit_suggestion("jigsaw", "s1", true).unwrap();
        bank.resolve_suggestion(&sid, SuggestionDecision::Approve(rec("j")))
            .unwrap();
        bank.set_status("j", RecommendationStatus::Retired).unwrap();
        let loaded = KnowledgeBank::from_json_str(&bank.to_json()).unwrap();
        assert_eq!(loaded, bank);
    }

    #[test]
    fn lock_is_exclusive_until_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let held = lock_bank(&path).unwrap();
        assert_eq!(lock_bank(&path).unwrap_err().code(), "BankLocked");
        drop(held);
        assert!(lock_bank(&path).is_ok());
    }
}
