//! Consultation sessions and the engine that drives them.
//!
//! A session asks questions one at a time, runs the recommendation pipeline
//! once the last answer is in, then hands out the final set card by card
//! and records the user's ratings and suggestions in the bank.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{
    parse_corpus, BankCounts, BankError, BankStats, InteractionMode, KnowledgeBank, PendingSuggestion, SessionRecord,
    SuggestionDecision,
};
use crate::cf::{candidate_set, similar_sessions, CfParams};
use crate::expert::{load_rules, refine, validate_rules, FinalSet, Rule, RuleError};
use crate::feature::{Answer, FeatureDef, FeatureError, FeatureSchema, SessionFeatures};
use crate::ErrorCode;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(60 * 60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SessionMode {
    Identified { user_ref: String },
    Anonymous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Asking,
    Recommending,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationCard {
    pub rec_id: String,
    pub title: String,
    pub body: String,
    pub interaction_mode: InteractionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnswerOutcome {
    NextQuestion(FeatureDef),
    Ready { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseSummary {
    pub presented: usize,
    pub rated: usize,
}

/// Audit trail of one session, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Answered(String),
    Ready(usize),
    Presented(String),
    Rated { rec_id: String, score: u8 },
    Suggested(String),
}

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("no feature schema is loaded")]
    ServiceNotSeeded,
    #[error(
        "expected an answer for {}, got {got:?}",
        expected.as_deref().map_or("no question (all answered)".to_string(), |e| format!("{e:?}"))
    )]
    WrongQuestion { expected: Option<String>, got: String },
    #[error("recommendations are not ready yet")]
    NotReady,
    #[error("recommendation {0:?} has not been presented in this session")]
    NotPresented(String),
    #[error("invalid session mode: {0}")]
    InvalidMode(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

impl ErrorCode for AdvisorError {
    fn code(&self) -> &'static str {
        match self {
            AdvisorError::UnknownSession => "UnknownSession",
            AdvisorError::ServiceNotSeeded => "ServiceNotSeeded",
            AdvisorError::WrongQuestion { .. } => "WrongQuestion",
            AdvisorError::NotReady => "NotReady",
            AdvisorError::NotPresented(_) => "NotPresented",
            AdvisorError::InvalidMode(_) => "InvalidMode",
            AdvisorError::Feature(e) => e.code(),
            AdvisorError::Bank(e) => e.code(),
            AdvisorError::Rule(e) => e.code(),
        }
    }
}

#[derive(Debug)]
struct Session {
    id: String,
    mode: SessionMode,
    phase: Phase,
    answers: SessionFeatures,
    queue: FinalSet,
    cursor: usize,
    presented: BTreeSet<String>,
    rated: BTreeSet<String>,
    events: Vec<SessionEvent>,
    started_at: DateTime<Utc>,
    last_active: Instant,
}

#[derive(Debug, Clone)]
pub struct AdvisorConfig {
    pub params: CfParams,
    pub idle_timeout: Duration,
    /// Where to write the bank after every mutation. `None` keeps it in memory.
    pub snapshot_path: Option<PathBuf>,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            params: CfParams::default(),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            snapshot_path: None,
        }
    }
}

/// The recommendation engine plus its live sessions.
///
/// Bank writes are serialized behind one lock; reads share it. Each session
/// has its own lock, so calls for one session are handled in order while
/// different sessions proceed in parallel.
pub struct Advisor {
    schema: Option<Arc<FeatureSchema>>,
    bank: RwLock<KnowledgeBank>,
    config: AdvisorConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Advisor {
    pub fn new(
        schema: Option<FeatureSchema>,
        mut bank: KnowledgeBank,
        config: AdvisorConfig,
    ) -> Result<Self, AdvisorError> {
        if let Some(schema) = &schema {
            bank.adopt_schema_version(&schema.version)?;
            validate_rules(bank.rules(), schema, &bank)?;
        }
        Ok(Advisor {
            schema: schema.map(Arc::new),
            bank: RwLock::new(bank),
            config,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn schema(&self) -> Option<&FeatureSchema> {
        self.schema.as_deref()
    }

    pub fn params(&self) -> CfParams {
        self.config.params
    }

    /// Runs `f` against a consistent view of the bank.
    pub fn with_bank<T>(&self, f: impl FnOnce(&KnowledgeBank) -> T) -> T {
        f(&self.bank.read())
    }

    /// Applies a mutation and persists the result. If persisting fails the
    /// in-memory change is rolled back.
    fn mutate<T, E>(&self, f: impl FnOnce(&mut KnowledgeBank) -> Result<T, E>) -> Result<T, AdvisorError>
    where
        AdvisorError: From<E>,
    {
        let mut bank = self.bank.write();
        let before = self.config.snapshot_path.as_ref().map(|_| bank.clone());
        let out = f(&mut bank)?;
        if let (Some(path), Some(before)) = (&self.config.snapshot_path, before) {
            if let Err(e) = bank.save(path) {
                *bank = before;
                return Err(e.into());
            }
        }
        Ok(out)
    }

    fn require_schema(&self) -> Result<Arc<FeatureSchema>, AdvisorError> {
        self.schema.clone().ok_or(AdvisorError::ServiceNotSeeded)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, AdvisorError> {
        // Never hold the map lock while waiting on a session lock.
        let session = self
            .sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or(AdvisorError::UnknownSession)?;
        let expired = {
            let s = session.lock();
            s.phase == Phase::Closed || s.last_active.elapsed() > self.config.idle_timeout
        };
        if expired {
            self.sessions.lock().remove(id);
            return Err(AdvisorError::UnknownSession);
        }
        Ok(session)
    }

    /// Drops sessions idle for longer than the configured timeout.
    pub fn purge_expired(&self) -> usize {
        let timeout = self.config.idle_timeout;
        let mut sessions = self.sessions.lock();
        let before = sessions.len();
        // A session that is busy right now is not idle.
        sessions.retain(|_, s| s.try_lock().is_none_or(|s| s.last_active.elapsed() <= timeout));
        before - sessions.len()
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().len()
    }

    // ---- consultation ----------------------------------------------------

    pub fn start_session(&self, mode: SessionMode) -> Result<(String, FeatureDef), AdvisorError> {
        let schema = self.require_schema()?;
        if let SessionMode::Identified { user_ref } = &mode {
            if user_ref.trim().is_empty() {
                return Err(AdvisorError::InvalidMode("user_ref must not be empty".into()));
            }
        }
        self.purge_expired();
        let answers = SessionFeatures::new(&schema);
        let first = schema
            .next_question(&answers)
            .cloned()
            .expect("schemas have at least one feature");
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session {
            id: id.clone(),
            mode,
            phase: Phase::Asking,
            answers,
            queue: FinalSet::default(),
            cursor: 0,
            presented: BTreeSet::new(),
            rated: BTreeSet::new(),
            events: Vec::new(),
            started_at: Utc::now(),
            last_active: Instant::now(),
        };
        self.sessions.lock().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok((id, first))
    }

    /// Stores the answer to the current question. `None` declines an
    /// optional question. After the last answer the pipeline runs and the
    /// session switches to presenting recommendations.
    pub fn submit_answer(
        &self,
        session_id: &str,
        feature_id: &str,
        raw: Option<&Answer>,
    ) -> Result<AnswerOutcome, AdvisorError> {
        let schema = self.require_schema()?;
        let handle = self.session(session_id)?;
        let mut session = handle.lock();
        session.last_active = Instant::now();
        if schema.feature(feature_id).is_none() {
            return Err(FeatureError::UnknownFeature(feature_id.to_string()).into());
        }
        let expected = match session.phase {
            Phase::Asking => schema.next_question(&session.answers).map(|d| d.id.clone()),
            _ => None,
        };
        if expected.as_deref() != Some(feature_id) {
            return Err(AdvisorError::WrongQuestion {
                expected,
                got: feature_id.to_string(),
            });
        }
        session.answers.record(&schema, feature_id, raw)?;
        session.events.push(SessionEvent::Answered(feature_id.to_string()));

        if let Some(next) = schema.next_question(&session.answers) {
            return Ok(AnswerOutcome::NextQuestion(next.clone()));
        }

        let vector = schema.encode(&session.answers)?;
        let queue = {
            let bank = self.bank.read();
            let p = self.config.params;
            let peers = similar_sessions(&vector, &bank, p.k, p.theta, Some(&session.id));
            let candidates = candidate_set(&peers, &bank, p.rho);
            refine(&candidates, &session.answers, bank.rules(), &bank)
        };
        let (anonymous, user_ref) = match &session.mode {
            SessionMode::Anonymous => (true, None),
            SessionMode::Identified { user_ref } => (false, Some(user_ref.clone())),
        };
        let record = SessionRecord {
            session_id: session.id.clone(),
            feature_vector: vector,
            anonymous,
            user_ref,
            completed_at: Utc::now(),
        };
        self.mutate(|bank| bank.record_session(record))?;
        let count = queue.len();
        session.queue = queue;
        session.cursor = 0;
        session.phase = Phase::Recommending;
        session.events.push(SessionEvent::Ready(count));
        Ok(AnswerOutcome::Ready { count })
    }

    /// Next card of the final set, or `None` once all were shown. Text is
    /// read from the bank now, not when the set was computed.
    pub fn next_recommendation(&self, session_id: &str) -> Result<Option<RecommendationCard>, AdvisorError> {
        let handle = self.session(session_id)?;
        let mut session = handle.lock();
        session.last_active = Instant::now();
        if session.phase != Phase::Recommending {
            return Err(AdvisorError::NotReady);
        }
        let Some(entry) = session.queue.get(session.cursor).cloned() else {
            return Ok(None);
        };
        let card = self.with_bank(|bank| {
            bank.recommendation(&entry.rec_id).map(|r| RecommendationCard {
                rec_id: r.rec_id.clone(),
                title: r.title.clone(),
                body: r.body.clone(),
                interaction_mode: r.interaction_mode,
            })
        });
        let card = card.ok_or_else(|| BankError::UnknownRecommendation(entry.rec_id.clone()))?;
        session.cursor += 1;
        session.presented.insert(entry.rec_id.clone());
        session.events.push(SessionEvent::Presented(entry.rec_id));
        Ok(Some(card))
    }

    pub fn rate_current(&self, session_id: &str, rec_id: &str, score: i64) -> Result<(), AdvisorError> {
        let handle = self.session(session_id)?;
        let mut session = handle.lock();
        session.last_active = Instant::now();
        if self.with_bank(|b| b.recommendation(rec_id).is_none()) {
            return Err(BankError::UnknownRecommendation(rec_id.to_string()).into());
        }
        if !session.presented.contains(rec_id) {
            return Err(AdvisorError::NotPresented(rec_id.to_string()));
        }
        self.mutate(|bank| bank.record_rating(session_id, rec_id, score))?;
        session.rated.insert(rec_id.to_string());
        session.events.push(SessionEvent::Rated {
            rec_id: rec_id.to_string(),
            score: score as u8,
        });
        Ok(())
    }

    pub fn suggest_practice(&self, session_id: &str, text: &str) -> Result<String, AdvisorError> {
        let handle = self.session(session_id)?;
        let mut session = handle.lock();
        session.last_active = Instant::now();
        let anonymous = session.mode == SessionMode::Anonymous;
        let id = self.mutate(|bank| bank.submit_suggestion(text, session_id, anonymous))?;
        session.events.push(SessionEvent::Suggested(id.clone()));
        Ok(id)
    }

    pub fn close_session(&self, session_id: &str) -> Result<CloseSummary, AdvisorError> {
        let handle = self.session(session_id)?;
        let summary = {
            let mut session = handle.lock();
            session.phase = Phase::Closed;
            CloseSummary {
                presented: session.cursor,
                rated: session.rated.len(),
            }
        };
        self.sessions.lock().remove(session_id);
        Ok(summary)
    }

    /// Audit trail of a live session.
    pub fn session_events(&self, session_id: &str) -> Result<Vec<SessionEvent>, AdvisorError> {
        Ok(self.session(session_id)?.lock().events.clone())
    }

    pub fn session_queue(&self, session_id: &str) -> Result<FinalSet, AdvisorError> {
        Ok(self.session(session_id)?.lock().queue.clone())
    }

    pub fn session_phase(&self, session_id: &str) -> Result<Phase, AdvisorError> {
        Ok(self.session(session_id)?.lock().phase)
    }

    pub fn session_started_at(&self, session_id: &str) -> Result<DateTime<Utc>, AdvisorError> {
        Ok(self.session(session_id)?.lock().started_at)
    }

    // ---- administration --------------------------------------------------

    pub fn counts(&self) -> BankCounts {
        self.with_bank(KnowledgeBank::counts)
    }

    pub fn stats(&self) -> BankStats {
        self.with_bank(KnowledgeBank::stats)
    }

    pub fn rules(&self) -> Vec<Rule> {
        self.with_bank(|b| b.rules().to_vec())
    }

    /// Validates a rules document without installing it.
    pub fn check_rules(&self, document: &str) -> Result<Vec<Rule>, AdvisorError> {
        let schema = self.require_schema()?;
        Ok(self.with_bank(|b| load_rules(document, &schema, b))?)
    }

    /// Replaces the rule set atomically. Sessions whose pipeline already ran
    /// keep the final set computed under the old rules.
    pub fn load_rules(&self, document: &str) -> Result<usize, AdvisorError> {
        let schema = self.require_schema()?;
        self.mutate(|bank| -> Result<usize, AdvisorError> {
            let rules = load_rules(document, &schema, bank)?;
            let n = rules.len();
            bank.replace_rules(rules)?;
            Ok(n)
        })
    }

    pub fn moderation_queue(&self) -> Vec<PendingSuggestion> {
        self.with_bank(KnowledgeBank::moderation_queue)
    }

    /// Writes the current bank to the snapshot path, if one is configured.
    pub fn persist(&self) -> Result<(), AdvisorError> {
        if let Some(path) = &self.config.snapshot_path {
            self.bank.read().save(path)?;
        }
        Ok(())
    }

    pub fn resolve_suggestion(
        &self,
        suggestion_id: &str,
        decision: SuggestionDecision,
    ) -> Result<Option<String>, AdvisorError> {
        self.mutate(|bank| bank.resolve_suggestion(suggestion_id, decision))
    }

    /// Imports the recommendations of a corpus document, all or nothing.
    pub fn seed(&self, corpus: &str) -> Result<usize, AdvisorError> {
        let (recs, _) = parse_corpus(corpus)?;
        self.mutate(|bank| bank.import_recommendations(recs))
    }

    pub fn export_snapshot(&self) -> String {
        self.with_bank(KnowledgeBank::to_json)
    }

    /// Replaces the whole bank. The document must be a valid snapshot whose
    /// rules fit the loaded schema.
    pub fn import_snapshot(&self, text: &str) -> Result<(), AdvisorError> {
        let mut incoming = KnowledgeBank::from_json_str(text)?;
        if let Some(schema) = &self.schema {
            incoming.adopt_schema_version(&schema.version)?;
            validate_rules(incoming.rules(), schema, &incoming)?;
        }
        self.mutate(|bank| -> Result<(), AdvisorError> {
            *bank = incoming;
            Ok(())
        })
    }
}
