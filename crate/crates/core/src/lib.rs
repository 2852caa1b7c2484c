//! Core of a peer-rated pedagogical recommender.
//!
//! A consultation collects answers about an instructor and their course
//! ([`feature`]), encodes them into a vector, finds the most similar past
//! sessions and pulls the recommendations those peers rated highly ([`cf`]),
//! then lets a table of expert rules veto, confirm, or add recommendations
//! ([`expert`]). Ratings and suggested practices flow back into the
//! [`bank`], which is the only durable state.

pub mod bank;
pub mod cf;
pub mod condition;
pub mod expert;
pub mod feature;
pub mod session;

pub use bank::{
    BankCounts, BankError, BankStats, InteractionMode, KnowledgeBank, NewRecommendation, Origin, PendingSuggestion,
    RatingRecord, Recommendation, RecommendationStatus, SessionRecord, Suggestion, SuggestionDecision, SuggestionState,
};
pub use cf::{
    candidate_set, cosine, cosine_similarity, similar_sessions, Candidate, CandidateSet, CfError, CfParams,
    SimilarityScore,
};
pub use condition::{Condition, Test};
pub use expert::{
    evaluate_rules, load_rules, refine, validate_rules, FinalEntry, FinalSet, Judgement, Provenance, Rule, RuleError,
    RulesDocument, Verdict,
};
pub use feature::{
    Answer, FeatureDef, FeatureError, FeatureKind, FeatureSchema, FeatureVector, SchemaError, SessionFeatures,
};
pub use session::{
    Advisor, AdvisorConfig, AdvisorError, AnswerOutcome, CloseSummary, Phase, RecommendationCard, SessionEvent,
    SessionMode,
};

/// Stable machine-readable name for an error variant.
///
/// These strings go over the wire as `error_code` and are part of the
/// protocol, so they never change once published.
pub trait ErrorCode {
    fn code(&self) -> &'static str;
}
