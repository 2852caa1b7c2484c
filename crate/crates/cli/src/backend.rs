//! The two ways the tool reaches a bank: the snapshot file directly (under
//! an exclusive lock) or a running service's admin routes.

use std::fs::File;
use std::path::{Path, PathBuf};

use pedarec_core::bank::lock_bank;
use pedarec_core::{
    Advisor, AdvisorConfig, AdvisorError, BankStats, ErrorCode, FeatureSchema, KnowledgeBank, NewRecommendation,
    PendingSuggestion, Rule, SuggestionDecision,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

/// An error with a stable code, printed as `{error_code, message}` in JSON
/// mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl From<AdvisorError> for CliError {
    fn from(e: AdvisorError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<pedarec_core::BankError> for CliError {
    fn from(e: pedarec_core::BankError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Backend {
    fn seed(&self, corpus: &str) -> CliResult<usize>;
    fn validate_rules(&self, document: &str) -> CliResult<usize>;
    fn load_rules(&self, document: &str) -> CliResult<usize>;
    fn rules(&self) -> CliResult<Vec<Rule>>;
    fn queue(&self) -> CliResult<Vec<PendingSuggestion>>;
    fn approve(&self, suggestion_id: &str, rec: NewRecommendation) -> CliResult<String>;
    fn reject(&self, suggestion_id: &str) -> CliResult<()>;
    fn stats(&self) -> CliResult<BankStats>;
    fn export(&self) -> CliResult<String>;
    fn import(&self, snapshot: &str) -> CliResult<()>;
}

pub struct Local {
    advisor: Advisor,
    _lock: File,
}

impl Local {
    /// Opens (or creates) the bank at `path`. Every change is written back
    /// before the call returns.
    pub fn open(path: &Path, schema: Option<&Path>) -> CliResult<Self> {
        let lock = lock_bank(path)?;
        let schema = match schema {
            Some(p) => FeatureSchema::load(p).map_err(|e| CliError::new("InvalidSchema", e.to_string()))?,
            None => FeatureSchema::default_schema(),
        };
        let bank = if path.exists() {
            KnowledgeBank::load(path)?
        } else {
            KnowledgeBank::new()
        };
        let config = AdvisorConfig {
            snapshot_path: Some(PathBuf::from(path)),
            ..AdvisorConfig::default()
        };
        Ok(Local {
            advisor: Advisor::new(Some(schema), bank, config)?,
            _lock: lock,
        })
    }
}

impl Backend for Local {
    fn seed(&self, corpus: &str) -> CliResult<usize> {
        Ok(self.advisor.seed(corpus)?)
    }

    fn validate_rules(&self, document: &str) -> CliResult<usize> {
        Ok(self.advisor.check_rules(document)?.len())
    }

    fn load_rules(&self, document: &str) -> CliResult<usize> {
        Ok(self.advisor.load_rules(document)?)
    }

    fn rules(&self) -> CliResult<Vec<Rule>> {
        Ok(self.advisor.rules())
    }

    fn queue(&self) -> CliResult<Vec<PendingSuggestion>> {
        Ok(self.advisor.moderation_queue())
    }

    fn approve(&self, suggestion_id: &str, rec: NewRecommendation) -> CliResult<String> {
        let id = self
            .advisor
            .resolve_suggestion(suggestion_id, SuggestionDecision::Approve(rec))?;
        Ok(id.unwrap_or_default())
    }

    fn reject(&self, suggestion_id: &str) -> CliResult<()> {
        self.advisor
            .resolve_suggestion(suggestion_id, SuggestionDecision::Reject)?;
        Ok(())
    }

    fn stats(&self) -> CliResult<BankStats> {
        Ok(self.advisor.stats())
    }

    fn export(&self) -> CliResult<String> {
        Ok(self.advisor.export_snapshot())
    }

    fn import(&self, snapshot: &str) -> CliResult<()> {
        Ok(self.advisor.import_snapshot(snapshot)?)
    }
}

pub struct Remote {
    base: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct WireError {
    error_code: String,
    message: String,
}

impl Remote {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Remote {
            base: base.trim_end_matches('/').to_string(),
            token,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn call(&self, method: reqwest::Method, path: &str, body: Option<String>) -> CliResult<String> {
        let url = format!("{}/v1/admin{path}", self.base);
        let mut req = self.client.request(method, &url);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        if let Some(body) = body {
            req = req.header(reqwest::header::CONTENT_TYPE, "application/json").body(body);
        }
        let resp = req
            .send()
            .map_err(|e| CliError::new("ServiceUnreachable", format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| CliError::new("ServiceUnreachable", format!("{url}: {e}")))?;
        if status.is_success() {
            return Ok(text);
        }
        match serde_json::from_str::<WireError>(&text) {
            Ok(e) => Err(CliError::new(&e.error_code, e.message)),
            Err(_) => Err(CliError::new("UnexpectedResponse", format!("{status}: {text}"))),
        }
    }

    fn json<T: DeserializeOwned>(&self, method: reqwest::Method, path: &str, body: Option<String>) -> CliResult<T> {
        let text = self.call(method, path, body)?;
        serde_json::from_str(&text).map_err(|e| CliError::new("UnexpectedResponse", e.to_string()))
    }

    fn field<T: DeserializeOwned>(
        &self,
        method: reqwest::Method,
        path: &str,
        body: Option<String>,
        key: &str,
    ) -> CliResult<T> {
        let mut v: Value = self.json(method, path, body)?;
        serde_json::from_value(v[key].take())
            .map_err(|e| CliError::new("UnexpectedResponse", format!("field {key:?}: {e}")))
    }
}

impl Backend for Remote {
    fn seed(&self, corpus: &str) -> CliResult<usize> {
        self.field(reqwest::Method::POST, "/seed", Some(corpus.into()), "imported")
    }

    fn validate_rules(&self, document: &str) -> CliResult<usize> {
        self.field(reqwest::Method::POST, "/rules/validate", Some(document.into()), "rules")
    }

    fn load_rules(&self, document: &str) -> CliResult<usize> {
        self.field(reqwest::Method::POST, "/rules", Some(document.into()), "loaded")
    }

    fn rules(&self) -> CliResult<Vec<Rule>> {
        self.field(reqwest::Method::GET, "/rules", None, "rules")
    }

    fn queue(&self) -> CliResult<Vec<PendingSuggestion>> {
        self.field(reqwest::Method::GET, "/suggestions", None, "pending")
    }

    fn approve(&self, suggestion_id: &str, rec: NewRecommendation) -> CliResult<String> {
        let body = serde_json::to_string(&rec).expect("serializable");
        self.field(
            reqwest::Method::POST,
            &format!("/suggestions/{suggestion_id}/approve"),
            Some(body),
            "rec_id",
        )
    }

    fn reject(&self, suggestion_id: &str) -> CliResult<()> {
        self.call(
            reqwest::Method::POST,
            &format!("/suggestions/{suggestion_id}/reject"),
            None,
        )?;
        Ok(())
    }

    fn stats(&self) -> CliResult<BankStats> {
        self.json(reqwest::Method::GET, "/stats", None)
    }

    fn export(&self) -> CliResult<String> {
        self.call(reqwest::Method::GET, "/snapshot", None)
    }

    fn import(&self, snapshot: &str) -> CliResult<()> {
        self.call(reqwest::Method::POST, "/snapshot", Some(snapshot.into()))?;
        Ok(())
    }
}
