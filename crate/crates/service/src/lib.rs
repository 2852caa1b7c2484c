//! HTTP consultation service.
//!
//! Wraps a [`pedarec_core::Advisor`] in the `/v1` JSON protocol used by chat
//! clients, plus `/v1/admin` routes for the operator tool.

pub mod config;
pub mod http;

use std::sync::Arc;

use anyhow::{Context, Result};
use pedarec_core::bank::{lock_bank, parse_corpus};
use pedarec_core::{Advisor, AdvisorConfig, FeatureSchema, KnowledgeBank, Rule};

pub use config::ServiceConfig;
pub use http::{router, AppState};

/// Builds the engine described by `config`: loads the schema, then the
/// snapshot (or the seed corpus on first boot), then the rules file.
pub fn bootstrap(config: &ServiceConfig) -> Result<Advisor> {
    let schema = config.schema_path.as_ref().map(FeatureSchema::load).transpose()?;

    let snapshot_exists = config.snapshot_path.as_ref().is_some_and(|p| p.exists());
    let bank = if snapshot_exists {
        let path = config.snapshot_path.as_ref().expect("checked");
        KnowledgeBank::load(path).with_context(|| format!("loading snapshot {}", path.display()))?
    } else if let Some(seed) = &config.seed_path {
        let text = std::fs::read_to_string(seed).with_context(|| format!("reading {}", seed.display()))?;
        bank_from_corpus(&text).with_context(|| format!("seeding from {}", seed.display()))?
    } else {
        KnowledgeBank::new()
    };

    let advisor = Advisor::new(
        schema,
        bank,
        AdvisorConfig {
            params: config.cf_params(),
            idle_timeout: config.idle_timeout(),
            snapshot_path: config.snapshot_path.clone(),
        },
    )?;
    if let Some(rules) = &config.rules_path {
        let text = std::fs::read_to_string(rules).with_context(|| format!("reading {}", rules.display()))?;
        let n = advisor
            .load_rules(&text)
            .with_context(|| format!("loading rules from {}", rules.display()))?;
        tracing::info!(rules = n, "loaded expert rules");
    }
    if !snapshot_exists {
        advisor.persist()?;
    }
    Ok(advisor)
}

/// A fresh bank holding a corpus's recommendations and rules.
pub fn bank_from_corpus(text: &str) -> Result<KnowledgeBank> {
    let (recs, rules) = parse_corpus(text)?;
    let mut bank = KnowledgeBank::new();
    bank.import_recommendations(recs)?;
    let rules: Vec<Rule> = rules
        .into_iter()
        .map(serde_json::from_value)
        .collect::<Result<_, _>>()
        .context("corpus rules")?;
    bank.replace_rules(rules)?;
    Ok(bank)
}

/// Locks the snapshot (so the admin tool cannot edit it underneath us) and
/// builds the shared handler state.
pub fn state(config: &ServiceConfig) -> Result<Arc<AppState>> {
    let lock = config
        .snapshot_path
        .as_deref()
        .map(lock_bank)
        .transpose()
        .context("locking the snapshot")?;
    Ok(Arc::new(AppState {
        advisor: bootstrap(config)?,
        admin_token: config.admin_token.clone(),
        _lock: lock,
    }))
}

/// Serves the protocol on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
