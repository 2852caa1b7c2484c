//! Service configuration: one TOML file, then `PEDAREC_*` environment
//! overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use pedarec_core::CfParams;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub snapshot_path: Option<PathBuf>,
    pub schema_path: Option<PathBuf>,
    pub rules_path: Option<PathBuf>,
    /// Corpus loaded on first boot, when no snapshot exists yet.
    pub seed_path: Option<PathBuf>,
    pub k: usize,
    pub theta: f64,
    pub rho: f64,
    pub idle_timeout_secs: u64,
    /// Bearer token required on `/v1/admin` routes when set.
    pub admin_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let cf = CfParams::default();
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            snapshot_path: None,
            schema_path: None,
            rules_path: None,
            seed_path: None,
            k: cf.k,
            theta: cf.theta,
            rho: cf.rho,
            idle_timeout_secs: 60 * 60,
            admin_token: None,
        }
    }
}

const ENV_PREFIX: &str = "PEDAREC_";

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (if given), then applies environment overrides from
    /// the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let bad = |e: &dyn std::fmt::Display| anyhow::anyhow!("{key}={value:?}: {e}");
            match name {
                "LISTEN" => self.listen = value,
                "SNAPSHOT_PATH" => self.snapshot_path = Some(value.into()),
                "SCHEMA_PATH" => self.schema_path = Some(value.into()),
                "RULES_PATH" => self.rules_path = Some(value.into()),
                "SEED_PATH" => self.seed_path = Some(value.into()),
                "K" => self.k = value.parse().map_err(|e| bad(&e))?,
                "THETA" => self.theta = value.parse().map_err(|e| bad(&e))?,
                "RHO" => self.rho = value.parse().map_err(|e| bad(&e))?,
                "IDLE_TIMEOUT_SECS" => self.idle_timeout_secs = value.parse().map_err(|e| bad(&e))?,
                "ADMIN_TOKEN" => self.admin_token = Some(value),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let Err(e) = self.cf_params().validate() {
            bail!("invalid collaborative filtering parameters: {e}");
        }
        Ok(())
    }

    pub fn cf_params(&self) -> CfParams {
        CfParams {
            k: self.k,
            theta: self.theta,
            rho: self.rho,
        }
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_secs(self.idle_timeout_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut c = ServiceConfig::from_toml("listen = \"0.0.0.0:9000\"\nk = 7\n").unwrap();
        assert_eq!(c.listen, "0.0.0.0:9000");
        assert_eq!(c.k, 7);
        assert_eq!(c.theta, 0.5);
        assert_eq!(c.rho, 3.0);
        assert_eq!(c.idle_timeout(), Duration::from_secs(3600));

        c.apply_env([
            ("PEDAREC_RHO".to_string(), "4".to_string()),
            ("PEDAREC_SNAPSHOT_PATH".to_string(), "/tmp/b.json".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(c.rho, 4.0);
        assert_eq!(c.snapshot_path.as_deref(), Some(Path::new("/tmp/b.json")));

        assert!(c.apply_env([("PEDAREC_K".to_string(), "many".to_string())]).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServiceConfig::from_toml("colour = 1").is_err());
        let c = ServiceConfig::from_toml("theta = 2.0").unwrap();
        assert!(c.validate().is_err());
    }
}
