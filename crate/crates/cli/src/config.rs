//! Run configuration: a TOML or JSON file, overridden by command-line flags.
//!
//! Resolution order for every setting is flag, then config file, then
//! environment (only the service URL is read from the environment), then
//! built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ncgp_core::measures::MeasureConfig;
use ncgp_core::noise::{ActionPrior, NoiseConfig};
use ncgp_core::service::SERVICE_URL_ENV;
use ncgp_core::smc::InferenceConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// `ngram:PATH`, `service:URL` or bare `service`.
    pub prior: Option<String>,
    pub service_url: Option<String>,
    /// Frequency list backing the vocabulary of a service prior.
    pub vocab: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub budget: Option<u64>,
    pub bootstrap: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub inference: InferenceConfig,
    pub noise: NoiseConfig,
    pub action_prior: Option<ActionPrior>,
    pub measures: MeasureConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        Ok(cfg)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Seed from the flag or the file; stochastic commands refuse to run
    /// without one.
    pub fn require_seed(&self, flag: Option<u64>) -> Result<u64> {
        match flag.or(self.seed) {
            Some(s) => Ok(s),
            None => bail!("a seed is required: pass --seed or set `seed` in the config file"),
        }
    }

    pub fn action_prior(&self) -> ActionPrior {
        self.action_prior.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PriorSpec {
    Ngram(PathBuf),
    Service(String),
}

/// Parses a prior spec. A bare `service` takes its URL from the config
/// file, then from the environment.
pub fn parse_prior(spec: &str, cfg: &RunConfig) -> Result<PriorSpec> {
    if let Some(path) = spec.strip_prefix("ngram:") {
        return Ok(PriorSpec::Ngram(PathBuf::from(path)));
    }
    if let Some(url) = spec.strip_prefix("service:") {
        return Ok(PriorSpec::Service(url.to_string()));
    }
    if spec == "service" {
        return Ok(PriorSpec::Service(service_url(cfg)?));
    }
    bail!("unknown prior {spec:?}; expected ngram:PATH or service:URL")
}

pub fn service_url(cfg: &RunConfig) -> Result<String> {
    if let Some(u) = &cfg.service_url {
        return Ok(u.clone());
    }
    match std::env::var(SERVICE_URL_ENV) {
        Ok(u) if !u.is_empty() => Ok(u),
        _ => bail!("no service URL: use service:URL, set `service_url` in the config, or export {SERVICE_URL_ENV}"),
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}
