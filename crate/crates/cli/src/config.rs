use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clarisim::bridge::{BridgeOptions, TransportSpec};
use clarisim::decoding::DecodingParams;
use clarisim::promptcodec::SpecialMarkers;
use clarisim::retrieval::{Bm25Params, ExpansionWeights};
use clarisim::simulator::RuleConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "CLARISIM_CONFIG";

/// Everything a command can take from the config file. Command-line flags
/// override the matching keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub markers: SpecialMarkers,
    pub rules: RuleConfig,
    pub decoding: DecodingParams,
    pub bm25: Bm25Params,
    pub expansion: ExpansionWeights,
    pub retrieval: RetrievalSection,
    pub bridge: BridgeSection,
    /// Named external backends, selectable with `--backend-name`.
    pub backends: BTreeMap<String, TransportSpec>,
    pub paths: Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub depth: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { depth: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    pub hello_timeout_secs: f64,
    pub request_timeout_secs: f64,
}

impl Default for BridgeSection {
    fn default() -> Self {
        let d = BridgeOptions::default();
        Self {
            hello_timeout_secs: d.hello_timeout.as_secs_f64(),
            request_timeout_secs: d.request_timeout.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub multi_turn: Option<PathBuf>,
    pub collection: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub ngram_model: Option<PathBuf>,
}

impl Config {
    pub fn parse(raw: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `explicit` wins over `CLARISIM_CONFIG`; with neither, defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let Some(path) = explicit.map(Path::to_path_buf).or(from_env) else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&raw).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.markers.validate()?;
        self.decoding.validate()?;
        for (name, v) in [("bridge.hello_timeout_secs", self.bridge.hello_timeout_secs), ("bridge.request_timeout_secs", self.bridge.request_timeout_secs)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be a positive number of seconds, got {v}");
            }
        }
        if self.retrieval.depth == 0 {
            bail!("retrieval.depth must be at least 1");
        }
        Ok(())
    }

    pub fn bridge_options(&self) -> BridgeOptions {
        BridgeOptions {
            hello_timeout: Duration::from_secs_f64(self.bridge.hello_timeout_secs),
            request_timeout: Duration::from_secs_f64(self.bridge.request_timeout_secs),
        }
    }
}
