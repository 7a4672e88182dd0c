//! TOML run configuration.
//!
//! ```toml
//! workers = 4
//!
//! [run]
//! samples_per_problem = 5
//! feedback_rounds = 1
//! few_shot = true
//!
//! [endpoints.translator]
//! model_name = "deepseek-reasoner"
//! base_url = "https://api.deepseek.com/v1"
//! auth_env = "DEEPSEEK_API_KEY"
//!
//! [lean]
//! launch_command = ["lake", "exe", "repl"]
//! working_dir = "/opt/mathlib-project"
//! check_timeout_s = 120
//!
//! [bench]
//! sample_size = 1000
//! attempts_per_problem = 32
//! ```
//!
//! Every table and key is optional. Endpoint tables only override the keys
//! they name; the rest come from the role defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::llm::{ModelEndpoint, ModelRole};
use crate::pipeline::RunConfig;
use crate::verify::ReplConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointOverride {
    pub model_name: Option<String>,
    pub base_url: Option<String>,
    pub auth_env: Option<String>,
    pub max_concurrent: Option<u32>,
    pub requests_per_minute: Option<u32>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub request_timeout_s: Option<u64>,
}

impl EndpointOverride {
    pub fn apply(&self, mut ep: ModelEndpoint) -> ModelEndpoint {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { ep.$f = v.clone(); } )* };
        }
        set!(
            model_name,
            base_url,
            auth_env,
            max_concurrent,
            requests_per_minute,
            temperature,
            max_tokens,
            request_timeout_s
        );
        ep
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Problems or entries processed concurrently.
    pub workers: usize,
    pub run: RunConfig,
    pub endpoints: BTreeMap<ModelRole, EndpointOverride>,
    pub lean: ReplConfig,
    pub bench: BenchConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            run: RunConfig::default(),
            endpoints: BTreeMap::new(),
            lean: ReplConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Resolved endpoint for every role.
    pub fn resolved_endpoints(&self) -> BTreeMap<ModelRole, ModelEndpoint> {
        ModelRole::ALL
            .into_iter()
            .map(|role| {
                let base = ModelEndpoint::default_for(role);
                let ep = match self.endpoints.get(&role) {
                    Some(o) => o.apply(base),
                    None => base,
                };
                (role, ep)
            })
            .collect()
    }
}
