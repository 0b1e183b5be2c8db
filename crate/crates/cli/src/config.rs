//! Layered settings: built-in defaults, then a TOML file, then environment
//! variables, then command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use augchain::agent::{EpisodeConfig, HttpBackend, HttpBackendConfig};
use augchain::grpo::GrpoConfig;
use augchain::rewards::{HttpJudge, HttpJudgeConfig, RewardConfig};
use serde::{Deserialize, Serialize};

/// Names of the environment variables read by [`CliConfig::resolve`].
pub mod env {
    pub const CONFIG: &str = "AUGCHAIN_CONFIG";
    pub const WORKERS: &str = "AUGCHAIN_WORKERS";
    pub const BACKEND_URL: &str = "AUGCHAIN_BACKEND_URL";
    pub const BACKEND_MODEL: &str = "AUGCHAIN_BACKEND_MODEL";
    pub const JUDGE_URL: &str = "AUGCHAIN_JUDGE_URL";
    pub const JUDGE_MODEL: &str = "AUGCHAIN_JUDGE_MODEL";
    pub const MAX_CALLS: &str = "AUGCHAIN_MAX_CALLS";
    pub const BIND: &str = "AUGCHAIN_BIND";
    pub const SERVICE_SECRET: &str = "AUGCHAIN_SERVICE_SECRET";
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            timeout_secs: 300,
        }
    }
}

impl BackendSettings {
    pub fn build(&self) -> HttpBackend {
        let mut c = HttpBackendConfig::new(&self.base_url, &self.model);
        c.timeout = Duration::from_secs(self.timeout_secs);
        HttpBackend::new(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSettings {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for JudgeSettings {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8001/v1".into(),
            model: "judge".into(),
            timeout_secs: 120,
            max_in_flight: 8,
        }
    }
}

impl JudgeSettings {
    pub fn build(&self) -> HttpJudge {
        let mut c = HttpJudgeConfig::new(&self.base_url, &self.model);
        c.timeout = Duration::from_secs(self.timeout_secs);
        c.max_in_flight = self.max_in_flight;
        HttpJudge::new(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// When set, every request must carry it in the secret header.
    pub secret: Option<String>,
    pub max_body_bytes: usize,
    /// Judge used by the rewards endpoint: `rule`, `rule:contains` or `http`.
    pub judge: String,
    /// Backend used by the episode endpoint when a request names none.
    pub backend: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8088".into(),
            secret: None,
            max_body_bytes: 32 * 1024 * 1024,
            judge: "rule".into(),
            backend: "http".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub workers: usize,
    pub backend: BackendSettings,
    pub judge: JudgeSettings,
    pub episode: EpisodeConfig,
    pub rewards: RewardConfig,
    pub grpo: GrpoConfig,
    pub service: ServiceConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            backend: BackendSettings::default(),
            judge: JudgeSettings::default(),
            episode: EpisodeConfig::default(),
            rewards: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the lower layers in place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub backend_url: Option<String>,
    pub backend_model: Option<String>,
    pub judge_url: Option<String>,
    pub judge_model: Option<String>,
    pub max_calls: Option<u32>,
    pub bind: Option<String>,
    pub secret: Option<String>,
}

fn parse_env<T: std::str::FromStr>(name: &str, value: String) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("{name}={value:?} is not a valid value")))
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    /// Applies every layer in order. `file` falls back to the path named by
    /// `AUGCHAIN_CONFIG`; `lookup` reads one environment variable.
    pub fn resolve(
        file: Option<&Path>,
        lookup: impl Fn(&str) -> Option<String>,
        flags: &Overrides,
    ) -> Result<Self, ConfigError> {
        let file: Option<PathBuf> = file.map(Path::to_path_buf).or_else(|| lookup(env::CONFIG).map(PathBuf::from));
        let mut c = match file {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        c.apply_env(&lookup)?;
        c.apply_flags(flags);
        c.validate()?;
        Ok(c)
    }

    fn apply_env(&mut self, lookup: &impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |n: &str| lookup(n).filter(|v| !v.is_empty());
        if let Some(v) = get(env::WORKERS) {
            self.workers = parse_env(env::WORKERS, v)?;
        }
        if let Some(v) = get(env::BACKEND_URL) {
            self.backend.base_url = v;
        }
        if let Some(v) = get(env::BACKEND_MODEL) {
            self.backend.model = v;
        }
        if let Some(v) = get(env::JUDGE_URL) {
            self.judge.base_url = v;
        }
        if let Some(v) = get(env::JUDGE_MODEL) {
            self.judge.model = v;
        }
        if let Some(v) = get(env::MAX_CALLS) {
            self.set_max_calls(parse_env(env::MAX_CALLS, v)?);
        }
        if let Some(v) = get(env::BIND) {
            self.service.bind = v;
        }
        if let Some(v) = get(env::SERVICE_SECRET) {
            self.service.secret = Some(v);
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Overrides) {
        if let Some(v) = f.workers {
            self.workers = v;
        }
        if let Some(v) = &f.backend_url {
            self.backend.base_url = v.clone();
        }
        if let Some(v) = &f.backend_model {
            self.backend.model = v.clone();
        }
        if let Some(v) = &f.judge_url {
            self.judge.base_url = v.clone();
        }
        if let Some(v) = &f.judge_model {
            self.judge.model = v.clone();
        }
        if let Some(v) = f.max_calls {
            self.set_max_calls(v);
        }
        if let Some(v) = &f.bind {
            self.service.bind = v.clone();
        }
        if let Some(v) = &f.secret {
            self.service.secret = Some(v.clone());
        }
    }

    /// The episode budget and the reward budget always move together.
    fn set_max_calls(&mut self, k: u32) {
        self.episode.max_calls = k;
        self.rewards.max_calls = k;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError("workers must be at least 1".into()));
        }
        self.episode.validate().map_err(ConfigError)?;
        if self.judge.max_in_flight == 0 {
            return Err(ConfigError("judge.max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}
