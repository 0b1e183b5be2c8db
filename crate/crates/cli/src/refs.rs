//! Backend and judge references as written on the command line or in a
//! service request: `http`, `scripted:<file>`, `oracle:<key file>`, `rule`,
//! `rule:contains`.

use std::path::Path;
use std::sync::Arc;

use augchain::agent::{ModelBackend, ScriptedBackend};
use augchain::eval::OracleBackend;
use augchain::rewards::{Judge, RuleJudge};

use crate::config::{BackendSettings, ConfigError, JudgeSettings};

pub fn backend_from_ref(reference: &str, http: &BackendSettings) -> Result<Arc<dyn ModelBackend>, ConfigError> {
    let (kind, arg) = split(reference);
    match (kind, arg) {
        ("http", None) => Ok(Arc::new(http.build())),
        ("scripted", Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("script {path}: {e}")))?;
            Ok(Arc::new(ScriptedBackend::from_script(&text)))
        }
        ("oracle", Some(path)) => {
            let oracle = OracleBackend::from_key_file(Path::new(path)).map_err(|e| ConfigError(e.to_string()))?;
            Ok(Arc::new(oracle))
        }
        _ => Err(ConfigError(format!(
            "unknown backend {reference:?}; expected http, scripted:<file> or oracle:<key file>"
        ))),
    }
}

pub fn judge_from_ref(reference: &str, http: &JudgeSettings) -> Result<Arc<dyn Judge>, ConfigError> {
    match split(reference) {
        ("rule", None) => Ok(Arc::new(RuleJudge::exact())),
        ("rule", Some("contains")) => Ok(Arc::new(RuleJudge::contains())),
        ("http", None) => Ok(Arc::new(http.build())),
        _ => Err(ConfigError(format!(
            "unknown judge {reference:?}; expected rule, rule:contains or http"
        ))),
    }
}

fn split(reference: &str) -> (&str, Option<&str>) {
    match reference.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (reference, None),
    }
}
