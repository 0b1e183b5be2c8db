//! Process exit codes, one per error class.

use augchain::agent::{EpisodeError, EpisodeErrorKind};
use augchain::error::ImageError;
use augchain::eval::EvalError;
use augchain::grpo::GrpoError;
use augchain::jsonl::JsonlError;
use augchain::pipeline::PipelineError;
use augchain::rewards::{JudgeError, RewardError};
use augchain::ExecError;

use crate::config::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitClass {
    Ok = 0,
    Internal = 1,
    Usage = 2,
    Config = 3,
    Input = 4,
    Backend = 5,
    Judge = 6,
    Invalid = 7,
    Bind = 8,
}

impl ExitClass {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Raised when a listener cannot bind its address.
#[derive(Debug, thiserror::Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindError {
    pub addr: String,
    pub source: std::io::Error,
}

/// Input that parsed but cannot be used, such as a record missing a field.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

/// Raised after a run finished and was saved but some attempts aborted.
#[derive(Debug, thiserror::Error)]
#[error("{failed} attempt(s) aborted because the backend was unavailable; rerun to resume")]
pub struct PartialRun {
    pub failed: usize,
}

fn eval_class(e: &EvalError) -> ExitClass {
    match e {
        EvalError::Config(_) => ExitClass::Config,
        EvalError::Judge(_) => ExitClass::Judge,
        EvalError::Episode(_) => ExitClass::Invalid,
        EvalError::Image { .. }
        | EvalError::DuplicateId(_)
        | EvalError::Jsonl(_)
        | EvalError::MissingAttempts(_)
        | EvalError::Io(_) => ExitClass::Input,
    }
}

/// Classifies by the first recognized error in the chain.
pub fn classify(err: &anyhow::Error) -> ExitClass {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return ExitClass::Config;
        }
        if cause.is::<BindError>() {
            return ExitClass::Bind;
        }
        if cause.is::<PartialRun>() {
            return ExitClass::Backend;
        }
        if cause.is::<JudgeError>() {
            return ExitClass::Judge;
        }
        if cause.is::<InputError>() || cause.is::<JsonlError>() || cause.is::<std::io::Error>() || cause.is::<ImageError>() {
            return ExitClass::Input;
        }
        if cause.is::<serde_json::Error>() {
            return ExitClass::Input;
        }
        if cause.is::<GrpoError>() || cause.is::<ExecError>() {
            return ExitClass::Invalid;
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return eval_class(e);
        }
        if let Some(e) = cause.downcast_ref::<RewardError>() {
            return match e {
                RewardError::Judge(_) => ExitClass::Judge,
                RewardError::ConfigInvalid(_) => ExitClass::Config,
            };
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Judge(_) => ExitClass::Judge,
                _ => ExitClass::Invalid,
            };
        }
        if let Some(e) = cause.downcast_ref::<EpisodeError>() {
            return match e.kind {
                EpisodeErrorKind::BackendUnavailable(_) => ExitClass::Backend,
                EpisodeErrorKind::ImageUndecodable(_) => ExitClass::Input,
                EpisodeErrorKind::ConfigInvalid(_) => ExitClass::Config,
            };
        }
    }
    ExitClass::Internal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_are_distinct_and_found_through_context() {
        let e = anyhow::Error::new(ConfigError("x".into())).context("loading");
        assert_eq!(classify(&e), ExitClass::Config);
        let e = anyhow::Error::new(JudgeError::Unavailable("down".into()));
        assert_eq!(classify(&e), ExitClass::Judge);
        let e = anyhow::Error::new(PartialRun { failed: 1 });
        assert_eq!(classify(&e), ExitClass::Backend);
        assert_eq!(classify(&anyhow::anyhow!("?")), ExitClass::Internal);
        let all = [
            ExitClass::Ok,
            ExitClass::Internal,
            ExitClass::Usage,
            ExitClass::Config,
            ExitClass::Input,
            ExitClass::Backend,
            ExitClass::Judge,
            ExitClass::Invalid,
            ExitClass::Bind,
        ];
        let mut codes: Vec<u8> = all.iter().map(|c| c.code()).collect();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
    }
}
