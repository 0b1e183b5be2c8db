//! LLM judge behind an OpenAI-compatible chat-completions endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::judge::{fill_template, parse_judge_reply, Judge, JudgeError};

/// Answer-correctness prompt. Slots: `#TASK_DESCRIPTION_HERE`,
/// `#GROUND_TRUTH_HERE`, `#MODEL_PREDICTION_HERE`.
pub const JUDGE_PROMPT: &str = include_str!("../../assets/prompts/judge_v1.txt");
/// Reasoning-consistency rubric. Slot: `#TRACE_HERE`.
pub const CONSISTENCY_PROMPT: &str = include_str!("../../assets/prompts/consistency_v1.txt");
pub const PROMPT_VERSION: u32 = 1;

/// Environment variable holding the judge's bearer token.
pub const JUDGE_API_KEY_ENV: &str = "AUGCHAIN_JUDGE_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpJudgeConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Upper bound on requests in flight across all threads.
    pub max_in_flight: usize,
    pub vqa_prompt: String,
    pub consistency_prompt: String,
}

impl HttpJudgeConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(JUDGE_API_KEY_ENV)
                .ok()
                .filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            max_in_flight: 8,
            vqa_prompt: JUDGE_PROMPT.to_string(),
            consistency_prompt: CONSISTENCY_PROMPT.to_string(),
        }
    }
}

/// Counting semaphore.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

pub struct HttpJudge {
    config: HttpJudgeConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpJudge {
    pub fn new(config: HttpJudgeConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build(),
        );
        let gate = Gate::new(config.max_in_flight);
        Self {
            config,
            agent,
            gate,
        }
    }

    pub fn vqa_prompt(&self, question: &str, ground_truth: &str, window: &str) -> String {
        fill_template(
            &self.config.vqa_prompt,
            &[
                ("#TASK_DESCRIPTION_HERE", question),
                ("#GROUND_TRUTH_HERE", ground_truth),
                ("#MODEL_PREDICTION_HERE", window),
            ],
        )
    }

    fn ask(&self, prompt: String) -> Result<f64, JudgeError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        });
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let reply = self.gate.run(|| -> Result<String, JudgeError> {
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = req
                .send_json(&body)
                .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
            let status = resp.status().as_u16();
            let v: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| JudgeError::Unavailable(format!("status {status}: {e}")))?;
            if !(200..300).contains(&status) {
                return Err(JudgeError::Unavailable(format!("status {status}: {v}")));
            }
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| JudgeError::Unavailable("response has no message content".into()))
        })?;
        parse_judge_reply(&reply)
    }
}

impl Judge for HttpJudge {
    fn score_vqa(
        &self,
        question: &str,
        ground_truth: &str,
        window: &str,
    ) -> Result<f64, JudgeError> {
        self.ask(self.vqa_prompt(question, ground_truth, window))
    }

    fn score_consistency(&self, trace_text: &str) -> Result<f64, JudgeError> {
        self.ask(fill_template(
            &self.config.consistency_prompt,
            &[("#TRACE_HERE", trace_text)],
        ))
    }
}
