//! Step-level reward providers: pass-through for traces that already carry
//! scores, a scripted table for tests, and a remote scorer endpoint.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use crate::corpus::ResponseTrace;

use super::BackendError;

pub trait RewardBackend: Send + Sync {
    fn id(&self) -> &str;

    fn score_steps(&self, trace: &ResponseTrace) -> Result<Vec<f64>, BackendError>;
}

/// Score a trace's steps, enforcing the length and range contract.
pub fn fetch_step_rewards(
    trace: &ResponseTrace,
    backend: &dyn RewardBackend,
) -> Result<Vec<f64>, BackendError> {
    if trace.steps.is_empty() {
        return Err(BackendError::InvalidRequest("trace has no steps".into()));
    }
    let scores = backend.score_steps(trace)?;
    if scores.len() != trace.steps.len() {
        return Err(BackendError::RewardLengthMismatch {
            expected: trace.steps.len(),
            got: scores.len(),
        });
    }
    for &s in &scores {
        if !(0.0..=1.0).contains(&s) || !s.is_finite() {
            return Err(BackendError::RewardOutOfRange(s));
        }
    }
    Ok(scores)
}

/// Returns the rewards already embedded in the trace.
pub struct PassThroughRewards;

impl RewardBackend for PassThroughRewards {
    fn id(&self) -> &str {
        "pass-through"
    }

    fn score_steps(&self, trace: &ResponseTrace) -> Result<Vec<f64>, BackendError> {
        trace
            .step_rewards
            .clone()
            .ok_or(BackendError::MissingRewards)
    }
}

/// Fixed step-text → score table.
pub struct ScriptedRewards {
    id: String,
    table: HashMap<String, f64>,
    default: Option<f64>,
}

impl ScriptedRewards {
    pub fn new(table: HashMap<String, f64>) -> Self {
        ScriptedRewards {
            id: "scripted-rewards".into(),
            table,
            default: None,
        }
    }

    pub fn with_default(mut self, score: f64) -> Self {
        self.default = Some(score);
        self
    }
}

impl RewardBackend for ScriptedRewards {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_steps(&self, trace: &ResponseTrace) -> Result<Vec<f64>, BackendError> {
        trace
            .steps
            .iter()
            .map(|step| {
                self.table
                    .get(step)
                    .copied()
                    .or(self.default)
                    .ok_or_else(|| {
                        BackendError::InvalidRequest(format!(
                            "no scripted reward for step: {:?}",
                            step.chars().take(40).collect::<String>()
                        ))
                    })
            })
            .collect()
    }
}

/// Remote process-reward endpoint: one JSON POST per trace carrying the
/// question id and steps, answered with a score per step.
pub struct RemoteRewards {
    id: String,
    endpoint: String,
    auth_token: Option<String>,
    retries: u32,
    calls: AtomicUsize,
}

impl RemoteRewards {
    pub fn new(endpoint: impl Into<String>, auth_env: Option<&str>, retries: u32) -> Self {
        RemoteRewards {
            id: "remote-rewards".into(),
            endpoint: endpoint.into(),
            auth_token: auth_env.and_then(|var| std::env::var(var).ok()),
            retries,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn call_once(&self, trace: &ResponseTrace) -> Result<Vec<f64>, String> {
        let body = serde_json::json!({
            "question_id": trace.question_id,
            "model_id": trace.model_id,
            "steps": trace.steps,
        });
        let mut builder = ureq::post(&self.endpoint);
        if let Some(token) = &self.auth_token {
            builder = builder.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = builder.send_json(&body).map_err(|e| e.to_string())?;
        let json: serde_json::Value = response.body_mut().read_json().map_err(|e| e.to_string())?;
        json["scores"]
            .as_array()
            .map(|scores| scores.iter().filter_map(|s| s.as_f64()).collect())
            .ok_or_else(|| "response lacks scores array".to_string())
    }
}

impl RewardBackend for RemoteRewards {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_steps(&self, trace: &ResponseTrace) -> Result<Vec<f64>, BackendError> {
        let attempts = self.retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 * (1 << (attempt - 1))));
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.call_once(trace) {
                Ok(scores) => return Ok(scores),
                Err(e) => last_error = e,
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last_error,
        })
    }
}
