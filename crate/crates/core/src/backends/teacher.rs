//! Teacher-LLM transports: scripted tables for offline runs and a
//! chat-completions HTTP client for live ones.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, TeacherRequest};

pub trait TeacherBackend: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> &str;

    /// Produce the completion for one sample slot of a request.
    fn complete_sample(
        &self,
        request: &TeacherRequest,
        sample_index: u32,
    ) -> Result<String, BackendError>;

    /// Remote calls issued so far (scripted backends count lookups).
    fn calls(&self) -> usize {
        0
    }
}

/// Issue a request and return exactly `n_samples` completion strings.
pub fn complete(
    request: &TeacherRequest,
    backend: &dyn TeacherBackend,
) -> Result<Vec<String>, BackendError> {
    request.validate()?;
    (0..request.n_samples)
        .map(|i| backend.complete_sample(request, i))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "pattern")]
pub enum Matcher {
    /// Prompt must equal the pattern exactly.
    Exact(String),
    /// Prompt must contain the pattern.
    Contains(String),
}

/// One scripted rule: a prompt matcher plus the responses it yields.
/// Sample index `i` receives `responses[i % len]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub responses: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptFile {
    rules: Vec<ScriptRule>,
}

/// Deterministic offline teacher driven by declared prompt rules.
/// Exact rules are checked first (hash lookup), then contains rules in
/// declaration order.
pub struct ScriptedTeacher {
    id: String,
    exact: HashMap<String, Vec<String>>,
    contains: Vec<(String, Vec<String>)>,
    calls: AtomicUsize,
}

impl ScriptedTeacher {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedTeacher {
            id: id.into(),
            exact: HashMap::new(),
            contains: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn exact(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.exact.insert(prompt.into(), vec![response.into()]);
        self
    }

    pub fn exact_many(mut self, prompt: impl Into<String>, responses: Vec<String>) -> Self {
        self.exact.insert(prompt.into(), responses);
        self
    }

    pub fn contains(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.contains.push((needle.into(), vec![response.into()]));
        self
    }

    pub fn contains_many(mut self, needle: impl Into<String>, responses: Vec<String>) -> Self {
        self.contains.push((needle.into(), responses));
        self
    }

    pub fn with_rules(mut self, rules: Vec<ScriptRule>) -> Self {
        for rule in rules {
            match rule.matcher {
                Matcher::Exact(p) => {
                    self.exact.insert(p, rule.responses);
                }
                Matcher::Contains(n) => self.contains.push((n, rule.responses)),
            }
        }
        self
    }

    pub fn from_file(id: impl Into<String>, path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::CacheIo {
            path: path.display().to_string(),
            source,
        })?;
        let file: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(format!("script file: {e}")))?;
        Ok(ScriptedTeacher::new(id).with_rules(file.rules))
    }
}

impl TeacherBackend for ScriptedTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete_sample(
        &self,
        request: &TeacherRequest,
        sample_index: u32,
    ) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let responses = self.exact.get(&request.prompt).or_else(|| {
            self.contains
                .iter()
                .find(|(needle, _)| request.prompt.contains(needle))
                .map(|(_, r)| r)
        });
        match responses {
            Some(responses) if !responses.is_empty() => {
                Ok(responses[sample_index as usize % responses.len()].clone())
            }
            _ => Err(BackendError::NoScript {
                preview: request.prompt.chars().take(80).collect(),
            }),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Backend that must never be reached; used behind a strict-replay cache.
pub struct UnreachableTeacher;

impl TeacherBackend for UnreachableTeacher {
    fn id(&self) -> &str {
        "unreachable"
    }

    fn complete_sample(&self, _: &TeacherRequest, _: u32) -> Result<String, BackendError> {
        Err(BackendError::Transport {
            attempts: 0,
            message: "no live backend configured".into(),
        })
    }
}

/// Chat-completions HTTP client. Endpoint, model name, and auth token come
/// from configuration and the environment, never from code.
pub struct RemoteTeacher {
    id: String,
    endpoint: String,
    model: String,
    auth_token: Option<String>,
    retries: u32,
    calls: AtomicUsize,
}

impl RemoteTeacher {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        auth_env: Option<&str>,
        retries: u32,
    ) -> Self {
        let model = model.into();
        RemoteTeacher {
            id: format!("remote:{model}"),
            endpoint: endpoint.into(),
            model,
            auth_token: auth_env.and_then(|var| std::env::var(var).ok()),
            retries,
            calls: AtomicUsize::new(0),
        }
    }

    fn call_once(&self, request: &TeacherRequest) -> Result<String, String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": 1,
        });
        let mut builder = ureq::post(&self.endpoint);
        if let Some(token) = &self.auth_token {
            builder = builder.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = builder.send_json(&body).map_err(|e| e.to_string())?;
        let json: serde_json::Value = response.body_mut().read_json().map_err(|e| e.to_string())?;
        json["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| "response lacks choices[0].message.content".to_string())
    }
}

impl TeacherBackend for RemoteTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete_sample(
        &self,
        request: &TeacherRequest,
        _sample_index: u32,
    ) -> Result<String, BackendError> {
        let attempts = self.retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 * (1 << (attempt - 1))));
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.call_once(request) {
                Ok(text) => return Ok(text),
                Err(e) => last_error = e,
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last_error,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Purpose;

    #[test]
    fn scripted_echo_repeats_per_sample() {
        let teacher = ScriptedTeacher::new("t").exact("P", "R");
        let req = TeacherRequest::new("P", Purpose::Annotate).with_samples(2);
        assert_eq!(complete(&req, &teacher).unwrap(), vec!["R", "R"]);
    }

    #[test]
    fn scripted_cycles_multi_responses() {
        let teacher =
            ScriptedTeacher::new("t").exact_many("P", vec!["a".into(), "b".into()]);
        let req = TeacherRequest::new("P", Purpose::Solve).with_samples(3);
        assert_eq!(complete(&req, &teacher).unwrap(), vec!["a", "b", "a"]);
    }

    #[test]
    fn contains_rule_matches_substring() {
        let teacher = ScriptedTeacher::new("t").contains("needle", "found");
        let req = TeacherRequest::new("hay needle stack", Purpose::Diagnose);
        assert_eq!(complete(&req, &teacher).unwrap(), vec!["found"]);
    }

    #[test]
    fn unmatched_prompt_errors() {
        let teacher = ScriptedTeacher::new("t").exact("P", "R");
        let req = TeacherRequest::new("Q", Purpose::Annotate);
        assert!(matches!(
            complete(&req, &teacher),
            Err(BackendError::NoScript { .. })
        ));
    }

    #[test]
    fn script_file_round_trip() {
        let rules = ScriptFile {
            rules: vec![ScriptRule {
                matcher: Matcher::Contains("x".into()),
                responses: vec!["y".into()],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(&path, serde_json::to_string(&rules).unwrap()).unwrap();
        let teacher = ScriptedTeacher::from_file("t", &path).unwrap();
        let req = TeacherRequest::new("x marks", Purpose::Propose);
        assert_eq!(complete(&req, &teacher).unwrap(), vec!["y"]);
    }
}
