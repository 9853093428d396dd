//! Sources of candidate code: a scripted mock, a recorded-fixture replayer
//! and an HTTP chat-completions client.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{NativeId, Task};
use crate::error::{Error, Result};

pub const SYSTEM_PROMPT: &str =
    "You are an expert in heuristic design for wireless communication optimization. Reply with one short description line followed by a single fenced Python code block.";

#[derive(Debug, Clone, Copy)]
pub struct PromptRequest<'a> {
    pub task: Task,
    pub generation: usize,
    /// Position of the request within its generation.
    pub slot: usize,
    pub system: &'a str,
    pub prompt: &'a str,
}

pub trait Provider {
    /// Returns the raw reply text. An error means the provider has given up
    /// (after its own retries) and ends the run.
    fn complete(&mut self, req: &PromptRequest<'_>) -> Result<String>;
}

/// Provider settings as they appear in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    Mock {
        #[serde(default)]
        schedule: Vec<NativeId>,
    },
    Fixture {
        path: PathBuf,
    },
    Http(HttpProviderConfig),
}

impl ProviderConfig {
    pub fn build(&self, task: Task) -> Result<Box<dyn Provider>> {
        Ok(match self {
            ProviderConfig::Mock { schedule } if schedule.is_empty() => Box::new(MockProvider::for_task(task)),
            ProviderConfig::Mock { schedule } => Box::new(MockProvider::new(schedule.clone())?),
            ProviderConfig::Fixture { path } => Box::new(FixtureProvider::load(path)?),
            ProviderConfig::Http(cfg) => Box::new(HttpProvider::new(cfg.clone())?),
        })
    }
}

/// Answers every request of generation `g` with the built-in heuristic
/// `schedule[min(g, len - 1)]`.
#[derive(Debug, Clone)]
pub struct MockProvider {
    schedule: Vec<NativeId>,
    calls: usize,
}

impl MockProvider {
    pub fn new(schedule: Vec<NativeId>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Config("mock schedule is empty".into()));
        }
        Ok(MockProvider { schedule, calls: 0 })
    }

    /// Baseline first, improved heuristic from generation 1 on.
    pub fn for_task(task: Task) -> Self {
        let schedule = match task {
            Task::FullPortSelector => vec![NativeId::RandomSelection, NativeId::Autoport],
            Task::CrossoverOp => vec![NativeId::CrossoverBasic, NativeId::CrossoverFrequency],
            Task::MutationOp => vec![NativeId::MutationBasic, NativeId::MutationSwapNoise],
        };
        MockProvider { schedule, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn reply(id: NativeId) -> String {
        format!("{}\n```native\n{}\n```\n", id.describe(), id.as_str())
    }
}

impl Provider for MockProvider {
    fn complete(&mut self, req: &PromptRequest<'_>) -> Result<String> {
        self.calls += 1;
        let id = self.schedule[req.generation.min(self.schedule.len() - 1)];
        Ok(Self::reply(id))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureFile {
    responses: Vec<String>,
}

/// Replays recorded replies in order; running out is a hard failure.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    responses: Vec<String>,
    next: usize,
}

impl FixtureProvider {
    pub fn new(responses: Vec<String>) -> Self {
        FixtureProvider { responses, next: 0 }
    }

    /// Reads `{"responses": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: FixtureFile = serde_json::from_slice(&bytes)?;
        Ok(Self::new(file.responses))
    }

    pub fn save(responses: &[String], path: &Path) -> Result<()> {
        let file = FixtureFile {
            responses: responses.to_vec(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(path, e))
    }
}

impl Provider for FixtureProvider {
    fn complete(&mut self, _req: &PromptRequest<'_>) -> Result<String> {
        let out = self
            .responses
            .get(self.next)
            .cloned()
            .ok_or_else(|| Error::Provider(format!("fixture exhausted after {} replies", self.next)))?;
        self.next += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_attempts")]
    pub attempts: usize,
    /// Delay before the first retry; doubles on each further retry.
    #[serde(default = "default_backoff")]
    pub backoff_s: f64,
    #[serde(default)]
    pub temperature: Option<f64>,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_attempts() -> usize {
    3
}

fn default_backoff() -> f64 {
    1.0
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpProviderConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_s: default_timeout(),
            attempts: default_attempts(),
            backoff_s: default_backoff(),
            temperature: None,
        }
    }
}

pub struct HttpProvider {
    cfg: HttpProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(cfg: HttpProviderConfig) -> Result<Self> {
        if cfg.attempts == 0 {
            return Err(Error::Config("provider needs at least one attempt".into()));
        }
        if !(cfg.timeout_s > 0.0) || !(cfg.backoff_s >= 0.0) {
            return Err(Error::Config("provider timeout and backoff must be positive".into()));
        }
        let api_key = match &cfg.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?)
            }
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .build()
            .new_agent();
        Ok(HttpProvider { cfg, api_key, agent })
    }

    fn request_body(&self, req: &PromptRequest<'_>) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.prompt},
            ],
        });
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String> {
        let mut call = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(body).map_err(|e| Error::Provider(e.to_string()))?;
        let reply: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Provider(format!("unreadable reply: {e}")))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::Provider("reply has no choices[0].message.content".into()))
    }
}

impl Provider for HttpProvider {
    fn complete(&mut self, req: &PromptRequest<'_>) -> Result<String> {
        let body = self.request_body(req);
        let mut delay = self.cfg.backoff_s;
        let mut last = None;
        for attempt in 0..self.cfg.attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_secs_f64(delay));
                delay *= 2.0;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
        }
        let e = last.expect("at least one attempt");
        Err(Error::Provider(format!(
            "giving up after {} attempts: {e}",
            self.cfg.attempts
        )))
    }
}
