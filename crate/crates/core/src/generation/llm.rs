//! Chat-completion provider with pluggable transports.
//!
//! [`HttpTransport`] talks to an OpenAI-compatible endpoint configured through
//! `LLM_BASE_URL`, `LLM_API_KEY` and optionally `LLM_MODEL`. Offline runs use
//! [`ReplayTransport`], which answers from a file mapping request hashes to
//! recorded responses, or [`ScriptedTransport`], which answers from a queue.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::mr::{from_value_with_path, parse_mr_batch, parse_mr_value, Finding, MetamorphicRelation};

use super::sampler::onset_bounds;
use super::{GenerationError, Provider, ProviderError, ProviderRequest, TestCase};

const SYSTEM: &str = include_str!("../../prompts/system.txt");
const MR_GENERATION: &str = include_str!("../../prompts/mr_generation.txt");
const MR_REFINEMENT: &str = include_str!("../../prompts/mr_refinement.txt");
const TEST_GENERATION: &str = include_str!("../../prompts/test_generation.txt");
const REPROMPT: &str = include_str!("../../prompts/reprompt.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

pub trait Transport: Send {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ProviderError>;
}

/// Hex SHA-256 of the serialized message list; the key of replay files.
pub fn request_hash(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct HttpTransport {
    url: String,
    api_key: String,
    model: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    /// Reads the endpoint from the environment. Fails before any network
    /// activity when a variable is missing.
    pub fn from_env() -> Result<Self, ProviderError> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| ProviderError::Transport(format!("{name} is not set")))
        };
        let api_key = var("LLM_API_KEY")?;
        let base = var("LLM_BASE_URL")?;
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
        Ok(Self {
            url: format!("{}/chat/completions", base.trim_end_matches('/')),
            api_key,
            model,
            agent: ureq::Agent::new_with_defaults(),
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
            "response_format": {"type": "json_object"},
        });
        let mut response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let reply: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| ProviderError::Format("response has no choices[0].message.content".into()))
    }
}

/// Answers from a fixed queue, recording every request it sees.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    responses: VecDeque<String>,
    pub requests: Vec<Vec<ChatMessage>>,
}

impl ScriptedTransport {
    pub fn new(responses: impl IntoIterator<Item = String>) -> Self {
        Self {
            responses: responses.into_iter().collect(),
            requests: Vec::new(),
        }
    }

    /// Loads a JSON array of responses; non-string entries are serialized.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let items: Vec<Value> = read_json(path)?;
        Ok(Self::new(items.into_iter().map(value_text)))
    }
}

impl Transport for ScriptedTransport {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        self.requests.push(messages.to_vec());
        self.responses
            .pop_front()
            .ok_or_else(|| ProviderError::Transport("scripted responses exhausted".into()))
    }
}

/// Answers from a `{request hash: response}` file.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    entries: BTreeMap<String, String>,
}

impl ReplayTransport {
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let raw: BTreeMap<String, Value> = read_json(path)?;
        Ok(Self {
            entries: raw.into_iter().map(|(k, v)| (k, value_text(v))).collect(),
        })
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }
}

impl Transport for ReplayTransport {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let hash = request_hash(messages);
        self.entries
            .get(&hash)
            .cloned()
            .ok_or_else(|| ProviderError::Transport(format!("no recorded response for request {hash}")))
    }
}

/// Wraps another transport and writes every exchange to a replay file.
pub struct RecordingTransport<T> {
    inner: T,
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let reply = self.inner.complete(messages)?;
        self.entries.insert(request_hash(messages), reply.clone());
        let text = serde_json::to_string_pretty(&self.entries).expect("strings serialize");
        std::fs::write(&self.path, text)
            .map_err(|e| ProviderError::Transport(format!("cannot write {}: {e}", self.path.display())))?;
        Ok(reply)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ProviderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProviderError::Transport(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ProviderError::Format(format!("{}: {e}", path.display())))
}

fn value_text(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Replaces `{name}` placeholders; unknown braces are left alone.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    vars.iter()
        .fold(template.to_string(), |acc, (name, value)| acc.replace(&format!("{{{name}}}"), value))
}

/// Parses a reply as JSON, tolerating a surrounding markdown fence.
pub fn extract_json(reply: &str) -> Result<Value, String> {
    let mut text = reply.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        text = rest.trim().strip_suffix("```").unwrap_or(rest).trim();
    }
    serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))
}

pub struct LlmProvider {
    transport: Box<dyn Transport>,
    label: String,
}

impl LlmProvider {
    pub fn new(transport: Box<dyn Transport>, label: impl Into<String>) -> Self {
        Self {
            transport,
            label: label.into(),
        }
    }

    /// Sends one prompt, reprompting once when the reply does not parse.
    fn ask<T>(&mut self, prompt: String, parse: impl Fn(&Value) -> Result<T, String>) -> Result<T, ProviderError> {
        let mut messages = vec![ChatMessage::new("system", SYSTEM), ChatMessage::new("user", prompt)];
        let first = self.transport.complete(&messages)?;
        let error = match extract_json(&first).and_then(|v| parse(&v)) {
            Ok(parsed) => return Ok(parsed),
            Err(e) => e,
        };
        log::warn!("provider reply rejected, reprompting: {error}");
        messages.push(ChatMessage::new("assistant", first));
        messages.push(ChatMessage::new("user", render(REPROMPT, &[("error", error)])));
        let second = self.transport.complete(&messages)?;
        extract_json(&second)
            .and_then(|v| parse(&v))
            .map_err(ProviderError::Format)
    }
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("prompt context serializes")
}

impl Provider for LlmProvider {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn propose_mrs(&mut self, request: &ProviderRequest<'_>) -> Result<Vec<MetamorphicRelation>, GenerationError> {
        let order: Vec<String> = request
            .priority_order
            .iter()
            .map(|c| format!("{c:?}").to_lowercase())
            .collect();
        let prompt = render(
            MR_GENERATION,
            &[
                ("system_summary", request.extraction.system_summary.clone()),
                ("extraction", pretty(request.extraction)),
                ("history", pretty(request.history)),
                ("mr_count", request.budget.to_string()),
                ("priority_order", order.join(", ")),
            ],
        );
        let mrs = self.ask(prompt, |v| parse_mr_batch(v).map_err(|e| e.to_string()))?;
        if mrs.len() > request.budget {
            log::warn!("provider returned {} MRs for a budget of {}", mrs.len(), request.budget);
        }
        Ok(mrs)
    }

    fn revise_mr(
        &mut self,
        request: &ProviderRequest<'_>,
        mr: &MetamorphicRelation,
        findings: &[Finding],
    ) -> Result<MetamorphicRelation, GenerationError> {
        let prompt = render(
            MR_REFINEMENT,
            &[
                ("extraction", pretty(request.extraction)),
                ("mr", pretty(mr)),
                ("findings", pretty(findings)),
            ],
        );
        Ok(self.ask(prompt, |v| {
            let inner = v.get("mr").ok_or(".mr: missing")?;
            parse_mr_value(inner).map_err(|e| format!(".mr{e}"))
        })?)
    }

    fn propose_tests(
        &mut self,
        request: &ProviderRequest<'_>,
        mr: &MetamorphicRelation,
    ) -> Result<Vec<TestCase>, GenerationError> {
        let (lo, hi) = onset_bounds(&request.grid);
        let prompt = render(
            TEST_GENERATION,
            &[
                ("extraction", pretty(request.extraction)),
                ("mr", pretty(mr)),
                ("start", request.grid.start.to_string()),
                ("stop", request.grid.stop.to_string()),
                ("step", request.grid.step.to_string()),
                ("test_count", request.budget.to_string()),
                ("onset_min", lo.to_string()),
                ("onset_max", hi.to_string()),
                ("mr_id", mr.id.clone()),
            ],
        );
        Ok(self.ask(prompt, |v| {
            let items = v
                .get("tests")
                .and_then(Value::as_array)
                .ok_or(".tests: missing or not an array")?;
            items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    from_value_with_path::<TestCase>(item).map_err(|e| format!(".tests[{i}]{e}"))
                })
                .collect()
        })?)
    }
}
