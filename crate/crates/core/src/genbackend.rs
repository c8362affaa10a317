//! Text generation behind one interface: remote chat-completion servers, a
//! scripted deterministic mock, and the toy learner.
//!
//! Remote wire format (POST to the configured endpoint URL):
//!
//! ```text
//! {"model": name, "messages": [{"role": "user", "content": prompt}],
//!  "temperature": t, "top_p": p, "max_tokens": n, "stop": [...], "seed": s}
//! ```
//!
//! The reply text is `choices[0].message.content`. A bearer token is read from
//! the environment variable named by the descriptor (`SSR_API_KEY` by default).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::http::{token_from_env, HttpError, JsonClient, RetryPolicy};
use crate::seeds::{derive_seed_n, fnv1a64};

pub const DEFAULT_TOKEN_ENV: &str = "SSR_API_KEY";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("unexpected completion response: {0}")]
    Format(String),
    #[error("mock script exhausted for prompt starting {0:?}")]
    ScriptExhausted(String),
    #[error("backend {0:?} is already registered")]
    DuplicateName(String),
    #[error("invalid backend descriptor {name:?}: {reason}")]
    Descriptor { name: String, reason: String },
    #[error("no backend named {0:?}")]
    Unknown(String),
}

/// Decoding settings. `temperature == 0` means greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self::greedy()
    }
}

impl GenerationParams {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens: 512,
            stop_sequences: vec!["\n\nInput:".into()],
            seed: 0,
        }
    }

    pub fn sampling(temperature: f64, seed: u64) -> Self {
        Self {
            temperature,
            seed,
            ..Self::greedy()
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub trait Generator: Send + Sync {
    /// Raw continuation of `prompt`; stop sequences are applied by [`complete`].
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenError>;

    /// Upper bound on concurrent requests. Backends whose output depends on
    /// call order return 1.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Generates and truncates at the first stop sequence.
pub fn complete(
    model: &dyn Generator,
    prompt: &str,
    params: &GenerationParams,
) -> Result<String, GenError> {
    if prompt.trim().is_empty() {
        return Err(GenError::EmptyPrompt);
    }
    let raw = model.generate(prompt, params)?;
    Ok(truncate_at_stop(&raw, &params.stop_sequences))
}

/// Completes every prompt, running up to `max_in_flight` requests at once.
/// Results come back in prompt order.
pub fn complete_many(
    model: &dyn Generator,
    prompts: &[String],
    params: &GenerationParams,
) -> Vec<Result<String, GenError>> {
    let width = model.max_in_flight().max(1);
    if width == 1 || prompts.len() < 2 {
        return prompts.iter().map(|p| complete(model, p, params)).collect();
    }
    let mut out = Vec::with_capacity(prompts.len());
    for batch in prompts.chunks(width) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|p| s.spawn(move || complete(model, p, params)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("generation thread panicked"))
                .collect()
        });
        out.extend(results);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Mock,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Base,
    Latest,
    #[default]
    Other,
}

/// A named generation backend playing some role in the run.
#[derive(Clone)]
pub struct ModelHandle {
    pub name: String,
    pub kind: BackendKind,
    pub role: Role,
    pub defaults: GenerationParams,
    backend: Arc<dyn Generator>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("role", &self.role)
            .finish()
    }
}

impl ModelHandle {
    pub fn new(
        name: impl Into<String>,
        kind: BackendKind,
        role: Role,
        backend: Arc<dyn Generator>,
    ) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
            defaults: GenerationParams::greedy(),
            backend,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}

impl Generator for ModelHandle {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenError> {
        self.backend.generate(prompt, params)
    }

    fn max_in_flight(&self) -> usize {
        self.backend.max_in_flight()
    }
}

// ---------------------------------------------------------------------------
// Mock

/// Prompt-independent behaviours of the mock once no scripted rule applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Procedure {
    /// Returns the text of the last `Input:` block of the prompt.
    Echo,
    Constant {
        text: String,
    },
    /// Reads the demonstrations of an in-context prompt, picks one, swaps
    /// `edits` words of its input for other words of the demonstration
    /// inputs and answers with that demonstration's output. With probability
    /// `output_noise` the output is corrupted by dropping every other word.
    /// A second, runaway instance is appended after a blank line.
    IclPerturb {
        seed: u64,
        #[serde(default = "one")]
        edits: usize,
        #[serde(default)]
        output_noise: f64,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Substring the prompt must contain; empty matches everything.
    #[serde(default)]
    pub contains: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: Option<Procedure>,
}

impl MockScript {
    pub fn queue<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            rules: vec![MockRule {
                contains: String::new(),
                responses: responses.into_iter().map(Into::into).collect(),
            }],
            fallback: None,
        }
    }

    pub fn procedure(p: Procedure) -> Self {
        Self {
            rules: Vec::new(),
            fallback: Some(p),
        }
    }
}

struct MockState {
    queues: Vec<VecDeque<String>>,
    calls: u64,
}

/// Deterministic scripted backend. Calls are serialized so queue order is
/// the call order.
pub struct MockBackend {
    rules: Vec<String>,
    fallback: Option<Procedure>,
    state: Mutex<MockState>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let (rules, queues) = script
            .rules
            .into_iter()
            .map(|r| (r.contains, r.responses.into_iter().collect()))
            .unzip();
        Self {
            rules,
            fallback: script.fallback,
            state: Mutex::new(MockState { queues, calls: 0 }),
        }
    }

    pub fn calls(&self) -> u64 {
        self.state.lock().expect("mock state").calls
    }
}

impl Generator for MockBackend {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenError> {
        let mut st = self.state.lock().expect("mock state");
        let call = st.calls;
        st.calls += 1;
        let mut matched = false;
        for (i, pat) in self.rules.iter().enumerate() {
            if prompt.contains(pat.as_str()) {
                matched = true;
                if let Some(r) = st.queues[i].pop_front() {
                    return Ok(r);
                }
            }
        }
        match &self.fallback {
            Some(p) => Ok(run_procedure(p, prompt, params, call)),
            None => {
                let head: String = prompt.chars().take(40).collect();
                if matched || self.rules.is_empty() {
                    Err(GenError::ScriptExhausted(head))
                } else {
                    Err(GenError::ScriptExhausted(format!(
                        "{head} (no rule matched)"
                    )))
                }
            }
        }
    }
}

/// `(input, output)` pairs of the demonstration blocks in an ICL prompt.
/// Blocks without an `Output:` section yield an empty output.
pub fn parse_demo_blocks(prompt: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for block in prompt.split("Input:\n").skip(1) {
        let block = block.trim_end_matches('\n');
        if block.trim().is_empty() {
            continue;
        }
        match block.split_once("\nOutput:\n") {
            Some((i, o)) => out.push((i.trim().to_string(), o.trim().to_string())),
            None => out.push((block.trim().to_string(), String::new())),
        }
    }
    out
}

/// Input text of the last `Input:` frame, or the whole prompt when unframed.
pub fn last_input(prompt: &str) -> String {
    match prompt.rfind("Input:\n") {
        Some(pos) => {
            let rest = &prompt[pos + "Input:\n".len()..];
            let end = rest.find("\nOutput:").unwrap_or(rest.len());
            rest[..end].trim().to_string()
        }
        None => prompt.trim().to_string(),
    }
}

fn run_procedure(p: &Procedure, prompt: &str, params: &GenerationParams, call: u64) -> String {
    match p {
        Procedure::Echo => last_input(prompt),
        Procedure::Constant { text } => text.clone(),
        Procedure::IclPerturb {
            seed,
            edits,
            output_noise,
        } => {
            let salt = seed ^ params.seed.rotate_left(17) ^ fnv1a64(prompt.as_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_n(salt, "mock", call));
            let demos = parse_demo_blocks(prompt);
            if demos.is_empty() {
                return String::new();
            }
            let vocab: Vec<&str> = demos
                .iter()
                .flat_map(|(i, _)| i.split_whitespace())
                .collect();
            let sample = |rng: &mut ChaCha8Rng| {
                let (input, output) = demos.choose(rng).expect("non-empty demos");
                let mut words: Vec<&str> = input.split_whitespace().collect();
                for _ in 0..*edits {
                    let pos = rng.gen_range(0..words.len());
                    let options: Vec<&&str> = vocab.iter().filter(|w| **w != words[pos]).collect();
                    if let Some(w) = options.choose(rng) {
                        words[pos] = w;
                    }
                }
                let mut out = if output.is_empty() {
                    words
                        .iter()
                        .rev()
                        .take(3)
                        .copied()
                        .collect::<Vec<_>>()
                        .join(" ")
                } else {
                    output.clone()
                };
                if rng.gen::<f64>() < *output_noise {
                    out = out
                        .split_whitespace()
                        .step_by(2)
                        .collect::<Vec<_>>()
                        .join(" ");
                }
                (words.join(" "), out)
            };
            let (x1, y1) = sample(&mut rng);
            let (x2, y2) = sample(&mut rng);
            format!("{x1}\nOutput:\n{y1}\n\nInput:\n{x2}\nOutput:\n{y2}")
        }
    }
}

// ---------------------------------------------------------------------------
// Remote

/// Client for a chat-completion endpoint.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    client: JsonClient,
    max_in_flight: usize,
}

impl RemoteBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
        retry: RetryPolicy,
        token: Option<String>,
        max_in_flight: usize,
    ) -> Result<Self, GenError> {
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            client: JsonClient::new(timeout, retry, token)?,
            max_in_flight: max_in_flight.max(1),
        })
    }

    pub fn request_body(&self, prompt: &str, params: &GenerationParams) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
            "stop": params.stop_sequences,
            "seed": params.seed,
        })
    }
}

pub fn parse_chat_response(resp: &Value) -> Result<String, GenError> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| GenError::Format("missing choices[0].message.content".into()))
}

impl Generator for RemoteBackend {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenError> {
        let resp = self
            .client
            .post(&self.endpoint, &self.request_body(prompt, params))?;
        parse_chat_response(&resp)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

// ---------------------------------------------------------------------------
// Registry

/// Describes one backend in a backends file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub role: Role,
    pub endpoint: Option<String>,
    /// Model name sent to the server; defaults to `name`.
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_attempts")]
    pub retry_attempts: u32,
    #[serde(default = "default_backoff")]
    pub retry_base_ms: u64,
    pub mock: Option<MockScript>,
    pub defaults: Option<GenerationParams>,
}

fn default_timeout() -> u64 {
    60
}
fn default_in_flight() -> usize {
    4
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl BackendDescriptor {
    pub fn mock(name: impl Into<String>, script: MockScript) -> Self {
        Self {
            name: name.into(),
            kind: BackendKind::Mock,
            role: Role::Other,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            retry_attempts: default_attempts(),
            retry_base_ms: default_backoff(),
            mock: Some(script),
            defaults: None,
        }
    }

    pub fn remote(name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            mock: None,
            ..Self::mock(name, MockScript::default())
        }
    }
}

/// File layout for a list of descriptors: `[[backend]]` tables.
#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BackendsFile {
    #[serde(default)]
    pub backend: Vec<BackendDescriptor>,
}

#[derive(Debug, Default, Clone)]
pub struct BackendRegistry {
    handles: BTreeMap<String, ModelHandle>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_backend(&mut self, desc: &BackendDescriptor) -> Result<ModelHandle, GenError> {
        let invalid = |reason: &str| GenError::Descriptor {
            name: desc.name.clone(),
            reason: reason.into(),
        };
        if desc.name.trim().is_empty() {
            return Err(invalid("name is empty"));
        }
        if self.handles.contains_key(&desc.name) {
            return Err(GenError::DuplicateName(desc.name.clone()));
        }
        let backend: Arc<dyn Generator> = match desc.kind {
            BackendKind::Remote => {
                let url = desc
                    .endpoint
                    .as_deref()
                    .filter(|u| !u.trim().is_empty())
                    .ok_or_else(|| invalid("remote backend needs an endpoint URL"))?;
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return Err(invalid("endpoint must be an http(s) URL"));
                }
                let token =
                    token_from_env(desc.api_key_env.as_deref().unwrap_or(DEFAULT_TOKEN_ENV));
                Arc::new(RemoteBackend::new(
                    url,
                    desc.model.clone().unwrap_or_else(|| desc.name.clone()),
                    Duration::from_secs(desc.timeout_secs),
                    RetryPolicy {
                        attempts: desc.retry_attempts,
                        base_delay: Duration::from_millis(desc.retry_base_ms),
                    },
                    token,
                    desc.max_in_flight,
                )?)
            }
            BackendKind::Mock => Arc::new(MockBackend::new(
                desc.mock
                    .clone()
                    .ok_or_else(|| invalid("mock backend needs a script"))?,
            )),
            BackendKind::Toy => Arc::new(crate::toylab::ToyBackend::new(
                crate::toylab::ToyLearner::new(Default::default(), 10_000),
            )),
        };
        let mut handle = ModelHandle::new(desc.name.clone(), desc.kind, desc.role, backend);
        if let Some(d) = &desc.defaults {
            handle.defaults = d.clone();
        }
        self.handles.insert(desc.name.clone(), handle.clone());
        Ok(handle)
    }

    /// Adds an already-built handle (e.g. a trained toy learner).
    pub fn insert(&mut self, handle: ModelHandle) -> Result<(), GenError> {
        if self.handles.contains_key(&handle.name) {
            return Err(GenError::DuplicateName(handle.name));
        }
        self.handles.insert(handle.name.clone(), handle);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ModelHandle, GenError> {
        self.handles
            .get(name)
            .ok_or_else(|| GenError::Unknown(name.to_string()))
    }

    pub fn with_role(&self, role: Role) -> Option<&ModelHandle> {
        self.handles.values().find(|h| h.role == role)
    }

    pub fn names(&self) -> Vec<&str> {
        self.handles.keys().map(String::as_str).collect()
    }

    pub fn from_file(file: &BackendsFile) -> Result<Self, GenError> {
        let mut reg = Self::new();
        for d in &file.backend {
            reg.register_backend(d)?;
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_queue_in_order() {
        let m = MockBackend::new(MockScript::queue(["A", "B"]));
        let p = GenerationParams::greedy();
        assert_eq!(complete(&m, "x", &p).unwrap(), "A");
        assert_eq!(complete(&m, "x", &p).unwrap(), "B");
        assert!(matches!(
            complete(&m, "x", &p),
            Err(GenError::ScriptExhausted(_))
        ));
    }

    #[test]
    fn pattern_rules_route_prompts() {
        let m = MockBackend::new(MockScript {
            rules: vec![
                MockRule {
                    contains: "cat".into(),
                    responses: vec!["meow".into()],
                },
                MockRule {
                    contains: "dog".into(),
                    responses: vec!["woof".into()],
                },
            ],
            fallback: Some(Procedure::Constant { text: "?".into() }),
        });
        let p = GenerationParams::greedy();
        assert_eq!(complete(&m, "a dog", &p).unwrap(), "woof");
        assert_eq!(complete(&m, "a cat", &p).unwrap(), "meow");
        assert_eq!(complete(&m, "a cat", &p).unwrap(), "?");
    }

    #[test]
    fn stop_sequence_truncation() {
        let m = MockBackend::new(MockScript::queue(["x\n\ny"]));
        let mut p = GenerationParams::greedy();
        p.stop_sequences = vec!["\n\n".into()];
        assert_eq!(complete(&m, "go", &p).unwrap(), "x");
        assert_eq!(
            truncate_at_stop("ab--cd==", &["==".into(), "--".into()]),
            "ab"
        );
        assert_eq!(truncate_at_stop("abc", &[]), "abc");
    }

    #[test]
    fn empty_prompt_rejected() {
        let m = MockBackend::new(MockScript::queue(["A"]));
        assert!(matches!(
            complete(&m, "  ", &GenerationParams::greedy()),
            Err(GenError::EmptyPrompt)
        ));
    }

    #[test]
    fn echo_returns_framed_input() {
        let m = MockBackend::new(MockScript::procedure(Procedure::Echo));
        let p = GenerationParams::greedy();
        assert_eq!(
            complete(&m, "Input:\nhello there\nOutput:\n", &p).unwrap(),
            "hello there"
        );
        assert_eq!(complete(&m, "plain", &p).unwrap(), "plain");
    }

    #[test]
    fn icl_perturb_is_deterministic_and_parseable() {
        let prompt = "Input:\nthe red fox jumps high\nOutput:\nanimal\n\nInput:\nthe blue car drives fast\nOutput:\nvehicle\n\nInput:\n";
        let script = MockScript::procedure(Procedure::IclPerturb {
            seed: 3,
            edits: 1,
            output_noise: 0.0,
        });
        let p = GenerationParams::sampling(1.0, 11);
        let a = MockBackend::new(script.clone());
        let b = MockBackend::new(script);
        let ra: Vec<_> = (0..5).map(|_| complete(&a, prompt, &p).unwrap()).collect();
        let rb: Vec<_> = (0..5).map(|_| complete(&b, prompt, &p).unwrap()).collect();
        assert_eq!(ra, rb);
        for r in &ra {
            assert!(!r.contains("\n\nInput:"));
            let (_, out) = r.split_once("\nOutput:\n").unwrap();
            assert!(out == "animal" || out == "vehicle");
        }
        assert!(ra.iter().any(|r| r != &ra[0]));
    }

    #[test]
    fn demo_block_parsing() {
        let d = parse_demo_blocks("Input:\na\nOutput:\nb\n\nInput:\nc\n\nInput:\n");
        assert_eq!(d, [("a".into(), "b".into()), ("c".into(), String::new())]);
    }

    #[test]
    fn registry_names_and_validation() {
        let mut reg = BackendRegistry::new();
        reg.register_backend(&BackendDescriptor::mock("a", MockScript::queue(["x"])))
            .unwrap();
        reg.register_backend(&BackendDescriptor::mock("b", MockScript::queue(["y"])))
            .unwrap();
        assert_eq!(reg.names(), ["a", "b"]);
        assert!(matches!(
            reg.register_backend(&BackendDescriptor::mock("a", MockScript::queue(["z"]))),
            Err(GenError::DuplicateName(_))
        ));
        let mut missing = BackendDescriptor::remote("r", "");
        missing.endpoint = None;
        assert!(matches!(
            reg.register_backend(&missing),
            Err(GenError::Descriptor { .. })
        ));
        assert!(reg.get("nope").is_err());
    }

    #[test]
    fn backends_file_parses() {
        let text = r#"
[[backend]]
name = "base"
kind = "mock"
role = "base"
[backend.mock]
fallback = { mode = "icl_perturb", seed = 1 }

[[backend]]
name = "server"
kind = "remote"
endpoint = "http://127.0.0.1:9/v1/chat/completions"
"#;
        let f: BackendsFile = toml::from_str(text).unwrap();
        let reg = BackendRegistry::from_file(&f).unwrap();
        assert_eq!(reg.with_role(Role::Base).unwrap().name, "base");
        assert_eq!(reg.get("server").unwrap().kind, BackendKind::Remote);
    }

    #[test]
    fn remote_body_shape() {
        let r = RemoteBackend::new(
            "http://x",
            "m",
            Duration::from_secs(1),
            RetryPolicy::default(),
            None,
            2,
        )
        .unwrap();
        let mut p = GenerationParams::sampling(0.7, 5);
        p.top_p = 0.9;
        let body = r.request_body("hi", &p);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["top_p"], 0.9);
        assert_eq!(body["max_tokens"], 512);
        assert_eq!(body["stop"][0], "\n\nInput:");
        assert_eq!(body["seed"], 5);
        assert_eq!(
            parse_chat_response(&json!({"choices": [{"message": {"content": "ok"}}]})).unwrap(),
            "ok"
        );
        assert!(parse_chat_response(&json!({"choices": []})).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn completions_never_contain_stops(
                raw in "[ab\n]{0,40}",
                stops in proptest::collection::vec("[ab\n]{1,3}", 0..3),
            ) {
                let m = MockBackend::new(MockScript::queue([raw]));
                let mut p = GenerationParams::greedy();
                p.stop_sequences = stops.clone();
                let out = complete(&m, "prompt", &p).unwrap();
                for s in &stops {
                    prop_assert!(!out.contains(s.as_str()), "{out:?} contains {s:?}");
                }
            }
        }
    }
}
