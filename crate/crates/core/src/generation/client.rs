use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("request to {endpoint} failed: {message}")]
    Transport { endpoint: String, message: String },
    #[error("unexpected response: {0}")]
    Response(String),
    #[error("no scripted response for prompt")]
    Unscripted,
    #[error("{0}")]
    Other(String),
}

/// One generation call. `sample` distinguishes repeated draws for the same
/// prompt; deterministic backends use it as their seed.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a str,
    pub image_refs: &'a [String],
    pub sample: u32,
}

impl<'a> GenerationRequest<'a> {
    pub fn new(prompt: &'a str) -> Self {
        Self {
            prompt,
            image_refs: &[],
            sample: 0,
        }
    }
}

/// A text-generation backend.
pub trait GenerationClient: Send + Sync {
    fn name(&self) -> &str;
    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError>;
}

impl<T: GenerationClient + ?Sized> GenerationClient for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        (**self).invoke(request)
    }
}

#[derive(Debug, Clone)]
struct Rule {
    pattern: String,
    responses: Vec<String>,
}

/// Deterministic mock keyed by prompt substrings.
///
/// The first rule whose pattern occurs in the prompt answers; with several
/// responses the one at `sample % len` is returned.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    name: String,
    rules: Vec<Rule>,
    fallback: Option<String>,
}

impl ScriptedClient {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            rules: Vec::new(),
            fallback: None,
        }
    }

    pub fn on(self, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        self.on_samples(pattern, [response])
    }

    pub fn on_samples<I, S>(mut self, pattern: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "a rule needs at least one response");
        self.rules.push(Rule {
            pattern: pattern.into(),
            responses,
        });
        self
    }

    pub fn otherwise(mut self, response: impl Into<String>) -> Self {
        self.fallback = Some(response.into());
        self
    }
}

impl GenerationClient for ScriptedClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        match self.rules.iter().find(|r| request.prompt.contains(&r.pattern)) {
            Some(rule) => Ok(rule.responses[request.sample as usize % rule.responses.len()].clone()),
            None => self.fallback.clone().ok_or(ClientError::Unscripted),
        }
    }
}

/// Client backed by a closure; handy for tests and adapters.
pub struct FnClient<F> {
    name: String,
    f: F,
}

impl<F> FnClient<F>
where
    F: Fn(&GenerationRequest<'_>) -> Result<String, ClientError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> GenerationClient for FnClient<F>
where
    F: Fn(&GenerationRequest<'_>) -> Result<String, ClientError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        (self.f)(request)
    }
}

/// Value following `label` on the first line that starts with it.
pub fn prompt_line_value<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(label))
}

/// Mock rewriter that returns the original query unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl GenerationClient for IdentityRewriter {
    fn name(&self) -> &str {
        "identity-rewriter"
    }

    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        let q = prompt_line_value(request.prompt, "Original Search Query: ")
            .ok_or_else(|| ClientError::Other("prompt has no original query line".into()))?;
        Ok(json!({ "RewriteQuery": q }).to_string())
    }
}

/// Mock judge with a lexical rubric: relevant when the output shares a
/// token with the original query (an identical output always does).
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalJudge;

impl GenerationClient for LexicalJudge {
    fn name(&self) -> &str {
        "lexical-judge"
    }

    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        let p = request.prompt;
        let query = prompt_line_value(p, "Original Query: ")
            .ok_or_else(|| ClientError::Other("judge prompt has no query line".into()))?;
        let output = prompt_line_value(p, "Rewritten Query: ")
            .or_else(|| prompt_line_value(p, "Search Intent Analysis: "))
            .ok_or_else(|| ClientError::Other("judge prompt has no output line".into()))?;
        let q = tokenize(query);
        let relevant = !q.is_empty() && tokenize(output).iter().any(|t| q.contains(t));
        Ok(json!({ "relevant": u8::from(relevant) }).to_string())
    }
}

/// Mock card writer: a deterministic summary naming the authors and
/// titles found in the prompt's video blocks.
#[derive(Debug, Clone, Copy, Default)]
pub struct SummaryCardWriter;

impl GenerationClient for SummaryCardWriter {
    fn name(&self) -> &str {
        "summary-card-writer"
    }

    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        let mut authors: Vec<&str> = Vec::new();
        let mut titles: Vec<&str> = Vec::new();
        for line in request.prompt.lines() {
            if let Some(a) = line.strip_prefix("–– Author Name: ") {
                if !a.is_empty() && !authors.contains(&a) {
                    authors.push(a);
                }
            } else if let Some(t) = line.strip_prefix("–– Title: ") {
                if !t.is_empty() {
                    titles.push(t);
                }
            }
        }
        let desc = match (authors.is_empty(), titles.is_empty()) {
            (true, true) => "No platform content found for this query.".to_owned(),
            _ => format!(
                "Related creators: {}. Related videos: {}.",
                authors.join(", "),
                titles.join("; ")
            ),
        };
        Ok(json!({ "desc": desc }).to_string())
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub(crate) struct InFlight {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a InFlight);

impl InFlight {
    pub(crate) fn new(max: usize) -> Self {
        Self {
            permits: Mutex::new(max.max(1)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_seconds: u64,
    pub max_in_flight: usize,
    pub supports_images: bool,
    /// Environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 1.0,
            timeout_seconds: 60,
            max_in_flight: 8,
            supports_images: false,
            api_key_env: None,
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpChatClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Self {
            in_flight: InFlight::new(config.max_in_flight),
            config,
            agent,
            api_key,
        }
    }

    pub fn config(&self) -> &HttpClientConfig {
        &self.config
    }

    fn body(&self, request: &GenerationRequest<'_>) -> serde_json::Value {
        let content = if self.config.supports_images && !request.image_refs.is_empty() {
            let mut parts = vec![json!({ "type": "text", "text": request.prompt })];
            parts.extend(
                request
                    .image_refs
                    .iter()
                    .map(|u| json!({ "type": "image_url", "image_url": { "url": u } })),
            );
            json!(parts)
        } else {
            if !request.image_refs.is_empty() {
                log::warn!(
                    "{}: endpoint does not accept images, dropping {} refs",
                    self.config.model,
                    request.image_refs.len()
                );
            }
            json!(request.prompt)
        };
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "seed": request.sample,
            "messages": [{ "role": "user", "content": content }],
        })
    }
}

impl GenerationClient for HttpChatClient {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn invoke(&self, request: &GenerationRequest<'_>) -> Result<String, ClientError> {
        let _permit = self.in_flight.acquire();
        let transport = |message: String| ClientError::Transport {
            endpoint: self.config.endpoint.clone(),
            message,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.body(request))
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| transport(e.to_string()))?;
        if !status.is_success() {
            return Err(transport(format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Response(format!("{e}: {text}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or(ClientError::Response(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    #[test]
    fn scripted_is_deterministic_and_sampled() {
        let c = ScriptedClient::new("m")
            .on_samples("cats", ["a", "b"])
            .on("dogs", "d")
            .otherwise("z");
        let req = |p, s| {
            c.invoke(&GenerationRequest {
                prompt: p,
                image_refs: &[],
                sample: s,
            })
            .unwrap()
        };
        assert_eq!(req("about cats", 0), "a");
        assert_eq!(req("about cats", 1), "b");
        assert_eq!(req("about cats", 2), "a");
        assert_eq!(req("about dogs", 7), "d");
        assert_eq!(req("other", 0), "z");
        let strict = ScriptedClient::new("s");
        assert_eq!(
            strict.invoke(&GenerationRequest::new("x")),
            Err(ClientError::Unscripted)
        );
    }

    #[test]
    fn lexical_judge_rubric() {
        let t = crate::generation::PromptTemplates::default();
        let p = t.render_judge_prompt(crate::generation::Task::Rewrite, "cat videos", "cat videos");
        let out = LexicalJudge.invoke(&GenerationRequest::new(&p)).unwrap();
        assert_eq!(out, r#"{"relevant":1}"#);
        let p = t.render_judge_prompt(crate::generation::Task::Card, "cat videos", "stock prices");
        let out = LexicalJudge.invoke(&GenerationRequest::new(&p)).unwrap();
        assert_eq!(out, r#"{"relevant":0}"#);
    }

    /// Serves one canned HTTP response and returns the captured request body.
    fn one_shot_server(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let response = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            reader.get_mut().write_all(response.as_bytes()).unwrap();
            String::from_utf8(buf).unwrap()
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    #[test]
    fn http_client_round_trip_drops_images() {
        let (endpoint, handle) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"{\"desc\": \"ok\"}"}}]}"#,
        );
        let client = HttpChatClient::new(HttpClientConfig {
            endpoint,
            model: "m1".into(),
            ..Default::default()
        });
        let images = vec!["kf://1".to_owned()];
        let out = client
            .invoke(&GenerationRequest {
                prompt: "hello",
                image_refs: &images,
                sample: 3,
            })
            .unwrap();
        assert_eq!(out, r#"{"desc": "ok"}"#);
        let sent: serde_json::Value = serde_json::from_str(&handle.join().unwrap()).unwrap();
        assert_eq!(sent["model"], "m1");
        assert_eq!(sent["seed"], 3);
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn http_client_passes_images_when_supported() {
        let (endpoint, handle) = one_shot_server("200 OK", r#"{"choices":[{"message":{"content":"x"}}]}"#);
        let client = HttpChatClient::new(HttpClientConfig {
            endpoint,
            supports_images: true,
            ..Default::default()
        });
        let images = vec!["kf://1".to_owned()];
        client
            .invoke(&GenerationRequest {
                prompt: "p",
                image_refs: &images,
                sample: 0,
            })
            .unwrap();
        let sent: serde_json::Value = serde_json::from_str(&handle.join().unwrap()).unwrap();
        assert_eq!(sent["messages"][0]["content"][1]["image_url"]["url"], "kf://1");
    }

    #[test]
    fn http_errors_surface() {
        let (endpoint, handle) = one_shot_server("500 Internal Server Error", "{}");
        let client = HttpChatClient::new(HttpClientConfig {
            endpoint,
            ..Default::default()
        });
        assert!(matches!(
            client.invoke(&GenerationRequest::new("p")),
            Err(ClientError::Transport { .. })
        ));
        handle.join().unwrap();
        let unreachable = HttpChatClient::new(HttpClientConfig {
            endpoint: "http://127.0.0.1:1/x".into(),
            timeout_seconds: 2,
            ..Default::default()
        });
        assert!(unreachable.invoke(&GenerationRequest::new("p")).is_err());
    }

    #[test]
    fn in_flight_limit_is_respected() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let limit = InFlight::new(2);
        let current = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = limit.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
