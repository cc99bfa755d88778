use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::mock::MockGenerator;
use super::GenError;

/// A frozen text generator. Implementations must be safe to share across
/// worker threads.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, GenError>;

    fn generate_batch(&self, prompts: &[String]) -> Vec<Result<String, GenError>> {
        prompts.iter().map(|p| self.generate(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationBackend {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub backoff_ms: u64,
}

impl Default for GenerationBackend {
    fn default() -> Self {
        GenerationBackend {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            max_tokens: 512,
            temperature: 0.0,
            seed: 0,
            token_env: "TKRE_API_TOKEN".into(),
            max_concurrency: 4,
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl GenerationBackend {
    pub fn mock(seed: u64) -> Self {
        GenerationBackend {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.max_tokens == 0 {
            return Err(GenError::Config("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenError::Config(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_concurrency == 0 {
            return Err(GenError::Config("max_concurrency must be positive".into()));
        }
        if self.kind == BackendKind::Http {
            match self.endpoint.as_deref() {
                None | Some("") => {
                    return Err(GenError::Config("http backend requires an endpoint".into()))
                }
                Some(e) if !(e.starts_with("http://") || e.starts_with("https://")) => {
                    return Err(GenError::Config(format!("endpoint is not an http(s) URL: {e}")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Generator>, GenError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockGenerator::new(self.seed)),
            BackendKind::Http => Box::new(HttpGenerator::new(self)?),
        })
    }
}

/// Minimal chat-completion client.
pub struct HttpGenerator {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    max_tokens: usize,
    temperature: f64,
    token: Option<String>,
    max_concurrency: usize,
    max_retries: usize,
    backoff: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

enum Attempt {
    Retry(String),
    Fatal(GenError),
}

impl HttpGenerator {
    pub fn new(cfg: &GenerationBackend) -> Result<Self, GenError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| GenError::Config("http backend requires an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .build()
            .into();
        Ok(HttpGenerator {
            agent,
            endpoint,
            model: cfg.model_name.clone(),
            max_tokens: cfg.max_tokens,
            temperature: cfg.temperature,
            token: std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty()),
            max_concurrency: cfg.max_concurrency.max(1),
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, Attempt> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                return Err(Attempt::Retry(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(Attempt::Fatal(GenError::Transport {
                    attempts: 1,
                    message: format!("HTTP {code}"),
                }))
            }
            Err(e) => return Err(Attempt::Retry(e.to_string())),
        };
        let parsed: ChatResponse = resp
            .into_body()
            .read_json()
            .map_err(|e| Attempt::Fatal(GenError::Protocol(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(GenError::Protocol("response has no choices".into())))
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GenError> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1).min(6)) as u32);
            }
            match self.attempt(prompt) {
                Ok(s) => return Ok(s),
                Err(Attempt::Fatal(GenError::Transport { message, .. })) => {
                    return Err(GenError::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(m)) => last = m,
            }
        }
        Err(GenError::Transport {
            attempts: self.max_retries + 1,
            message: last,
        })
    }

    fn generate_batch(&self, prompts: &[String]) -> Vec<Result<String, GenError>> {
        run_bounded(prompts, self.max_concurrency, |p| self.generate(p))
    }
}

/// Apply `f` to every prompt with at most `limit` calls in flight.
/// Results keep input order.
pub fn run_bounded<F>(prompts: &[String], limit: usize, f: F) -> Vec<Result<String, GenError>>
where
    F: Fn(&str) -> Result<String, GenError> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, GenError>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    let workers = limit.max(1).min(prompts.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let r = f(&prompts[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Replays canned responses in order, cycling when exhausted.
pub struct ScriptedGenerator {
    responses: Vec<Result<String, String>>,
    cursor: AtomicUsize,
}

impl ScriptedGenerator {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedGenerator {
            responses: responses.into_iter().map(|s| Ok(s.into())).collect(),
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn with_failures(responses: Vec<Result<String, String>>) -> Self {
        ScriptedGenerator {
            responses,
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, _prompt: &str) -> Result<String, GenError> {
        if self.responses.is_empty() {
            return Ok(String::new());
        }
        let i = self.cursor.fetch_add(1, Ordering::SeqCst) % self.responses.len();
        self.responses[i].clone().map_err(|message| GenError::Transport {
            attempts: 1,
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    /// Serves `statuses` in order, one connection each; returns the bound URL.
    fn stub(statuses: Vec<(u16, String)>, seen: Arc<Mutex<Vec<String>>>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in statuses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut headers = String::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.lock()
                    .unwrap()
                    .push(format!("{headers}\n{}", String::from_utf8_lossy(&buf)));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn http_cfg(endpoint: String) -> GenerationBackend {
        GenerationBackend {
            kind: BackendKind::Http,
            endpoint: Some(endpoint),
            model_name: "frozen".into(),
            token_env: "TKRE_TEST_TOKEN_UNSET".into(),
            backoff_ms: 1,
            timeout_secs: 5,
            ..Default::default()
        }
    }

    #[test]
    fn http_round_trip_and_request_shape() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let url = stub(
            vec![(200, r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#.into())],
            seen.clone(),
        );
        let g = http_cfg(url).build().unwrap();
        assert_eq!(g.generate("prompt text").unwrap(), "hello");
        let req = seen.lock().unwrap()[0].clone();
        let body: serde_json::Value = serde_json::from_str(req.split("\n\n").last().unwrap()).unwrap();
        assert_eq!(body["model"], "frozen");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "prompt text");
        assert_eq!(body["max_tokens"], 512);
    }

    #[test]
    fn http_retries_server_errors() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let url = stub(
            vec![
                (503, "{}".into()),
                (200, r#"{"choices":[{"message":{"content":"ok"}}]}"#.into()),
            ],
            seen.clone(),
        );
        let g = http_cfg(url).build().unwrap();
        assert_eq!(g.generate("p").unwrap(), "ok");
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn http_gives_up_after_max_retries() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let url = stub(vec![(500, "{}".into()); 3], seen.clone());
        let mut cfg = http_cfg(url);
        cfg.max_retries = 2;
        match cfg.build().unwrap().generate("p") {
            Err(GenError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_response_is_protocol_error() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let url = stub(vec![(200, r#"{"choices":[]}"#.into())], seen);
        assert!(matches!(
            http_cfg(url).build().unwrap().generate("p"),
            Err(GenError::Protocol(_))
        ));
    }

    #[test]
    fn http_requires_endpoint() {
        let cfg = GenerationBackend {
            kind: BackendKind::Http,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(GenError::Config(_))));
        let mut bad = GenerationBackend::mock(0);
        bad.temperature = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bounded_concurrency_keeps_order_and_limit() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let prompts: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        let out = run_bounded(&prompts, 3, |p| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            live.fetch_sub(1, Ordering::SeqCst);
            Ok(format!("r{p}"))
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap(), &format!("r{i}"));
        }
    }

    #[test]
    fn scripted_generator_cycles() {
        let g = ScriptedGenerator::new(["a", "b"]);
        let got: Vec<String> = (0..3).map(|_| g.generate("").unwrap()).collect();
        assert_eq!(got, ["a", "b", "a"]);
        assert_eq!(g.calls(), 3);
    }
}
