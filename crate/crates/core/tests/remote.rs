//! Remote clients against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use ssr_core::embed::{embed_remote, EmbedError, Embedder, RemoteEmbedder};
use ssr_core::genbackend::{
    complete, BackendDescriptor, BackendRegistry, GenError, GenerationParams,
};
use ssr_core::http::RetryPolicy;

#[derive(Debug, Clone)]
struct Seen {
    body: Value,
    authorization: Option<String>,
}

type Reply = Box<dyn Fn(usize, &Value) -> (u16, String) + Send + Sync>;

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    fn start(reply: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                handle(stream, &log, &reply);
            }
        });
        Self { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

/// Records the request before answering so callers never observe a reply
/// ahead of its log entry.
fn handle(stream: TcpStream, log: &Mutex<Vec<Seen>>, reply: &Reply) -> Option<()> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut length = 0;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (name, value) = line.split_once(':').unwrap_or((line, ""));
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().unwrap_or(0),
            "authorization" => authorization = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, text) = {
        let mut log = log.lock().unwrap();
        let answer = reply(log.len(), &body);
        log.push(Seen {
            body,
            authorization,
        });
        answer
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.flush();
    Some(())
}

fn fast() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay: Duration::from_millis(5),
    }
}

fn embedder(url: &str) -> RemoteEmbedder {
    RemoteEmbedder::with_options(url, Some("emb".into()), Duration::from_secs(5), fast()).unwrap()
}

#[test]
fn embedding_is_normalized_client_side() {
    let stub = Stub::start(Box::new(|_, _| {
        (
            200,
            json!({"data": [{"index": 0, "embedding": [3, 4]}]}).to_string(),
        )
    }));
    let v = embed_remote("hello", &stub.url).unwrap();
    assert!((v.values()[0] - 0.6).abs() < 1e-12 && (v.values()[1] - 0.8).abs() < 1e-12);
    assert_eq!(stub.requests()[0].body["input"], json!(["hello"]));
}

#[test]
fn non_numeric_embedding_is_a_format_error() {
    let stub = Stub::start(Box::new(|_, _| {
        (200, json!({"data": [{"embedding": ["x", 1]}]}).to_string())
    }));
    assert!(matches!(
        embedder(&stub.url).embed_batch(&["a".into()]),
        Err(EmbedError::Format(_))
    ));
}

#[test]
fn embedding_batches_keep_order() {
    let stub = Stub::start(Box::new(|_, body| {
        let inputs = body["input"].as_array().unwrap();
        // answer in reverse with explicit indices
        let data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, t)| json!({"index": i, "embedding": [t.as_str().unwrap().len() as f64, 1.0]}))
            .collect();
        (200, json!({ "data": data }).to_string())
    }));
    let texts: Vec<String> = (0..70).map(|i| "x".repeat(i + 1)).collect();
    let vs = embedder(&stub.url).embed_batch(&texts).unwrap();
    assert_eq!(vs.len(), 70);
    assert_eq!(stub.requests().len(), 2);
    for (i, v) in vs.iter().enumerate() {
        let len = (i + 1) as f64;
        assert!((v.values()[0] - len / (len * len + 1.0).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn embedding_count_mismatch_is_rejected() {
    let stub = Stub::start(Box::new(|_, _| {
        (200, json!({"data": [{"embedding": [1, 0]}]}).to_string())
    }));
    let err = embedder(&stub.url)
        .embed_batch(&["a".into(), "b".into()])
        .unwrap_err();
    assert!(matches!(err, EmbedError::Format(_)), "{err}");
}

#[test]
fn embedding_endpoint_down_fails_after_retries() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = embedder(&format!("http://127.0.0.1:{port}/v1"))
        .embed_batch(&["a".into()])
        .unwrap_err();
    assert!(err.to_string().contains("3 attempts"), "{err}");
}

fn remote(url: &str, name: &str) -> BackendDescriptor {
    let mut d = BackendDescriptor::remote(name, url);
    d.retry_base_ms = 5;
    d.api_key_env = Some("SSR_TEST_REMOTE_TOKEN".into());
    d.model = Some("served-model".into());
    d
}

#[test]
fn server_errors_are_retried_then_surfaced() {
    let stub = Stub::start(Box::new(|_, _| (500, "{}".into())));
    let model = BackendRegistry::new()
        .register_backend(&remote(&stub.url, "m"))
        .unwrap();
    let err = complete(&model, "Input:\nq\nOutput:\n", &GenerationParams::greedy()).unwrap_err();
    assert!(matches!(err, GenError::Http(_)), "{err}");
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn transient_failure_then_success() {
    let stub = Stub::start(Box::new(|n, _| {
        if n == 0 {
            (503, "{}".into())
        } else {
            (
                200,
                json!({"choices": [{"message": {"content": "fine\n\nInput:\nmore"}}]}).to_string(),
            )
        }
    }));
    std::env::set_var("SSR_TEST_REMOTE_TOKEN", "sekrit");
    let model = BackendRegistry::new()
        .register_backend(&remote(&stub.url, "m"))
        .unwrap();
    let params = GenerationParams::sampling(0.7, 11);
    assert_eq!(
        complete(&model, "Input:\nq\nOutput:\n", &params).unwrap(),
        "fine"
    );
    let reqs = stub.requests();
    assert_eq!(reqs.len(), 2);
    let body = &reqs[1].body;
    assert_eq!(body["model"], "served-model");
    assert_eq!(body["messages"][0]["content"], "Input:\nq\nOutput:\n");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["seed"], 11);
    assert_eq!(reqs[1].authorization.as_deref(), Some("Bearer sekrit"));
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(Box::new(|_, _| (400, "{\"error\":\"bad\"}".into())));
    let model = BackendRegistry::new()
        .register_backend(&remote(&stub.url, "m"))
        .unwrap();
    assert!(complete(&model, "p", &GenerationParams::greedy()).is_err());
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn malformed_chat_payload_is_a_format_error() {
    let stub = Stub::start(Box::new(|_, _| (200, json!({"choices": []}).to_string())));
    let model = BackendRegistry::new()
        .register_backend(&remote(&stub.url, "m"))
        .unwrap();
    assert!(matches!(
        complete(&model, "p", &GenerationParams::greedy()),
        Err(GenError::Format(_))
    ));
}
