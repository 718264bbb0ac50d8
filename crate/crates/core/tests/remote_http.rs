//! RemoteProvider against a local fake OpenAI-style server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use socratic_core::provider::{ChatProvider, ChatRequest, ProviderConfig, ProviderError, RemoteProvider};

enum Reply {
    Status(u16),
    Ok(&'static str),
    Hang(Duration),
}

struct FakeServer {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

fn handle(stream: std::net::TcpStream, reply: Reply, bodies: &Mutex<Vec<Value>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
        if line == "\r\n" {
            break;
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    if let Ok(v) = serde_json::from_slice(&body) {
        bodies.lock().unwrap().push(v);
    }
    let (status, payload) = match reply {
        Reply::Status(s) => (s, "{}".to_string()),
        Reply::Ok(text) => (
            200,
            serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 2}
            })
            .to_string(),
        ),
        Reply::Hang(d) => {
            thread::sleep(d);
            return;
        }
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

fn serve(replies: Vec<Reply>) -> FakeServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for reply in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            h.fetch_add(1, Ordering::SeqCst);
            let b = b.clone();
            thread::spawn(move || handle(stream, reply, &b));
        }
    });
    FakeServer { url, hits, bodies }
}

fn provider(url: &str, key_var: &str, timeout_ms: u64, max_retries: u32) -> RemoteProvider {
    std::env::set_var(key_var, "test-key");
    RemoteProvider::new(ProviderConfig {
        base_url: url.into(),
        model: "test-model".into(),
        api_key_ref: key_var.into(),
        timeout_ms,
        max_retries,
        backoff_base_ms: 10,
    })
    .unwrap()
}

#[test]
fn rate_limits_are_retried() {
    let server = serve(vec![Reply::Status(429), Reply::Status(429), Reply::Ok("hello")]);
    let p = provider(&server.url, "SOCRATIC_KEY_RATE", 5_000, 2);
    let response = p.complete(&ChatRequest::user("hi", 0.7)).unwrap();
    assert_eq!(response.text, "hello");
    assert_eq!(response.retries, 2);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(bodies[0]["model"], "test-model");
    assert_eq!(bodies[0]["temperature"], 0.7);
    assert_eq!(bodies[0]["messages"][0]["role"], "user");
}

#[test]
fn retries_are_bounded() {
    let server = serve(vec![Reply::Status(503), Reply::Status(503), Reply::Status(503)]);
    let p = provider(&server.url, "SOCRATIC_KEY_BOUND", 5_000, 1);
    let err = p.complete(&ChatRequest::user("hi", 0.2)).unwrap_err();
    assert_eq!(err, ProviderError::Http { status: 503 });
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = serve(vec![Reply::Status(401), Reply::Ok("never")]);
    let p = provider(&server.url, "SOCRATIC_KEY_AUTH", 5_000, 2);
    let err = p.complete(&ChatRequest::user("hi", 0.2)).unwrap_err();
    assert!(matches!(err, ProviderError::AuthFailed(_)));
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeout_applies_per_attempt() {
    let server = serve(vec![Reply::Hang(Duration::from_millis(600)), Reply::Ok("late but fine")]);
    let p = provider(&server.url, "SOCRATIC_KEY_TIMEOUT", 200, 1);
    let started = Instant::now();
    let response = p.complete(&ChatRequest::user("hi", 0.2)).unwrap();
    assert_eq!(response.text, "late but fine");
    assert_eq!(response.retries, 1);
    assert!(started.elapsed() < Duration::from_millis(2_000));
}

#[test]
fn timeouts_surface_after_retries() {
    let server = serve(vec![Reply::Hang(Duration::from_millis(500)), Reply::Hang(Duration::from_millis(500))]);
    let p = provider(&server.url, "SOCRATIC_KEY_TIMEOUT2", 100, 1);
    let err = p.complete(&ChatRequest::user("hi", 0.2)).unwrap_err();
    assert_eq!(err, ProviderError::Timeout);
}
