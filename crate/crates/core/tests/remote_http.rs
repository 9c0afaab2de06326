//! The remote clients against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use kragrec::embedding::{EmbedError, Embedder, EmbedderConfig, EmbedderMode, RemoteEmbedder};
use kragrec::llm::{build_prompt, interpret, ChatClient, CompletionRequest, Domain, LanguageModel, LlmConfig, LlmError, Provenance};
use serde_json::{json, Value};

struct Seen {
    auth: Option<String>,
    body: Value,
}

/// Serves until the test exits. `reply(n, body)` gets the 0-based request
/// number and returns (status, body, delay).
fn serve<F>(reply: F) -> (String, Arc<Mutex<Vec<Seen>>>)
where
    F: Fn(usize, &Value) -> (u16, String, Duration) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let count = Arc::new(AtomicUsize::new(0));
    let reply = Arc::new(reply);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (log, count, reply) = (log.clone(), count.clone(), reply.clone());
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = None;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    let lower = l.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = Some(l["authorization:".len()..].trim().to_owned());
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let body: Value = serde_json::from_slice(&buf).unwrap_or(Value::Null);
                let n = count.fetch_add(1, Ordering::SeqCst);
                let (status, text, delay) = reply(n, &body);
                log.lock().unwrap().push(Seen { auth, body });
                thread::sleep(delay);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    (url, seen)
}

fn fake_vectors(body: &Value, dim: usize) -> String {
    let texts = body["texts"].as_array().unwrap();
    let vectors: Vec<Vec<f32>> = texts
        .iter()
        .map(|t| {
            let s = t.as_str().unwrap();
            (0..dim).map(|j| (s.len() + j) as f32 + s.bytes().map(u32::from).sum::<u32>() as f32 * 0.001).collect()
        })
        .collect();
    json!({"vectors": vectors, "dim": dim}).to_string()
}

fn embed_config(url: &str, key_env: &str) -> EmbedderConfig {
    EmbedderConfig {
        mode: EmbedderMode::Remote,
        endpoint: Some(url.to_owned()),
        api_key_env: key_env.to_owned(),
        dim: 4,
        batch_size: 2,
        max_retries: 2,
        ..EmbedderConfig::default()
    }
}

#[test]
fn embedder_batches_and_sends_token() {
    let (url, seen) = serve(|_, b| (200, fake_vectors(b, 4), Duration::ZERO));
    std::env::set_var("KRAGREC_TEST_EMBED_TOKEN", "s3cret");
    let e = RemoteEmbedder::from_config(&embed_config(&url, "KRAGREC_TEST_EMBED_TOKEN")).unwrap();
    let texts = ["alpha", "beta", "gamma"];
    let batch = e.embed_batch(&texts).unwrap();
    let singles: Vec<_> = texts.iter().map(|t| e.embed_text(t).unwrap()).collect();
    assert_eq!(batch, singles);
    for v in &batch {
        let n: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    let seen = seen.lock().unwrap();
    // 3 texts with batch size 2, then 3 singles
    assert_eq!(seen.len(), 5);
    assert!(seen.iter().all(|s| s.auth.as_deref() == Some("Bearer s3cret")));
}

#[test]
fn embedder_retries_server_errors_then_succeeds() {
    let (url, seen) = serve(|n, b| if n < 2 { (503, "busy".into(), Duration::ZERO) } else { (200, fake_vectors(b, 4), Duration::ZERO) });
    let e = RemoteEmbedder::from_config(&embed_config(&url, "KRAGREC_TEST_UNSET")).unwrap().with_backoff(Duration::from_millis(1));
    assert_eq!(e.embed_text("x").unwrap().len(), 4);
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(seen.lock().unwrap()[0].auth.is_none());
}

#[test]
fn embedder_typed_failures() {
    let (url, _) = serve(|_, _| (400, "bad".into(), Duration::ZERO));
    let e = RemoteEmbedder::from_config(&embed_config(&url, "KRAGREC_TEST_UNSET")).unwrap();
    assert!(matches!(e.embed_text("x"), Err(EmbedError::Http { status: 400, .. })));
    let (url, _) = serve(|_, b| (200, fake_vectors(b, 6), Duration::ZERO));
    let e = RemoteEmbedder::from_config(&embed_config(&url, "KRAGREC_TEST_UNSET")).unwrap();
    assert!(matches!(e.embed_text("x"), Err(EmbedError::Config(_))));
}

fn chat_reply(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn llm_config(url: &str) -> LlmConfig {
    LlmConfig { endpoint: Some(url.to_owned()), model: "test-model".into(), max_retries: 2, timeout_secs: 1, ..LlmConfig::default() }
}

fn prompt() -> kragrec::llm::RecommendationPrompt {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    build_prompt(&s(&["Heat"]), &s(&["Ronin", "Collateral", "Thief"]), 3, Domain::Movies, None).unwrap()
}

#[test]
fn chat_success_with_audit_log() {
    let (url, seen) = serve(|_, _| (200, chat_reply("1. B\n2. C\n3. A"), Duration::ZERO));
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let client = ChatClient::from_config(&LlmConfig { audit_log: Some(audit.clone()), ..llm_config(&url) }).unwrap();
    let p = prompt();
    let sp = dir.path().join("u1.ksp");
    let c = client.complete(&CompletionRequest { tag: "u1", prompt: &p, soft_prompt: Some(&sp) }).unwrap();
    let d = interpret(&c, &p.candidates).unwrap();
    assert_eq!((d.ranking.clone(), d.provenance), (vec![1, 2, 0], Provenance::ParsedRanking));
    let body = &seen.lock().unwrap()[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert!(body["messages"][0]["content"].as_str().unwrap().starts_with(&p.text));
    let lines: Vec<Value> = std::fs::read_to_string(&audit).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["tag"], "u1");
    assert_eq!(lines[0]["response"], "1. B\n2. C\n3. A");
    assert_eq!(lines[0]["soft_prompt_ignored"], true);
}

#[test]
fn chat_letter_logprobs_rank_options() {
    let reply = json!({"choices": [{"message": {"content": "C"}, "logprobs": {"content": [{"token": "C", "top_logprobs": [
        {"token": "C", "logprob": -0.1}, {"token": "A", "logprob": -1.5}, {"token": "B", "logprob": -3.0}, {"token": "Z", "logprob": -0.01}
    ]}]}}]})
    .to_string();
    let (url, seen) = serve(move |_, _| (200, reply.clone(), Duration::ZERO));
    let client = ChatClient::from_config(&LlmConfig { logprobs: true, ..llm_config(&url) }).unwrap();
    let p = prompt();
    let c = client.complete(&CompletionRequest { tag: "u", prompt: &p, soft_prompt: None }).unwrap();
    let d = interpret(&c, &p.candidates).unwrap();
    assert_eq!((d.ranking.clone(), d.provenance), (vec![2, 0, 1], Provenance::LetterLogprob));
    assert_eq!(seen.lock().unwrap()[0].body["top_logprobs"], 20);
}

#[test]
fn chat_error_typing() {
    let p = prompt();
    let call = |status: u16, delay: Duration| {
        let (url, seen) = serve(move |_, _| (status, chat_reply("A"), delay));
        let client = ChatClient::from_config(&llm_config(&url)).unwrap().with_backoff(Duration::from_millis(1));
        let r = client.complete(&CompletionRequest { tag: "u", prompt: &p, soft_prompt: None });
        let n = seen.lock().unwrap().len();
        (r, n)
    };
    let (r, n) = call(401, Duration::ZERO);
    assert!(matches!(r, Err(LlmError::Auth { status: 401 })));
    assert_eq!(n, 1, "auth failures are not retried");
    let (r, n) = call(429, Duration::ZERO);
    assert!(matches!(r, Err(LlmError::RateLimit { attempts: 3 })));
    assert_eq!(n, 3);
    let (r, _) = call(502, Duration::ZERO);
    assert!(matches!(r, Err(LlmError::Server { status: 502, attempts: 3, .. })));
    let (r, _) = call(200, Duration::from_millis(1600));
    assert!(matches!(r, Err(LlmError::Timeout { attempts: 3 })), "{r:?}");
}

#[test]
fn in_flight_requests_are_bounded() {
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (l, pk) = (live.clone(), peak.clone());
    let (url, _) = serve(move |_, _| {
        let now = l.fetch_add(1, Ordering::SeqCst) + 1;
        pk.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(30));
        l.fetch_sub(1, Ordering::SeqCst);
        (200, chat_reply("A"), Duration::ZERO)
    });
    let client = Arc::new(ChatClient::from_config(&LlmConfig { max_in_flight: 2, ..llm_config(&url) }).unwrap());
    let p = prompt();
    thread::scope(|s| {
        for _ in 0..8 {
            let c = client.clone();
            let p = &p;
            s.spawn(move || c.complete(&CompletionRequest { tag: "u", prompt: p, soft_prompt: None }).unwrap());
        }
    });
    assert!(peak.load(Ordering::SeqCst) <= 2);
}
