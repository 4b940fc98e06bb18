//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use physcode::eval::{EmbeddingProvider, HttpEmbedder, HttpEmbedderConfig};
use physcode::gateway::{
    complete, CallLog, ChatBackend, ChatMessage, ChatRequest, GatewayError, HttpBackend, HttpBackendConfig,
    RetryPolicy,
};
use physcode::mediacheck::Frame;

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves `replies` in order, one per connection, and records requests.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                authorization: auth,
                body: serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null),
            });
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (format!("http://{addr}"), seen)
}

fn completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    })
    .to_string()
}

fn backend(endpoint: &str, key_env: Option<&str>, log: &CallLog) -> HttpBackend {
    HttpBackend::new(
        HttpBackendConfig {
            name: "remote".into(),
            endpoint: format!("{endpoint}/v1"),
            path: "/chat/completions".into(),
            model: "m-1".into(),
            api_key_env: key_env.map(String::from),
            retry: RetryPolicy {
                attempt_cap: 3,
                base_delay_ms: 5,
                factor: 2.0,
                jitter: 0.0,
            },
            request_timeout_secs: 5,
        },
        log.clone(),
    )
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "m-1".into(),
        messages: vec![ChatMessage::user("write the scene")],
        temperature: 0.1,
        max_tokens: 64,
        meta: Default::default(),
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, completion("print('hi')")),
    ]);
    std::env::set_var("PHYSCODE_TEST_KEY_A", "sk-test-a");
    let log = CallLog::new();
    let b = backend(&url, Some("PHYSCODE_TEST_KEY_A"), &log);
    let resp = complete(&b, &request()).unwrap();
    assert_eq!(resp.content, "print('hi')");
    assert_eq!(resp.usage.unwrap().prompt_tokens, 12);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test-a"));
    assert_eq!(seen[2].body["model"], "m-1");
    assert_eq!(seen[2].body["messages"][0]["content"], "write the scene");
    let attempts: Vec<u32> = log.entries().iter().map(|e| e.attempt).collect();
    assert_eq!(attempts, [1, 2, 3]);
}

#[test]
fn auth_failures_are_not_retried() {
    let (url, seen) = serve(vec![(401, r#"{"error": "bad key"}"#.into())]);
    let log = CallLog::new();
    let b = backend(&url, None, &log);
    let err = b.send(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Auth { status: 401, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert!(seen.lock().unwrap()[0].authorization.is_none());
}

#[test]
fn gives_up_after_the_attempt_cap() {
    let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let b = backend(&url, None, &CallLog::new());
    let err = b.send(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::RetriesExhausted { attempts: 3, .. }), "{err}");
}

#[test]
fn missing_content_is_an_error() {
    let (url, _) = serve(vec![(200, r#"{"choices": [{"message": {"content": null}}]}"#.into())]);
    let b = backend(&url, None, &CallLog::new());
    assert!(matches!(b.send(&request()), Err(GatewayError::MissingContent { .. })));
}

#[test]
fn unset_key_variable_fails_before_any_request() {
    let b = backend("http://127.0.0.1:9", Some("PHYSCODE_TEST_KEY_UNSET"), &CallLog::new());
    assert!(matches!(b.send(&request()), Err(GatewayError::Config(_))));
}

#[test]
fn embedder_posts_texts_and_frames() {
    let (url, seen) = serve(vec![
        (200, r#"{"embeddings": [[1.0, 0.0, 0.0]]}"#.into()),
        (200, r#"{"embeddings": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]}"#.into()),
        (200, r#"{"embeddings": [[1.0, 0.0]]}"#.into()),
    ]);
    let e = HttpEmbedder::new(HttpEmbedderConfig {
        endpoint: format!("{url}/embed"),
        model: "clip".into(),
        dimension: 3,
        api_key_env: None,
        timeout_secs: 5,
    });
    assert_eq!(e.embed_texts(&["a ball".into()]).unwrap(), [vec![1.0, 0.0, 0.0]]);
    let frames = vec![Frame::filled(2, 1, [255, 0, 0]), Frame::filled(2, 1, [0, 0, 0])];
    assert_eq!(e.embed_images(&frames).unwrap().len(), 2);
    // Wrong dimension is rejected.
    assert!(e.embed_texts(&["x".into()]).is_err());
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body["texts"][0], "a ball");
    assert_eq!(seen[1].body["images"][0]["width"], 2);
    assert_eq!(seen[1].body["images"][0]["rgb24_b64"], "/wAA/wAA");
}
