//! The live backend against a local chat-completion server that answers
//! with the oracle.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use intent_core::gateway::{run_demo, BackendSelection, Engine, EngineConfig, Scenario};
use intent_core::llm::{
    Backend, LiveBackend, LiveSettings, LlmError, Message, OracleBackend, Role,
};

struct Mock {
    endpoint: String,
    bodies: Arc<Mutex<Vec<Value>>>,
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<(String, Vec<String>, Value)> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    if request_line.is_empty() {
        return None;
    }
    let mut headers = Vec::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        headers.push(line);
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((request_line, headers, serde_json::from_slice(&body).unwrap()))
}

/// Serves `reply(messages)` as `choices[0].message.content`, or a 500 when
/// `reply` returns None.
fn serve(reply: impl Fn(&[Message]) -> Option<String> + Send + 'static) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let Some((line, _headers, body)) = read_request(&mut stream) else {
                continue;
            };
            assert!(line.starts_with("POST /v1/chat/completions"), "{line}");
            let messages: Vec<Message> = body["messages"]
                .as_array()
                .unwrap()
                .iter()
                .map(|m| {
                    let role = match m["role"].as_str().unwrap() {
                        "system" => Role::System,
                        "user" => Role::User,
                        _ => Role::Assistant,
                    };
                    Message::new(role, m["content"].as_str().unwrap())
                })
                .collect();
            seen.lock().unwrap().push(body);
            let (status, payload) = match reply(&messages) {
                Some(text) => (
                    "200 OK",
                    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}),
                ),
                None => ("500 Internal Server Error", json!({"error": "boom"})),
            };
            let payload = payload.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    Mock { endpoint, bodies }
}

fn settings(endpoint: &str) -> LiveSettings {
    LiveSettings {
        endpoint: endpoint.to_string(),
        model: "test-model".into(),
        api_key_env: "INTENT_TEST_KEY_UNSET".into(),
        timeout_secs: 5,
    }
}

#[test]
fn sends_openai_shaped_request() {
    let mock = serve(|msgs| Some(format!("{} messages", msgs.len())));
    let backend = LiveBackend::new(settings(&mock.endpoint));
    let reply = backend
        .complete(&[Message::new(Role::System, "sys"), Message::new(Role::User, "hi")])
        .unwrap();
    assert_eq!(reply, "2 messages");
    let body = &mock.bodies.lock().unwrap()[0];
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "hi"}));
}

#[test]
fn server_error_is_backend_unavailable() {
    let mock = serve(|_| None);
    let backend = LiveBackend::new(settings(&mock.endpoint));
    let err = backend.complete(&[Message::new(Role::User, "hi")]).unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable(_)), "{err:?}");
}

#[test]
fn unreachable_endpoint_is_backend_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = LiveBackend::new(settings(&format!("http://127.0.0.1:{port}/v1")));
    let err = backend.complete(&[Message::new(Role::User, "hi")]).unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable(_)));
}

#[test]
fn fulfill_over_http_matches_oracle() {
    let oracle = OracleBackend::default();
    let mock = serve(move |msgs| oracle.complete(msgs).ok());
    let cfg = EngineConfig {
        backend: BackendSelection::Live,
        endpoint: mock.endpoint.clone(),
        api_key_env: "INTENT_TEST_KEY_UNSET".into(),
        ..Default::default()
    };
    let mut live = Engine::fresh(cfg).unwrap();
    let report = run_demo(&mut live, Scenario::Fulfill).unwrap();
    assert!(report.passed(), "{report:?}");

    let mut direct = Engine::fresh(EngineConfig::default()).unwrap();
    let expected = run_demo(&mut direct, Scenario::Fulfill).unwrap();
    assert_eq!(report.trees, expected.trees);
}
