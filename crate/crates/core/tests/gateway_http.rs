use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use dynavis_core::gateway::{
    fingerprint, Conversation, GatewayError, GatewayMode, HttpTransport, LlmGateway, ReplayStore,
};
use serde_json::{json, Value};

/// Minimal HTTP/1.1 server answering chat-completion requests. The reply
/// echoes the last user message so each conversation gets distinct content.
fn spawn_stub(status: u16) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let request: Value = serde_json::from_slice(&body).unwrap();
            let last = request["messages"].as_array().unwrap().last().unwrap()["content"]
                .as_str()
                .unwrap()
                .to_string();
            let payload = if status == 200 {
                json!({"choices": [{"message": {"role": "assistant", "content": format!("echo: {last}\n```json\n{{}}\n```")}}]})
            } else {
                json!({"error": {"message": "quota exceeded"}})
            }
            .to_string();
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn conversation(text: &str) -> Conversation {
    let mut c = Conversation::new("stub-model", "You are a test.");
    c.push_user(text);
    c
}

#[test]
fn live_record_then_replay_is_byte_identical() {
    let (endpoint, hits) = spawn_stub(200);
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(ReplayStore::open_dir(dir.path()).unwrap());
    let recorder = LlmGateway::new(
        GatewayMode::Record,
        Arc::new(HttpTransport::new(endpoint, Some("k".into()))),
        store,
    );
    let conv = conversation("make a chart  \r\n");
    let live = recorder.complete(&conv).unwrap();
    assert!(live.starts_with("echo: make a chart"));
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    // Fresh process view: reload the store from disk, replay with no transport.
    let reloaded = Arc::new(ReplayStore::open_dir(dir.path()).unwrap());
    assert!(reloaded.contains(&fingerprint(&conv)));
    let replayer = LlmGateway::replay(reloaded);
    let replayed = replayer.complete(&conversation("make a chart")).unwrap();
    assert_eq!(replayed.as_bytes(), live.as_bytes());
    assert_eq!(hits.load(Ordering::SeqCst), 1, "replay must not reach the server");
}

#[test]
fn provider_error_surfaces_payload() {
    let (endpoint, _) = spawn_stub(429);
    let gw = LlmGateway::new(
        GatewayMode::Live,
        Arc::new(HttpTransport::new(endpoint, None)),
        Arc::new(ReplayStore::in_memory()),
    );
    match gw.complete(&conversation("hi")) {
        Err(GatewayError::Transport(e)) => {
            let text = e.to_string();
            assert!(text.contains("429") && text.contains("quota exceeded"), "{text}");
        }
        other => panic!("expected transport error, got {other:?}"),
    }
}
