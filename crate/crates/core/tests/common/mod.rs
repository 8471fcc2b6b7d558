//! Minimal HTTP/1.1 server speaking just enough of the chat-completions and
//! embeddings APIs for tests. Replies are deterministic functions of the
//! request body.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use tagrec::backends::{Embedder, HashEmbedder, RemoteSpec, RetryPolicy};

pub const MOCK_DIM: usize = 32;

#[derive(Clone)]
pub struct MockServer {
    pub url: String,
    calls: Arc<AtomicUsize>,
    script: Arc<Mutex<VecDeque<u16>>>,
    last_auth: Arc<Mutex<Option<String>>>,
}

impl MockServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let server = MockServer {
            url,
            calls: Arc::new(AtomicUsize::new(0)),
            script: Arc::new(Mutex::new(VecDeque::new())),
            last_auth: Arc::new(Mutex::new(None)),
        };
        let handle = server.clone();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let handle = handle.clone();
                thread::spawn(move || handle.serve(stream));
            }
        });
        server
    }

    /// Requests received so far, including scripted failures.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// The next requests get these statuses instead of a real reply.
    pub fn fail_next(&self, statuses: &[u16]) {
        self.script.lock().unwrap().extend(statuses);
    }

    pub fn last_auth(&self) -> Option<String> {
        self.last_auth.lock().unwrap().clone()
    }

    /// Spec pointing at this server with near-zero backoff.
    pub fn spec(&self, name: &str, model: &str) -> RemoteSpec {
        RemoteSpec {
            name: name.into(),
            base_url: self.url.clone(),
            model_id: model.into(),
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 1,
                max_delay_ms: 5,
            },
            timeout_secs: 10,
            ..RemoteSpec::default()
        }
    }

    fn serve(&self, stream: TcpStream) {
        let mut reader = BufReader::new(stream.try_clone().expect("clone"));
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).is_err() {
            return;
        }
        let path = request_line
            .split_whitespace()
            .nth(1)
            .unwrap_or("")
            .to_string();
        let mut content_length = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                break;
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                let name = name.trim().to_ascii_lowercase();
                if name == "content-length" {
                    content_length = value.trim().parse().unwrap_or(0);
                } else if name == "authorization" {
                    *self.last_auth.lock().unwrap() = Some(value.trim().to_string());
                }
            }
        }
        let mut body = vec![0; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        self.calls.fetch_add(1, Ordering::SeqCst);

        let scripted = self.script.lock().unwrap().pop_front();
        let (status, reply) = match scripted {
            Some(status) => (status, json!({"error": "scripted"})),
            None => {
                let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                if path.ends_with("/chat/completions") {
                    (200, chat_reply(&request))
                } else if path.ends_with("/embeddings") {
                    (200, embeddings_reply(&request))
                } else {
                    (404, json!({"error": "no such route"}))
                }
            }
        };
        let text = reply.to_string();
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
            text.len()
        );
        let _ = stream.flush();
    }
}

fn fnv(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Ranking prompts list passages as `[i] text` lines; they are ordered by a
/// hash of their text. Anything else is echoed back with a prefix.
fn chat_reply(request: &Value) -> Value {
    let prompt = request
        .pointer("/messages")
        .and_then(Value::as_array)
        .and_then(|m| m.last())
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .unwrap_or("");
    let mut passages: Vec<(usize, u64)> = prompt
        .lines()
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let (id, text) = rest.split_once("] ")?;
            Some((id.parse().ok()?, fnv(text)))
        })
        .collect();
    let content = if passages.is_empty() {
        format!("generated: {}", prompt.lines().last().unwrap_or(""))
    } else {
        passages.sort_by_key(|&(id, h)| (h, id));
        passages
            .iter()
            .map(|(id, _)| format!("[{id}]"))
            .collect::<Vec<_>>()
            .join(" > ")
    };
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

fn embeddings_reply(request: &Value) -> Value {
    let embedder = HashEmbedder::new(MOCK_DIM).unwrap();
    let inputs: Vec<&str> = request
        .get("input")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let vectors = embedder.embed(&inputs).expect("non-empty inputs");
    let data: Vec<Value> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| json!({"index": i, "embedding": v.values()}))
        .collect();
    json!({"data": data})
}
