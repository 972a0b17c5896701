//! Tiny in-process HTTP server speaking the VLM wire protocol, for tests
//! and the CLI's `--mock` mode. One request per connection, JSON in and
//! out, deterministic responses.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::AttributeQueries;

/// Canned responses keyed by query text. Queries without an entry fall back
/// to a uniform distribution over the request's candidates.
#[derive(Debug, Clone)]
pub struct MockScript {
    pub attribute_probabilities: BTreeMap<String, BTreeMap<String, f64>>,
    pub caption_text: String,
}

impl MockScript {
    /// A plausible sunny-suburban script covering the default probes.
    pub fn plausible() -> Self {
        let q = AttributeQueries::default();
        let mut attribute_probabilities = BTreeMap::new();
        let mut set = |aq: &super::AttributeQuery, probs: &[f64]| {
            let map: BTreeMap<String, f64> = aq
                .candidates
                .iter()
                .cloned()
                .zip(probs.iter().copied())
                .collect();
            attribute_probabilities.insert(aq.query.clone(), map);
        };
        set(&q.road_width, &[0.25, 0.75]);
        set(&q.highway, &[0.2, 0.8]);
        set(&q.tunnel, &[0.05, 0.95]);
        set(&q.weather, &[0.6, 0.3, 0.1]);
        set(&q.pedestrian_risk, &[0.15, 0.85]);
        MockScript {
            attribute_probabilities,
            caption_text: "Traffic is light and the road surface is dry. \
                           No pedestrians are visible near the roadway."
                .to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Answer from the script.
    Scripted(MockScript),
    /// Caption replies echo the prompt (prefixed "ECHO: "); attribute
    /// replies are uniform over the candidates.
    Echo,
}

/// The running server; shuts down when dropped.
pub struct MockVlmServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockVlmServer {
    pub fn start(mode: MockMode) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = shutdown.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let _ = handle_connection(stream, &mode);
                }
            }
        });
        Ok(MockVlmServer { addr, shutdown, handle: Some(handle) })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for MockVlmServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, mode: &MockMode) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream);

    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

    let (status, reply) = match path.as_str() {
        "/v1/attributes" => (200, attributes_reply(&request, mode)),
        "/v1/caption" => (200, caption_reply(&request, mode)),
        _ => (404, json!({"error": "unknown path"})),
    };

    let body = serde_json::to_vec(&reply)?;
    let mut stream = reader.into_inner();
    write!(
        stream,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        if status == 200 { "OK" } else { "Not Found" },
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}

fn uniform(candidates: &[Value]) -> Value {
    let n = candidates.len().max(1) as f64;
    let map: serde_json::Map<String, Value> = candidates
        .iter()
        .filter_map(|c| c.as_str())
        .map(|c| (c.to_string(), json!(1.0 / n)))
        .collect();
    Value::Object(map)
}

fn attributes_reply(request: &Value, mode: &MockMode) -> Value {
    let query = request["query"].as_str().unwrap_or("");
    let candidates = request["candidates"].as_array().cloned().unwrap_or_default();
    let probabilities = match mode {
        MockMode::Echo => uniform(&candidates),
        MockMode::Scripted(script) => match script.attribute_probabilities.get(query) {
            Some(map) => json!(map),
            None => uniform(&candidates),
        },
    };
    json!({ "probabilities": probabilities })
}

fn caption_reply(request: &Value, mode: &MockMode) -> Value {
    let prompt = request["prompt"].as_str().unwrap_or("");
    let text = match mode {
        MockMode::Echo => format!("ECHO: {prompt}"),
        MockMode::Scripted(script) => script.caption_text.clone(),
    };
    json!({ "text": text })
}
