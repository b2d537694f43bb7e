#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ie_forge_core::dataset::{Category, Difficulty, Instance, SourceType, Variant};
use ie_forge_core::eval::{EmbedError, Embedder};
use ie_forge_core::table::Table;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const CELL_CHARS: &[char] = &[
    'a', 'b', 'c', 'x', 'y', 'z', 'A', 'Q', '0', '1', '7', '9', ' ', ' ', ',', '.', ':', '/', '-', '|', '\'', '(', ')',
    'é', 'ß', '日', '%', '$',
];

pub fn random_cell(rng: &mut ChaCha8Rng, min_len: usize) -> String {
    loop {
        let len = rng.random_range(min_len..=12);
        let s: String = (0..len).map(|_| *CELL_CHARS.choose(rng).unwrap()).collect();
        if min_len == 0 || !s.trim().is_empty() {
            return s;
        }
    }
}

/// Random valid table: 1-5 columns, 0-5 rows, some `N/A` and empty cells.
pub fn random_table(rng: &mut ChaCha8Rng) -> Table {
    let cols = rng.random_range(1..=5);
    let rows = rng.random_range(0..=5);
    let header: Vec<String> = (0..cols).map(|_| random_cell(rng, 1)).collect();
    let body: Vec<Vec<String>> = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| match rng.random_range(0..10) {
                    0 => "N/A".to_string(),
                    1 => String::new(),
                    _ => random_cell(rng, 1),
                })
                .collect()
        })
        .collect();
    Table::new(header, body).expect("generated header cells are non-empty")
}

pub fn random_words(rng: &mut ChaCha8Rng, n: std::ops::RangeInclusive<usize>) -> String {
    const WORDS: &[&str] = &[
        "the",
        "salary",
        "report",
        "café",
        "lists",
        "three",
        "items",
        "with",
        "prices",
        "in",
        "2021",
        "Ünïcode",
        "\"quoted\"",
        "tab\tsep",
        "back\\slash",
        "emoji 🎉",
        "and",
        "more",
    ];
    let k = rng.random_range(n);
    (0..k).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_instance(rng: &mut ChaCha8Rng, idx: usize) -> Instance {
    let variant = if rng.random_bool(0.5) { Variant::Direct } else { Variant::Cot };
    Instance {
        id: format!("inst-{idx}"),
        instruction: random_words(rng, 1..=12),
        text: random_words(rng, 0..=40),
        table: if rng.random_bool(0.9) { Some(random_table(rng)) } else { None },
        domain: ["finance", "sports", "health", "travel"].choose(rng).unwrap().to_string(),
        category: if rng.random_bool(0.5) { Category::Open } else { Category::Fixed },
        source_type: if rng.random_bool(0.5) { SourceType::Retrieve } else { SourceType::Generate },
        difficulty: [None, Some(Difficulty::Easy), Some(Difficulty::Medium), Some(Difficulty::Hard)]
            .choose(rng)
            .copied()
            .unwrap(),
        variant,
        explanation: match variant {
            Variant::Cot => Some(random_words(rng, 1..=15)).filter(|s| !s.trim().is_empty()),
            Variant::Direct => None,
        },
    }
}

/// One-hot vectors keyed by the exact string, so cosine is 1 for equal
/// strings and 0 otherwise.
#[derive(Debug, Default)]
pub struct EqualityEmbedder {
    vocab: Mutex<Vec<String>>,
}

pub const EQUALITY_DIM: usize = 4096;

impl Embedder for EqualityEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut vocab = self.vocab.lock().unwrap();
        texts
            .iter()
            .map(|t| {
                let idx = match vocab.iter().position(|v| v == t) {
                    Some(i) => i,
                    None => {
                        vocab.push(t.clone());
                        vocab.len() - 1
                    }
                };
                if idx >= EQUALITY_DIM {
                    return Err(EmbedError::Unavailable("vocabulary full".into()));
                }
                let mut v = vec![0.0; EQUALITY_DIM];
                v[idx] = 1.0;
                Ok(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

pub type Handler = dyn Fn(&RecordedRequest) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering every request with `Connection: close`.
pub struct FakeServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl FakeServer {
    pub fn start(handler: impl Fn(&RecordedRequest) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &log, handler.as_ref()));
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<RecordedRequest>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    let mut content_length = 0;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
            if k == "content-length" {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).unwrap();
    let req = RecordedRequest { method, path, headers, body: String::from_utf8_lossy(&body).into_owned() };
    let (status, resp_body) = handler(&req);
    log.lock().unwrap().push(req);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp_body}",
        resp_body.len()
    );
    let _ = stream.flush();
}
