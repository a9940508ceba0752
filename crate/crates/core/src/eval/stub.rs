//! Loopback HTTP stub of the generation endpoint, for offline runs and tests.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::endpoint::{GenerationRequest, GenerationResponse};
use super::task::EvalTask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubReply {
    Text(String),
    Status(u16),
}

pub type StubHandler = dyn Fn(&GenerationRequest, usize) -> StubReply + Send + Sync;

/// Canned behaviours keyed to a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    /// Reply with the canonical solution of the task whose prompt matches.
    Canonical,
    /// Reply with prompt ⊕ canonical solution.
    Echo,
    /// Always reply with empty text.
    Empty,
}

impl std::str::FromStr for StubMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "echo" => Ok(Self::Echo),
            "empty" => Ok(Self::Empty),
            other => Err(format!("unknown stub mode {other:?} (canonical, echo, empty)")),
        }
    }
}

pub fn benchmark_handler(tasks: &[EvalTask], mode: StubMode) -> Arc<StubHandler> {
    let solutions: HashMap<String, String> = tasks
        .iter()
        .map(|t| (t.prompt.clone(), t.canonical_solution.clone()))
        .collect();
    Arc::new(move |req: &GenerationRequest, _| {
        let solution = solutions.get(&req.prompt).cloned().unwrap_or_default();
        match mode {
            StubMode::Canonical => StubReply::Text(solution),
            StubMode::Echo => StubReply::Text(format!("{}{}", req.prompt, solution)),
            StubMode::Empty => StubReply::Text(String::new()),
        }
    })
}

/// A running stub. Dropping it stops the listener.
pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: Arc<StubHandler>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let thread = {
            let stop = stop.clone();
            let requests = requests.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let handler = handler.clone();
                    let requests = requests.clone();
                    std::thread::spawn(move || {
                        let _ = serve(stream, handler.as_ref(), &requests);
                    });
                }
            })
        };
        Ok(Self {
            addr,
            stop,
            requests,
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/generate", self.addr)
    }

    /// Requests answered so far (including ones answered with an error status).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn shutdown(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Unblock accept().
            let _ = TcpStream::connect(self.addr);
            let _ = thread.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve(stream: TcpStream, handler: &StubHandler, requests: &AtomicUsize) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let index = requests.fetch_add(1, Ordering::SeqCst);

    let (status, payload) = if !request_line.starts_with("POST ") {
        (405, String::new())
    } else {
        match serde_json::from_slice::<GenerationRequest>(&body) {
            Err(e) => (400, e.to_string()),
            Ok(req) => match handler(&req, index) {
                StubReply::Text(text) => (
                    200,
                    serde_json::to_string(&GenerationResponse { text }).expect("serializable"),
                ),
                StubReply::Status(code) => (code, String::new()),
            },
        }
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
