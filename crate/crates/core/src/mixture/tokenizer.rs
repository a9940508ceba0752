use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curate::SourceDocument;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("tokenizer process: {0}")]
    Process(String),
    #[error("tokenizer protocol: {0}")]
    Protocol(String),
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
}

pub trait Tokenizer: Send + Sync {
    fn vocabulary_size(&self) -> u32;
    fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError>;
    fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError>;
}

/// One id per UTF-8 byte, plus a few special tokens above 255.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const SPECIALS: [&'static str; 2] = ["<|endoftext|>", "<pad>"];
    /// Document separator.
    pub const SEPARATOR_ID: u32 = 256;
    pub const PAD_ID: u32 = 257;
}

impl Tokenizer for ByteTokenizer {
    fn vocabulary_size(&self) -> u32 {
        256 + Self::SPECIALS.len() as u32
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        Ok(text.bytes().map(u32::from).collect())
    }

    fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                0..=255 => bytes.push(id as u8),
                _ => {
                    let special = Self::SPECIALS
                        .get((id - 256) as usize)
                        .ok_or(TokenizerError::UnknownId(id))?;
                    bytes.extend_from_slice(special.as_bytes());
                }
            }
        }
        String::from_utf8(bytes).map_err(|_| TokenizerError::InvalidUtf8)
    }
}

struct PluginProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// External tokenizer speaking newline-delimited JSON over stdio:
/// `{"text": ...}` → `{"ids": [...]}` and `{"ids": [...]}` → `{"text": ...}`.
/// A reply carrying `{"error": ...}` fails the call.
pub struct SubprocessTokenizer {
    process: Mutex<PluginProcess>,
    vocabulary_size: u32,
}

#[derive(Serialize)]
#[serde(untagged)]
enum PluginRequest<'a> {
    Encode { text: &'a str },
    Decode { ids: &'a [u32] },
}

#[derive(Deserialize)]
struct PluginReply {
    ids: Option<Vec<u32>>,
    text: Option<String>,
    error: Option<String>,
}

impl SubprocessTokenizer {
    pub fn spawn(command: &[String], vocabulary_size: u32) -> Result<Self, TokenizerError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| TokenizerError::Process("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| TokenizerError::Process(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            process: Mutex::new(PluginProcess { child, stdin, stdout }),
            vocabulary_size,
        })
    }

    fn call(&self, request: PluginRequest<'_>) -> Result<PluginReply, TokenizerError> {
        let mut process = self.process.lock().unwrap();
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        process
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| process.stdin.flush())
            .map_err(|e| TokenizerError::Process(e.to_string()))?;
        let mut reply = String::new();
        let read = process
            .stdout
            .read_line(&mut reply)
            .map_err(|e| TokenizerError::Process(e.to_string()))?;
        if read == 0 {
            return Err(TokenizerError::Process("plugin closed its output".into()));
        }
        let reply: PluginReply =
            serde_json::from_str(&reply).map_err(|e| TokenizerError::Protocol(e.to_string()))?;
        if let Some(error) = reply.error {
            return Err(TokenizerError::Protocol(error));
        }
        Ok(reply)
    }
}

impl Drop for SubprocessTokenizer {
    fn drop(&mut self) {
        if let Ok(process) = self.process.get_mut() {
            let _ = process.child.kill();
            let _ = process.child.wait();
        }
    }
}

impl Tokenizer for SubprocessTokenizer {
    fn vocabulary_size(&self) -> u32 {
        self.vocabulary_size
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        let ids = self
            .call(PluginRequest::Encode { text })?
            .ids
            .ok_or_else(|| TokenizerError::Protocol("reply without ids".into()))?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocabulary_size) {
            return Err(TokenizerError::UnknownId(bad));
        }
        Ok(ids)
    }

    fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        self.call(PluginRequest::Decode { ids })?
            .text
            .ok_or_else(|| TokenizerError::Protocol("reply without text".into()))
    }
}

/// Counts tokens of `doc.text` and stores the count on the document.
pub fn count_tokens(doc: &mut SourceDocument, tok: &dyn Tokenizer) -> Result<u64, TokenizerError> {
    let count = tok.encode(&doc.text)?.len() as u64;
    doc.token_count = Some(count);
    Ok(count)
}

/// Counts every document on up to `workers` threads. Returns the indices of
/// documents whose tokenization failed; those keep `token_count == None`.
pub fn count_all(
    docs: &mut [SourceDocument],
    tok: &dyn Tokenizer,
    workers: usize,
) -> Vec<(usize, TokenizerError)> {
    let chunk = docs.len().div_ceil(workers.max(1)).max(1);
    let mut failures = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = docs
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter_mut()
                        .enumerate()
                        .filter_map(|(i, doc)| count_tokens(doc, tok).err().map(|e| (c * chunk + i, e)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            failures.extend(handle.join().expect("counting thread panicked"));
        }
    });
    failures
}
