//! Jupyter notebook parsing and sentinel linearization.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Markdown,
    Code,
    Raw,
}

/// One attachment of a markdown cell: name and the media types it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub media_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotebookCell {
    pub cell_type: CellType,
    pub source: String,
    /// Output blobs; only code cells carry them.
    #[serde(default)]
    pub outputs: Vec<Value>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
}

impl NotebookCell {
    pub fn markdown(source: impl Into<String>) -> Self {
        Self::new(CellType::Markdown, source)
    }

    pub fn code(source: impl Into<String>) -> Self {
        Self::new(CellType::Code, source)
    }

    pub fn new(cell_type: CellType, source: impl Into<String>) -> Self {
        Self {
            cell_type,
            source: source.into(),
            outputs: Vec::new(),
            attachments: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NotebookError {
    #[error("notebook is not valid UTF-8")]
    NotUtf8,
    #[error("malformed notebook JSON: {0}")]
    Json(String),
    #[error("notebook has no cells")]
    MissingCells,
    #[error("cell {index}: {message}")]
    BadCell { index: usize, message: String },
}

/// `source` may be a string or a list of line strings.
fn join_source(value: Option<&Value>, index: usize) -> Result<String, NotebookError> {
    match value {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Array(lines)) => lines
            .iter()
            .map(|l| {
                l.as_str().ok_or_else(|| NotebookError::BadCell {
                    index,
                    message: "non-string source line".into(),
                })
            })
            .collect(),
        Some(_) => Err(NotebookError::BadCell {
            index,
            message: "source is neither string nor list".into(),
        }),
    }
}

fn parse_cell(index: usize, cell: &Value, v3: bool) -> Result<NotebookCell, NotebookError> {
    let obj = cell.as_object().ok_or_else(|| NotebookError::BadCell {
        index,
        message: "cell is not an object".into(),
    })?;
    let raw_type = obj
        .get("cell_type")
        .and_then(Value::as_str)
        .ok_or_else(|| NotebookError::BadCell {
            index,
            message: "missing cell_type".into(),
        })?;
    let cell_type = match raw_type {
        "code" => CellType::Code,
        // v3 "heading" cells are markdown headings.
        "markdown" | "heading" => CellType::Markdown,
        _ => CellType::Raw,
    };
    let source_field = if v3 && cell_type == CellType::Code {
        obj.get("input").or_else(|| obj.get("source"))
    } else {
        obj.get("source")
    };
    let mut source = join_source(source_field, index)?;
    if v3 && raw_type == "heading" {
        let level = obj.get("level").and_then(Value::as_u64).unwrap_or(1).clamp(1, 6);
        source = format!("{} {}", "#".repeat(level as usize), source);
    }
    let outputs = match (cell_type, obj.get("outputs")) {
        (CellType::Code, Some(Value::Array(outputs))) => outputs.clone(),
        _ => Vec::new(),
    };
    let attachments = obj
        .get("attachments")
        .and_then(Value::as_object)
        .map(|map| {
            map.iter()
                .map(|(name, bundle)| Attachment {
                    name: name.clone(),
                    media_types: bundle
                        .as_object()
                        .map(|b| b.keys().cloned().collect())
                        .unwrap_or_default(),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(NotebookCell {
        cell_type,
        source,
        outputs,
        attachments,
    })
}

/// Parses nbformat v4 (and v3 via its `worksheets` layout) into cells in
/// document order.
pub fn parse_notebook(content: &[u8]) -> Result<Vec<NotebookCell>, NotebookError> {
    let text = std::str::from_utf8(content).map_err(|_| NotebookError::NotUtf8)?;
    let root: Value = serde_json::from_str(text).map_err(|e| NotebookError::Json(e.to_string()))?;
    let root = root.as_object().ok_or(NotebookError::MissingCells)?;

    if let Some(cells) = root.get("cells") {
        let cells = cells.as_array().ok_or(NotebookError::MissingCells)?;
        return cells
            .iter()
            .enumerate()
            .map(|(i, c)| parse_cell(i, c, false))
            .collect();
    }

    let worksheets = root
        .get("worksheets")
        .and_then(Value::as_array)
        .ok_or(NotebookError::MissingCells)?;
    let mut out = Vec::new();
    for sheet in worksheets {
        let cells = sheet
            .get("cells")
            .and_then(Value::as_array)
            .ok_or(NotebookError::MissingCells)?;
        for cell in cells {
            out.push(parse_cell(out.len(), cell, true)?);
        }
    }
    Ok(out)
}

/// Marker strings inserted between linearized cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentinelConfig {
    pub start_token: String,
    pub text_token: String,
    pub code_token: String,
}

impl Default for SentinelConfig {
    fn default() -> Self {
        Self {
            start_token: "<jupyter_start>".into(),
            text_token: "<jupyter_text>".into(),
            code_token: "<jupyter_code>".into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("sentinel tokens must be non-empty and pairwise distinct")]
pub struct InvalidSentinels;

impl SentinelConfig {
    pub fn validate(&self) -> Result<(), InvalidSentinels> {
        let tokens = [&self.start_token, &self.text_token, &self.code_token];
        let distinct = tokens[0] != tokens[1] && tokens[0] != tokens[2] && tokens[1] != tokens[2];
        if tokens.iter().any(|t| t.is_empty()) || !distinct {
            return Err(InvalidSentinels);
        }
        Ok(())
    }
}

const BASE64_ALPHABET_EXTRA: [u8; 3] = *b"+/=";

/// Base64 prefixes of PNG, JPEG, GIF, WebP/RIFF and SVG payloads.
const IMAGE_MAGIC_PREFIXES: [&str; 5] = ["iVBORw0KGgo", "/9j/", "R0lGOD", "UklGR", "PHN2Zy"];

/// Substrings that put a long base64 run in an image context.
const IMAGE_CONTEXT_MARKERS: [&str; 7] = ["<img", "![", "image/", "Image(", "b64decode", ".png", ".jpg"];

/// Flags cells carrying embedded base64 image data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDetector {
    /// Minimum length of a base64-alphabet run considered a payload.
    pub min_run: usize,
}

impl Default for ImageDetector {
    fn default() -> Self {
        Self { min_run: 256 }
    }
}

fn is_base64_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || BASE64_ALPHABET_EXTRA.contains(&b)
}

fn has_data_uri_image(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    let mut rest = lower.as_str();
    while let Some(at) = rest.find("data:image/") {
        let tail = &rest[at + "data:image/".len()..];
        if let Some((header, _)) = tail.split_once(',') {
            if header.len() <= 64 && header.ends_with(";base64") {
                return true;
            }
        }
        rest = tail;
    }
    false
}

impl ImageDetector {
    pub fn is_image_cell(&self, cell: &NotebookCell) -> bool {
        if cell
            .attachments
            .iter()
            .any(|a| a.media_types.iter().any(|m| m.starts_with("image/")))
        {
            return true;
        }
        if has_data_uri_image(&cell.source) {
            return true;
        }
        self.has_image_base64_run(&cell.source)
    }

    fn has_image_base64_run(&self, text: &str) -> bool {
        let bytes = text.as_bytes();
        let in_image_context = IMAGE_CONTEXT_MARKERS.iter().any(|m| text.contains(m));
        let mut i = 0;
        while i < bytes.len() {
            if !is_base64_byte(bytes[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < bytes.len() && is_base64_byte(bytes[i]) {
                i += 1;
            }
            if i - start >= self.min_run {
                let run = &text[start..i];
                if in_image_context || IMAGE_MAGIC_PREFIXES.iter().any(|p| run.starts_with(p)) {
                    return true;
                }
            }
        }
        false
    }
}

/// Flags a cell with the default detector settings.
pub fn detect_base64_image_cell(cell: &NotebookCell) -> bool {
    ImageDetector::default().is_image_cell(cell)
}

/// Joins kept cells behind sentinels. Output blobs, raw cells and cells with
/// embedded image payloads never reach the result.
pub fn linearize_notebook(
    cells: &[NotebookCell],
    sentinels: &SentinelConfig,
    detector: &ImageDetector,
) -> String {
    let mut out = sentinels.start_token.clone();
    for cell in cells {
        let marker = match cell.cell_type {
            CellType::Markdown => &sentinels.text_token,
            CellType::Code => &sentinels.code_token,
            CellType::Raw => continue,
        };
        if detector.is_image_cell(cell) {
            continue;
        }
        out.push_str(marker);
        out.push_str(&cell.source);
    }
    out
}
