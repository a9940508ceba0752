use serde::{Deserialize, Serialize};

use super::tokenizer::{Tokenizer, TokenizerError};
use super::MixError;
use crate::curate::SourceDocument;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackMode {
    /// Documents continue across window boundaries.
    #[default]
    Straddle,
    /// A document reaching the end of a window is cut there; its remainder
    /// and separator are dropped and the next document opens a new window.
    DropAtBoundary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    /// Positions within `token_ids` holding the separator.
    pub doc_boundaries: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PackOutcome {
    pub sequences: Vec<PackedSequence>,
    /// Tokens (separators included) that did not make it into a full window.
    pub dropped_tokens: u64,
}

struct Packer {
    context_length: usize,
    separator_id: u32,
    mode: PackMode,
    current: Vec<u32>,
    boundaries: Vec<usize>,
    out: PackOutcome,
}

impl Packer {
    fn flush_if_full(&mut self) -> bool {
        if self.current.len() < self.context_length {
            return false;
        }
        let token_ids = std::mem::replace(&mut self.current, Vec::with_capacity(self.context_length));
        self.out.sequences.push(PackedSequence {
            token_ids,
            doc_boundaries: std::mem::take(&mut self.boundaries),
        });
        true
    }

    fn push_document(&mut self, ids: &[u32]) {
        let total = ids.len() + 1;
        for (i, token) in ids
            .iter()
            .copied()
            .chain(std::iter::once(self.separator_id))
            .enumerate()
        {
            if i == ids.len() {
                self.boundaries.push(self.current.len());
            }
            self.current.push(token);
            if self.flush_if_full() && self.mode == PackMode::DropAtBoundary {
                self.out.dropped_tokens += (total - i - 1) as u64;
                return;
            }
        }
    }

    fn finish(mut self) -> PackOutcome {
        self.out.dropped_tokens += self.current.len() as u64;
        self.out
    }
}

/// Concatenates token streams as `doc ⊕ sep ⊕ doc ⊕ sep …` and cuts the
/// stream into windows of exactly `context_length`. The trailing partial
/// window is dropped and counted.
pub fn pack_token_streams<I, D>(
    docs: I,
    context_length: usize,
    separator_id: u32,
    mode: PackMode,
) -> Result<PackOutcome, MixError>
where
    I: IntoIterator<Item = D>,
    D: AsRef<[u32]>,
{
    if context_length < 2 {
        return Err(MixError::ContextTooShort(context_length));
    }
    let mut packer = Packer {
        context_length,
        separator_id,
        mode,
        current: Vec::with_capacity(context_length),
        boundaries: Vec::new(),
        out: PackOutcome::default(),
    };
    for doc in docs {
        packer.push_document(doc.as_ref());
    }
    Ok(packer.finish())
}

/// Tokenizes documents in order and packs them.
pub fn pack_documents(
    docs: &[&SourceDocument],
    tok: &dyn Tokenizer,
    context_length: usize,
    separator_id: u32,
    mode: PackMode,
) -> Result<PackOutcome, MixError> {
    if separator_id >= tok.vocabulary_size() {
        return Err(MixError::SeparatorOutOfVocabulary {
            separator_id,
            vocabulary_size: tok.vocabulary_size(),
        });
    }
    if context_length < 2 {
        return Err(MixError::ContextTooShort(context_length));
    }
    let streams = docs
        .iter()
        .map(|d| tok.encode(&d.text))
        .collect::<Result<Vec<_>, TokenizerError>>()?;
    pack_token_streams(streams, context_length, separator_id, mode)
}
