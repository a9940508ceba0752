mod corpus;
mod evaluate;
mod training;

pub use corpus::{crawl, curate};
pub use evaluate::{eval, report, STUB_PREFIX};
pub use training::{mix, pack, schedule, tunedata};

use anyhow::Context;
use qcorpus::mixture::{ByteTokenizer, SubprocessTokenizer, Tokenizer};

use crate::config::{PipelineConfig, TokenizerKind};
use crate::stage::{Classify, StageResult};

/// A tokenizer with the ids the pipeline needs around it.
pub struct TokenizerSetup {
    pub tokenizer: Box<dyn Tokenizer>,
    pub separator_id: u32,
    pub pad_id: u32,
}

pub fn tokenizer(cfg: &PipelineConfig) -> StageResult<TokenizerSetup> {
    let t = &cfg.tokenizer;
    Ok(match t.kind {
        TokenizerKind::Byte => TokenizerSetup {
            tokenizer: Box::new(ByteTokenizer),
            separator_id: ByteTokenizer::SEPARATOR_ID,
            pad_id: ByteTokenizer::PAD_ID,
        },
        TokenizerKind::Subprocess => TokenizerSetup {
            tokenizer: Box::new(
                SubprocessTokenizer::spawn(&t.command, t.vocabulary_size)
                    .with_context(|| format!("starting tokenizer plugin {:?}", t.command))
                    .infra()?,
            ),
            separator_id: t.separator_id,
            pad_id: t.pad_id,
        },
    })
}
