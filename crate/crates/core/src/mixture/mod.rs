//! Mixture planning, token counting, packing and training schedules.

mod epoch;
mod pack;
pub mod packfile;
mod plan;
mod schedule;
mod tokenizer;

use thiserror::Error;

pub use epoch::{group_by_subset, materialize_epoch, Epoch};
pub use pack::{pack_documents, pack_token_streams, PackMode, PackOutcome, PackedSequence};
pub use plan::{solve_mix_plan, MixPlan, SubsetPlan, SubsetSpec, WEIGHT_TOLERANCE};
pub use schedule::{
    lr_at_step, steps_for_samples, steps_for_tokens, ScheduleError, TrainingSchedule,
    REFERENCE_PRETRAIN_STEPS,
};
pub use tokenizer::{count_all, count_tokens, ByteTokenizer, SubprocessTokenizer, Tokenizer, TokenizerError};

#[derive(Debug, Error)]
pub enum MixError {
    #[error("mixture plan has no subsets")]
    EmptyPlan,
    #[error("subset {name}: weight {weight} is outside (0, 1]")]
    InvalidWeight { name: String, weight: f64 },
    #[error("subset {0} has zero raw tokens")]
    ZeroRawTokens(String),
    #[error("subset {0} appears more than once")]
    DuplicateSubset(String),
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("subset {0} has positive weight but no documents")]
    EmptySubset(String),
    #[error("documents grouped under {0}, which the plan does not contain")]
    UnplannedSubset(String),
    #[error("document {0} has no token count")]
    MissingTokenCount(String),
    #[error("context length {0} is below the minimum of 2")]
    ContextTooShort(usize),
    #[error("separator id {separator_id} is outside a vocabulary of {vocabulary_size}")]
    SeparatorOutOfVocabulary { separator_id: u32, vocabulary_size: u32 },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}
