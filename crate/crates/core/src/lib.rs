//! Corpus engineering and evaluation toolkit for specializing code models to a
//! fast-moving SDK.
//!
//! The pipeline runs in stages, each living in its own module:
//!
//! - [`ingest`]: search a code host, apply the crawl policy, fetch default-branch files.
//! - [`curate`]: recency filter, exact dedup, notebook linearization with sentinels.
//! - [`mixture`]: mixing/oversampling arithmetic, token counting, packing, schedules.
//! - [`tunedata`]: instruct-mixture assembly and the generate-then-validate loop.
//! - [`eval`]: execution-based benchmark harness and pass@k reporting.

pub mod curate;
pub mod eval;
pub mod ingest;
pub mod mixture;
pub mod tunedata;

mod digest;

pub use digest::sha256_hex;
