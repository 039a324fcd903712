//! Log-linear fusion of AED, external LM and ILM scores; search and metrics.

mod config;
mod decode;
mod metrics;
mod report;
mod scorer;
mod search;

pub use config::{Axis, FusionConfig, GridSpec, Method};
pub use decode::{corpus_errors, decode_corpus, grid_search_scales, GridPoint, GridResult, UttResult};
pub use metrics::{edit_distance, error_counts, lm_perplexity, word_error_rate};
pub use report::{format_nbest, format_table, format_table_kv, parse_nbest, NBestRecord, ReportRow};
pub use scorer::{fused_step_scores, Entry, Models, Scorer};
pub use search::{beam_search, exhaustive_search, force_decode, output_space, Hypothesis, EXHAUSTIVE_LIMIT};
