//! Synthetic paired corpora and text with controllable domain shift.

mod batch;
mod corpus;
mod task;
mod vocab;

pub use batch::{epoch_batches, shuffled_batches};
pub use corpus::{Corpus, Sentence, TextCorpus, Utterance};
pub use task::{min_pairwise_distance, Domain, SyntheticTask, TaskConfig};
pub use vocab::{LabelId, Vocabulary, BOS, EOS, NUM_SENTINELS};
