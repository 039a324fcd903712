//! Internal language model estimation by attention-context substitution.

mod file;
mod mini_lstm;
mod source;
mod stats;

pub use file::{load_estimator, save_estimator};
pub use mini_lstm::{sample_subset, train_mini_lstm, MiniLstm, MiniLstmConfig, MiniLstmObjective};
pub use source::{
    ilm_initial_on, ilm_initial_state, ilm_sequence_logprob, ilm_step, ilm_step_on, ilm_teacher_forced_on,
    ContextSource, Estimator, IlmState, IlmVars, ResolvedSource,
};
pub use stats::{accumulate_stats, seq_encoder_avg, utterance_stats, CorpusStats};

use rayon::prelude::*;

use crate::data::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::model::AedModel;

/// `exp` of the mean per-token ILM NLL over sentences, end sentinel included.
/// Sources that read the features need [`ilm_perplexity_paired`].
pub fn ilm_perplexity(model: &AedModel, source: &ContextSource, text: &[Sentence]) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::Input("empty text corpus".into()));
    }
    let src = source.resolve(model, None)?;
    let parts = text
        .par_iter()
        .map(|s| Ok((ilm_sequence_logprob(model, &src, &s.labels)?, s.labels.len() + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(perplexity(&parts))
}

/// ILM perplexity over transcribed audio; works for every source.
pub fn ilm_perplexity_paired(model: &AedModel, source: &ContextSource, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    let parts = corpus
        .utterances()
        .par_iter()
        .map(|u| {
            let enc = if source.uses_features() {
                Some(model.encode(&u.features)?)
            } else {
                None
            };
            let src = source.resolve(model, enc.as_ref())?;
            Ok((ilm_sequence_logprob(model, &src, &u.labels)?, u.labels.len() + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(perplexity(&parts))
}

fn perplexity(parts: &[(f64, usize)]) -> f64 {
    let (lp, n) = parts
        .iter()
        .fold((0.0, 0usize), |(a, n), &(b, m)| (a + b, n + m));
    (-lp / n as f64).exp()
}
