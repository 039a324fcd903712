use crate::data::{LabelId, TextCorpus};
use crate::error::{Error, Result};
use crate::model::LstmLm;

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance(reference: &[LabelId], hypothesis: &[LabelId]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Total edit errors and total reference length.
pub fn error_counts(refs: &[Vec<LabelId>], hyps: &[Vec<LabelId>]) -> Result<(usize, usize)> {
    if refs.len() != hyps.len() {
        return Err(Error::Input(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let errors = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r, h)).sum();
    let words = refs.iter().map(Vec::len).sum();
    Ok((errors, words))
}

/// Summed edit distances over summed reference lengths.
pub fn word_error_rate(refs: &[Vec<LabelId>], hyps: &[Vec<LabelId>]) -> Result<f64> {
    let (errors, words) = error_counts(refs, hyps)?;
    if words == 0 {
        return Err(Error::Input("empty reference set".into()));
    }
    Ok(errors as f64 / words as f64)
}

/// Perplexity of any label LM, end sentinel included.
pub fn lm_perplexity(text: &TextCorpus, lm: &LstmLm) -> Result<f64> {
    lm.perplexity(text)
}
