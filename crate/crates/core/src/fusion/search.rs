use std::cmp::Ordering;

use super::config::FusionConfig;
use super::scorer::{fused_step_scores, Scorer};
use crate::data::{LabelId, EOS, NUM_SENTINELS};
use crate::error::{Error, Result};

/// A (partial) output with its fused score and per-model components.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Labels without sentinels.
    pub labels: Vec<LabelId>,
    pub score: f64,
    pub aed: f64,
    pub lm: f64,
    pub ilm: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis {
            labels: Vec::new(),
            score: 0.0,
            aed: 0.0,
            lm: 0.0,
            ilm: 0.0,
            finished: false,
        }
    }

    /// Output length including the end sentinel.
    pub fn output_len(&self) -> usize {
        self.labels.len() + usize::from(self.finished)
    }

    /// Score used for ranking, optionally length-normalized.
    pub fn ranking_score(&self, config: &FusionConfig) -> f64 {
        if config.length_norm {
            self.score / self.output_len().max(1) as f64
        } else {
            self.score
        }
    }
}

/// Best first; ties go to the lexicographically smaller label sequence, which
/// prefers smaller label ids and then shorter prefixes.
fn rank(a: &Hypothesis, b: &Hypothesis, config: &FusionConfig) -> Ordering {
    b.ranking_score(config)
        .total_cmp(&a.ranking_score(config))
        .then_with(|| a.labels.cmp(&b.labels))
        .then_with(|| b.finished.cmp(&a.finished))
}

/// Extends `hyp` by `label` (an ordinary label or EOS) using the cached entry.
fn extend(scorer: &mut Scorer<'_>, hyp: &Hypothesis, label: LabelId, config: &FusionConfig) -> Result<Hypothesis> {
    let entry = scorer.entry(&hyp.labels)?;
    let fused = fused_step_scores(entry, config);
    let mut next = hyp.clone();
    next.score += fused[label];
    next.aed += entry.aed[label];
    next.lm += entry.lm.as_ref().map_or(0.0, |d| d[label]);
    next.ilm += entry.prior.as_ref().map_or(0.0, |d| d[label]);
    if label == EOS {
        next.finished = true;
    } else {
        next.labels.push(label);
    }
    Ok(next)
}

/// Labels allowed after a prefix of length `len`: no empty outputs, and only
/// the end sentinel once `max_output_len` labels have been emitted.
fn allowed(len: usize, vocab: usize, max_len: usize) -> impl Iterator<Item = LabelId> {
    let labels = if len < max_len { NUM_SENTINELS..vocab } else { vocab..vocab };
    let eos = (len > 0).then_some(EOS);
    eos.into_iter().chain(labels)
}

/// Label-synchronous beam search. Finished hypotheses stay in the beam and
/// compete with open ones; search stops once every kept hypothesis is
/// finished. Returns the finished hypotheses of the final beam, best first.
pub fn beam_search(scorer: &mut Scorer<'_>, config: &FusionConfig) -> Result<Vec<Hypothesis>> {
    let config = config.effective()?;
    let v = scorer.vocab_size();
    let mut beam = vec![Hypothesis::root()];
    while beam.iter().any(|h| !h.finished) {
        let mut candidates = Vec::with_capacity(beam.len() * v);
        for hyp in &beam {
            if hyp.finished {
                candidates.push(hyp.clone());
                continue;
            }
            for label in allowed(hyp.labels.len(), v, config.max_output_len) {
                candidates.push(extend(scorer, hyp, label, &config)?);
            }
        }
        candidates.sort_by(|a, b| rank(a, b, &config));
        candidates.truncate(config.beam_width);
        beam = candidates;
    }
    Ok(beam)
}

/// Scores a fixed label sequence (plus the end sentinel) exactly as the beam would.
pub fn force_decode(scorer: &mut Scorer<'_>, labels: &[LabelId], config: &FusionConfig) -> Result<Hypothesis> {
    let config = config.effective()?;
    let mut hyp = Hypothesis::root();
    for &label in labels.iter().chain([EOS].iter()) {
        if label != EOS && (label < NUM_SENTINELS || label >= scorer.vocab_size()) {
            return Err(Error::Index {
                what: "label vocabulary",
                index: label,
                size: scorer.vocab_size(),
            });
        }
        hyp = extend(scorer, &hyp, label, &config)?;
    }
    Ok(hyp)
}

/// Most sequences [`exhaustive_search`] will enumerate.
pub const EXHAUSTIVE_LIMIT: usize = 1_000_000;

/// Number of outputs with 1..=`max_len` labels over `labels` ordinary labels,
/// or `None` if it exceeds [`EXHAUSTIVE_LIMIT`].
pub fn output_space(labels: usize, max_len: usize) -> Option<usize> {
    let mut total = 0usize;
    let mut level = 1usize;
    for _ in 0..max_len {
        level = level.checked_mul(labels)?;
        total = total.checked_add(level)?;
        if total > EXHAUSTIVE_LIMIT {
            return None;
        }
    }
    Some(total)
}

/// Scores every terminated output with 1..=`max_len` labels and returns the
/// best under the same ordering as [`beam_search`], plus the count enumerated.
pub fn exhaustive_search(scorer: &mut Scorer<'_>, config: &FusionConfig, max_len: usize) -> Result<(Hypothesis, usize)> {
    let config = config.effective()?;
    let labels = scorer.vocab_size() - NUM_SENTINELS;
    if output_space(labels, max_len).is_none() {
        return Err(Error::Input(format!(
            "{labels}^{max_len} outputs exceed the exhaustive-search limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let mut best: Option<Hypothesis> = None;
    let mut count = 0;
    let mut open = vec![Hypothesis::root()];
    while let Some(hyp) = open.pop() {
        if !hyp.labels.is_empty() {
            let done = extend(scorer, &hyp, EOS, &config)?;
            count += 1;
            if best.as_ref().is_none_or(|b| rank(&done, b, &config) == Ordering::Less) {
                best = Some(done);
            }
        }
        if hyp.labels.len() < max_len {
            for label in NUM_SENTINELS..scorer.vocab_size() {
                open.push(extend(scorer, &hyp, label, &config)?);
            }
        }
    }
    Ok((best.expect("at least one output"), count))
}
