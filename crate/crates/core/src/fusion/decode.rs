use rayon::prelude::*;

use super::config::{FusionConfig, GridSpec};
use super::metrics::edit_distance;
use super::scorer::{Models, Scorer};
use super::search::{beam_search, Hypothesis};
use crate::data::{Corpus, LabelId};
use crate::error::{Error, Result};

/// N-best list of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UttResult {
    pub id: String,
    pub reference: Vec<LabelId>,
    pub nbest: Vec<Hypothesis>,
}

impl UttResult {
    pub fn best(&self) -> &[LabelId] {
        self.nbest.first().map_or(&[], |h| &h.labels)
    }
}

/// Beam-decodes every utterance; utterances run in parallel, results keep corpus order.
pub fn decode_corpus(corpus: &Corpus, models: Models<'_>, config: &FusionConfig) -> Result<Vec<UttResult>> {
    let config = config.effective()?;
    models.check(config.method)?;
    corpus
        .utterances()
        .par_iter()
        .map(|u| {
            let mut scorer = Scorer::new(models, config.method, &u.features)?;
            Ok(UttResult {
                id: u.id.clone(),
                reference: u.labels.clone(),
                nbest: beam_search(&mut scorer, &config)?,
            })
        })
        .collect()
}

/// Errors and words of the first-best outputs.
pub fn corpus_errors(results: &[UttResult]) -> (usize, usize) {
    results.iter().fold((0, 0), |(e, w), r| {
        (e + edit_distance(&r.reference, r.best()), w + r.reference.len())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    pub errors: usize,
    pub words: usize,
}

impl GridPoint {
    pub fn wer(&self) -> f64 {
        self.errors as f64 / self.words.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    /// Every grid point in lexicographic `(λ1, λ2)` order.
    pub surface: Vec<GridPoint>,
}

/// Decodes `dev` at every grid point and returns the WER minimizer; ties go
/// to the lexicographically smaller `(λ1, λ2)`. Each utterance keeps one
/// scorer across the grid so model evaluations are shared between points.
pub fn grid_search_scales(dev: &Corpus, models: Models<'_>, base: &FusionConfig, grid: &GridSpec) -> Result<GridResult> {
    let base = base.effective()?;
    models.check(base.method)?;
    let points = grid.points(base.method)?;
    if points.is_empty() {
        return Err(Error::Config("empty scale grid".into()));
    }
    if dev.is_empty() {
        return Err(Error::Input("empty tuning corpus".into()));
    }
    let per_utt = dev
        .utterances()
        .par_iter()
        .map(|u| {
            let mut scorer = Scorer::new(models, base.method, &u.features)?;
            points
                .iter()
                .map(|&(lambda1, lambda2)| {
                    let cfg = FusionConfig {
                        lambda1,
                        lambda2,
                        ..base.clone()
                    };
                    let nbest = beam_search(&mut scorer, &cfg)?;
                    Ok(edit_distance(&u.labels, &nbest[0].labels))
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let words = dev.utterances().iter().map(|u| u.labels.len()).sum();
    let surface: Vec<GridPoint> = points
        .iter()
        .enumerate()
        .map(|(i, &(lambda1, lambda2))| GridPoint {
            lambda1,
            lambda2,
            errors: per_utt.iter().map(|e| e[i]).sum(),
            words,
        })
        .collect();
    let best = *surface
        .iter()
        .min_by_key(|p| p.errors)
        .expect("grid is non-empty");
    Ok(GridResult { best, surface })
}
