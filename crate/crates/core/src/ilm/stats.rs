use rayon::prelude::*;

use crate::data::{Corpus, Utterance, BOS};
use crate::error::{Error, Result};
use crate::model::{AedModel, EncoderOutput};
use crate::numcore::{Tape, Tensor};

/// Sums needed for the corpus-level context and encoder averages.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub sum_c: Vec<f64>,
    /// Decoder steps, one per label plus the end sentinel.
    pub j_tot: usize,
    pub sum_h: Vec<f64>,
    /// Encoder frames after subsampling.
    pub t_tot: usize,
}

impl CorpusStats {
    pub fn empty(d_enc: usize) -> Self {
        CorpusStats {
            sum_c: vec![0.0; d_enc],
            j_tot: 0,
            sum_h: vec![0.0; d_enc],
            t_tot: 0,
        }
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        add_into(&mut self.sum_c, &other.sum_c);
        add_into(&mut self.sum_h, &other.sum_h);
        self.j_tot += other.j_tot;
        self.t_tot += other.t_tot;
    }

    /// `E_D[c]`.
    pub fn context_avg(&self) -> Result<Tensor> {
        average(&self.sum_c, self.j_tot)
    }

    /// `E_D[h]`.
    pub fn encoder_avg(&self) -> Result<Tensor> {
        average(&self.sum_h, self.t_tot)
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

fn average(sum: &[f64], count: usize) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::Input("average over zero items".into()));
    }
    Tensor::row_vector(sum.iter().map(|s| s / count as f64).collect())
}

/// Statistics of one utterance from a teacher-forced pass.
pub fn utterance_stats(model: &AedModel, utt: &Utterance) -> Result<CorpusStats> {
    model.check_labels(&utt.labels)?;
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, false);
    let x = tape.leaf_ref(&utt.features, false);
    let enc = model.encode_on(&mut tape, &b, x)?;
    let h = tape.value(enc.h).clone();
    let mut stats = CorpusStats::empty(model.config().enc_dim());
    for t in 0..h.rows() {
        add_into(&mut stats.sum_h, h.row(t));
    }
    stats.t_tot = h.rows();
    let mut state = model.initial_state_on(&mut tape, h.rows());
    for &y_prev in std::iter::once(&BOS).chain(&utt.labels) {
        state = model.step_on(&mut tape, &b, &enc, &state, y_prev)?.0;
        add_into(&mut stats.sum_c, tape.value(state.context).data());
        stats.j_tot += 1;
    }
    Ok(stats)
}

/// Teacher-forced pass over the corpus collecting every context `c_j` and
/// every encoder state `h_t`. Per-utterance sums are merged in corpus order.
pub fn accumulate_stats(corpus: &Corpus, model: &AedModel) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot accumulate statistics over an empty corpus".into()));
    }
    let parts = corpus
        .utterances()
        .par_iter()
        .map(|u| utterance_stats(model, u))
        .collect::<Result<Vec<_>>>()?;
    let mut total = CorpusStats::empty(model.config().enc_dim());
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Mean of the encoder rows, `(1/T) Σ_t h_t`.
pub fn seq_encoder_avg(enc: &EncoderOutput) -> Tensor {
    let mut sum = vec![0.0; enc.h.cols()];
    for t in 0..enc.frames() {
        add_into(&mut sum, enc.h.row(t));
    }
    average(&sum, enc.frames()).expect("encoder output has at least one frame")
}
