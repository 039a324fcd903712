use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::aed::{picked_sum, targets_with_eos, AedConfig};
use super::layers::LstmIds;
use super::train::{ExampleLoss, Trainable};
use crate::data::{LabelId, Sentence, TextCorpus, Vocabulary, BOS};
use crate::error::{Error, Result};
use crate::numcore::{lstm_cell, lstm_cell_projected, Bound, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmRole {
    /// Trained on target-domain text for fusion.
    External,
    /// Trained on the AED's transcripts; its topology mirrors the decoder.
    DecoderLike,
}

impl LmRole {
    pub fn name(self) -> &'static str {
        match self {
            LmRole::External => "external",
            LmRole::DecoderLike => "decoder_like",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub num_labels: usize,
    pub emb_dim: usize,
    pub layers: usize,
    pub width: usize,
    pub role: LmRole,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            num_labels: 50,
            emb_dim: 32,
            layers: 1,
            width: 64,
            role: LmRole::External,
            init_scale: 0.08,
            seed: 1,
        }
    }
}

impl LmConfig {
    /// One LSTM layer with the decoder's embedding size and width.
    pub fn decoder_like(aed: &AedConfig, seed: u64) -> Self {
        LmConfig {
            num_labels: aed.num_labels,
            emb_dim: aed.emb_dim,
            layers: 1,
            width: aed.dec_width,
            role: LmRole::DecoderLike,
            init_scale: aed.init_scale,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.num_labels == 0 || self.emb_dim == 0 || self.layers == 0 || self.width == 0 {
            return Err(Error::Config("LM dimensions must be positive".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be finite and non-negative".into()));
        }
        // Checkpoint headers store the config as TOML, whose integers are signed.
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embedding: ParamId,
    layers: Vec<LstmIds>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Recurrent state per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

/// Stacked LSTM label language model.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLm {
    config: LmConfig,
    vocab: Vocabulary,
    params: ParamSet,
    layout: Layout,
}

impl LstmLm {
    pub fn new(config: LmConfig) -> Result<Self> {
        let mut lm = Self::skeleton(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(lm.config.seed);
        lm.params.init_uniform(&mut rng, lm.config.init_scale);
        Ok(lm)
    }

    pub(crate) fn skeleton(config: LmConfig) -> Result<Self> {
        config.check()?;
        let v = config.num_labels + crate::data::NUM_SENTINELS;
        let mut p = ParamSet::new();
        let embedding = p.add("embedding", Tensor::zeros(&[v, config.emb_dim]));
        let layers = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.emb_dim } else { config.width };
                LstmIds::register(&mut p, &format!("lstm.{l}"), input, config.width)
            })
            .collect();
        let out_w = p.add("out.w", Tensor::zeros(&[config.width, v]));
        let out_b = p.add("out.b", Tensor::zeros(&[1, v]));
        Ok(LstmLm {
            vocab: Vocabulary::synthetic(config.num_labels),
            config,
            params: p,
            layout: Layout {
                embedding,
                layers,
                out_w,
                out_b,
            },
        })
    }

    pub(crate) fn with_vocab(mut self, vocab: Vocabulary) -> Result<Self> {
        if vocab.size() != self.vocab.size() {
            return Err(Error::Config("vocabulary size does not match model".into()));
        }
        self.vocab = vocab;
        Ok(self)
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn output_on(&self, tape: &mut Tape<'_>, b: &Bound, h: Var) -> Result<Var> {
        let logits = tape.matmul(h, b.var(self.layout.out_w))?;
        let logits = tape.add_row(logits, b.var(self.layout.out_b))?;
        Ok(tape.log_softmax(logits))
    }

    /// Teacher-forced log-distributions `(N+1) × V` and targets `labels ++ [EOS]`.
    pub fn teacher_forced_on(&self, tape: &mut Tape<'_>, b: &Bound, labels: &[LabelId]) -> Result<(Var, Vec<LabelId>)> {
        labels.iter().try_for_each(|&l| self.vocab.check_label(l))?;
        let inputs: Vec<LabelId> = std::iter::once(BOS).chain(labels.iter().copied()).collect();
        let mut seq = tape.gather(b.var(self.layout.embedding), &inputs)?;
        for ids in &self.layout.layers {
            let w = ids.bind(b);
            let xw = tape.matmul(seq, w.w_x)?;
            let projected = tape.add_row(xw, w.b)?;
            let mut h = tape.constant(Tensor::zeros(&[1, self.config.width]));
            let mut c = tape.constant(Tensor::zeros(&[1, self.config.width]));
            let mut rows = Vec::with_capacity(inputs.len());
            for t in 0..inputs.len() {
                let x = tape.row(projected, t)?;
                (h, c) = lstm_cell_projected(tape, x, h, c, w.w_h)?;
                rows.push(h);
            }
            seq = tape.stack_rows(&rows)?;
        }
        let out = self.output_on(tape, b, seq)?;
        Ok((out, targets_with_eos(labels)))
    }

    pub fn initial_state(&self) -> LmState {
        let zeros = vec![Tensor::zeros(&[1, self.config.width]); self.config.layers];
        LmState {
            h: zeros.clone(),
            c: zeros,
        }
    }

    /// Consumes `y_prev`; returns the next state and next-label log-distribution.
    pub fn step(&self, state: &LmState, y_prev: LabelId) -> Result<(LmState, Vec<f64>)> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let mut x = tape.gather(b.var(self.layout.embedding), &[y_prev])?;
        let mut next = LmState {
            h: Vec::with_capacity(self.config.layers),
            c: Vec::with_capacity(self.config.layers),
        };
        for (l, ids) in self.layout.layers.iter().enumerate() {
            let h = tape.leaf_ref(&state.h[l], false);
            let c = tape.leaf_ref(&state.c[l], false);
            let (h, c) = lstm_cell(&mut tape, x, h, c, &ids.bind(&b))?;
            next.h.push(tape.value(h).clone());
            next.c.push(tape.value(c).clone());
            x = h;
        }
        let logp = self.output_on(&mut tape, &b, x)?;
        Ok((next, tape.value(logp).data().to_vec()))
    }

    /// `log P(labels, EOS)`.
    pub fn sequence_logprob(&self, labels: &[LabelId]) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let (rows, targets) = self.teacher_forced_on(&mut tape, &b, labels)?;
        Ok(picked_sum(tape.value(rows), &targets))
    }

    /// `exp(-Σ log P / Σ (N+1))` over the corpus.
    pub fn perplexity(&self, text: &TextCorpus) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::Input("empty text corpus".into()));
        }
        let nll = super::train::evaluate(self, &text.sentences)?;
        Ok(nll.exp())
    }
}

impl Trainable for LstmLm {
    type Example = Sentence;

    fn trainable_params(&self) -> &ParamSet {
        &self.params
    }

    fn trainable_params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss(&self, s: &Sentence) -> Result<ExampleLoss> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, true);
        let (rows, targets) = self.teacher_forced_on(&mut tape, &b, &s.labels)?;
        let mean = tape.cross_entropy(rows, &targets)?;
        let total = tape.scale(mean, targets.len() as f64);
        tape.backward(total)?;
        Ok(ExampleLoss {
            nll: tape.value(total).item(),
            tokens: targets.len(),
            grads: b.gradients(&tape),
        })
    }

    fn example_nll(&self, s: &Sentence) -> Result<(f64, usize)> {
        Ok((-self.sequence_logprob(&s.labels)?, s.labels.len() + 1))
    }
}
