use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::LstmIds;
use super::train::{ExampleLoss, Trainable};
use crate::data::{LabelId, Utterance, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::numcore::{lstm_cell, lstm_cell_projected, Bound, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Recurrent decoder state with full label history.
    Lstm,
    /// Feed-forward state over the last `context_k` labels.
    Ff,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Lstm => "lstm",
            DecoderKind::Ff => "ff",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(DecoderKind::Lstm),
            "ff" => Ok(DecoderKind::Ff),
            other => Err(Error::Config(format!("unknown decoder kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AedConfig {
    pub input_dim: usize,
    /// Ordinary labels; the vocabulary adds two sentinels.
    pub num_labels: usize,
    pub enc_layers: usize,
    /// Units per direction; encoder states are twice this wide.
    pub enc_width: usize,
    /// Time pooling factor applied after the first encoder layer.
    pub subsample: usize,
    pub emb_dim: usize,
    pub decoder: DecoderKind,
    pub dec_width: usize,
    pub context_k: usize,
    pub att_dim: usize,
    /// Maxout output units; the first readout projection is twice as wide.
    pub readout_units: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for AedConfig {
    fn default() -> Self {
        AedConfig {
            input_dim: 16,
            num_labels: 50,
            enc_layers: 1,
            enc_width: 32,
            subsample: 1,
            emb_dim: 16,
            decoder: DecoderKind::Lstm,
            dec_width: 64,
            context_k: 3,
            att_dim: 32,
            readout_units: 32,
            init_scale: 0.08,
            seed: 1,
        }
    }
}

impl AedConfig {
    pub fn enc_dim(&self) -> usize {
        2 * self.enc_width
    }

    pub fn vocab_size(&self) -> usize {
        self.num_labels + crate::data::NUM_SENTINELS
    }

    fn check(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("num_labels", self.num_labels),
            ("enc_layers", self.enc_layers),
            ("enc_width", self.enc_width),
            ("subsample", self.subsample),
            ("emb_dim", self.emb_dim),
            ("dec_width", self.dec_width),
            ("context_k", self.context_k),
            ("att_dim", self.att_dim),
            ("readout_units", self.readout_units),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
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
enum DecoderIds {
    Lstm(LstmIds),
    Ff { w: ParamId, b: ParamId },
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embedding: ParamId,
    encoder: Vec<[LstmIds; 2]>,
    key_w: ParamId,
    key_b: ParamId,
    query_w: ParamId,
    loc_w: ParamId,
    score_v: ParamId,
    decoder: DecoderIds,
    readout_w1: ParamId,
    readout_b1: ParamId,
    readout_w2: ParamId,
    readout_b2: ParamId,
}

/// Encoder states `h` (`T × D_enc`) and the precomputed attention keys
/// `h·W_key + b_key` (`T × A`).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub h: Tensor,
    pub keys: Tensor,
}

impl EncoderOutput {
    pub fn frames(&self) -> usize {
        self.h.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState {
    pub alpha: Tensor,
    /// Cumulative attention including this step's weights.
    pub beta: Tensor,
    pub context: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecoderState {
    Lstm { s: Tensor, cell: Tensor },
    /// `history` holds the last k input labels, oldest first.
    Ff { s: Tensor, history: Vec<LabelId> },
}

impl DecoderState {
    pub fn output(&self) -> &Tensor {
        match self {
            DecoderState::Lstm { s, .. } | DecoderState::Ff { s, .. } => s,
        }
    }
}

/// Full AED decoding state between label steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AedState {
    pub decoder: DecoderState,
    /// Context of the previous step, `c_{i-1}`.
    pub context: Tensor,
    pub beta: Tensor,
    pub step: usize,
}

/// Encoder handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncVars {
    pub h: Var,
    pub keys: Var,
}

#[derive(Clone, Debug)]
pub enum DecVars {
    Lstm { s: Var, cell: Var },
    Ff { s: Var, history: Vec<LabelId> },
}

impl DecVars {
    pub fn output(&self) -> Var {
        match self {
            DecVars::Lstm { s, .. } | DecVars::Ff { s, .. } => *s,
        }
    }
}

/// Per-step state on a tape (teacher forcing or a single inference step).
#[derive(Clone, Debug)]
pub struct StepVars {
    pub decoder: DecVars,
    pub context: Var,
    pub beta: Var,
}

/// Attention-based encoder-decoder: BiLSTM encoder, additive attention with
/// cumulative location feedback, LSTM or FF decoder, linear-maxout-linear readout.
#[derive(Clone, Debug, PartialEq)]
pub struct AedModel {
    config: AedConfig,
    vocab: Vocabulary,
    params: ParamSet,
    layout: Layout,
}

impl AedModel {
    /// Randomly initialized model, uniform in `[-init_scale, init_scale]`.
    pub fn new(config: AedConfig) -> Result<Self> {
        let mut model = Self::skeleton(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        model.params.init_uniform(&mut rng, model.config.init_scale);
        Ok(model)
    }

    /// Zero-valued parameters with the right names and shapes.
    pub(crate) fn skeleton(config: AedConfig) -> Result<Self> {
        config.check()?;
        let mut p = ParamSet::new();
        let v = config.vocab_size();
        let (e, d_enc, a, u) = (config.emb_dim, config.enc_dim(), config.att_dim, config.readout_units);
        let embedding = p.add("embedding", Tensor::zeros(&[v, e]));
        let mut encoder = Vec::new();
        for l in 0..config.enc_layers {
            let input = if l == 0 { config.input_dim } else { d_enc };
            encoder.push([
                LstmIds::register(&mut p, &format!("enc.{l}.fwd"), input, config.enc_width),
                LstmIds::register(&mut p, &format!("enc.{l}.bwd"), input, config.enc_width),
            ]);
        }
        let key_w = p.add("att.key_w", Tensor::zeros(&[d_enc, a]));
        let key_b = p.add("att.key_b", Tensor::zeros(&[1, a]));
        let query_w = p.add("att.query_w", Tensor::zeros(&[config.dec_width, a]));
        let loc_w = p.add("att.loc_w", Tensor::zeros(&[1, a]));
        let score_v = p.add("att.v", Tensor::zeros(&[a, 1]));
        let decoder = match config.decoder {
            DecoderKind::Lstm => DecoderIds::Lstm(LstmIds::register(&mut p, "dec.lstm", e + d_enc, config.dec_width)),
            DecoderKind::Ff => DecoderIds::Ff {
                w: p.add("dec.ff.w", Tensor::zeros(&[config.context_k * e + d_enc, config.dec_width])),
                b: p.add("dec.ff.b", Tensor::zeros(&[1, config.dec_width])),
            },
        };
        let readout_w1 = p.add("readout.w1", Tensor::zeros(&[config.dec_width + e + d_enc, 2 * u]));
        let readout_b1 = p.add("readout.b1", Tensor::zeros(&[1, 2 * u]));
        let readout_w2 = p.add("readout.w2", Tensor::zeros(&[u, v]));
        let readout_b2 = p.add("readout.b2", Tensor::zeros(&[1, v]));
        Ok(AedModel {
            vocab: Vocabulary::synthetic(config.num_labels),
            config,
            params: p,
            layout: Layout {
                embedding,
                encoder,
                key_w,
                key_b,
                query_w,
                loc_w,
                score_v,
                decoder,
                readout_w1,
                readout_b1,
                readout_w2,
                readout_b2,
            },
        })
    }

    pub(crate) fn with_vocab(mut self, vocab: Vocabulary) -> Result<Self> {
        if vocab.size() != self.config.vocab_size() {
            return Err(Error::Config("vocabulary size does not match model".into()));
        }
        self.vocab = vocab;
        Ok(self)
    }

    pub fn config(&self) -> &AedConfig {
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

    pub fn embedding_id(&self) -> ParamId {
        self.layout.embedding
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    // ---- tape-level building blocks -------------------------------------

    pub fn encode_on(&self, tape: &mut Tape<'_>, b: &Bound, features: Var) -> Result<EncVars> {
        let frames = tape.value(features).rows();
        if tape.value(features).cols() != self.config.input_dim {
            return Err(Error::dim("encode", tape.value(features).shape(), &[self.config.input_dim]));
        }
        let mut input = features;
        for (l, [fwd, bwd]) in self.layout.encoder.iter().enumerate() {
            let steps = tape.value(input).rows();
            let hf = run_direction(tape, b, fwd, input, (0..steps).collect())?;
            let mut hb = run_direction(tape, b, bwd, input, (0..steps).rev().collect())?;
            hb.reverse();
            let rows = hf
                .iter()
                .zip(&hb)
                .map(|(&f, &r)| tape.concat(&[f, r]))
                .collect::<Result<Vec<_>>>()?;
            let rows = if l == 0 && self.config.subsample > 1 {
                pool_rows(tape, &rows, self.config.subsample)?
            } else {
                rows
            };
            input = tape.stack_rows(&rows)?;
        }
        debug_assert_eq!(tape.value(input).rows(), frames.div_ceil(self.config.subsample));
        let kw = tape.matmul(input, b.var(self.layout.key_w))?;
        let keys = tape.add_row(kw, b.var(self.layout.key_b))?;
        Ok(EncVars { h: input, keys })
    }

    /// Additive attention; returns `(alpha, context, beta + alpha)`.
    pub fn attend_on(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        enc: &EncVars,
        query: Var,
        beta: Var,
    ) -> Result<(Var, Var, Var)> {
        let frames = tape.value(enc.h).rows();
        if tape.value(beta).cols() != frames || tape.value(beta).rows() != 1 {
            return Err(Error::dim("attend", tape.value(beta).shape(), &[1, frames]));
        }
        let q = tape.matmul(query, b.var(self.layout.query_w))?;
        let beta_col = tape.transpose(beta);
        let loc = tape.matmul(beta_col, b.var(self.layout.loc_w))?;
        let pre = tape.add_row(enc.keys, q)?;
        let pre = tape.add(pre, loc)?;
        let energy = tape.tanh(pre);
        let scores = tape.matmul(energy, b.var(self.layout.score_v))?;
        let scores = tape.transpose(scores);
        let alpha = tape.softmax(scores);
        let context = tape.matmul(alpha, enc.h)?;
        let beta_next = tape.add(beta, alpha)?;
        Ok((alpha, context, beta_next))
    }

    fn embed(&self, tape: &mut Tape<'_>, b: &Bound, id: LabelId) -> Result<Var> {
        tape.gather(b.var(self.layout.embedding), &[id])
    }

    pub fn decoder_lstm_on(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        s: Var,
        cell: Var,
        y_prev: LabelId,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let DecoderIds::Lstm(ids) = &self.layout.decoder else {
            return Err(Error::Usage("LSTM decoder step on an FF-decoder model".into()));
        };
        let e = self.embed(tape, b, y_prev)?;
        let x = tape.concat(&[e, c_prev])?;
        lstm_cell(tape, x, s, cell, &ids.bind(b))
    }

    pub fn decoder_ff_on(&self, tape: &mut Tape<'_>, b: &Bound, history: &[LabelId], c_prev: Var) -> Result<Var> {
        let DecoderIds::Ff { w, b: bias } = &self.layout.decoder else {
            return Err(Error::Usage("FF decoder step on an LSTM-decoder model".into()));
        };
        if history.len() != self.config.context_k {
            return Err(Error::dim("ff history", &[history.len()], &[self.config.context_k]));
        }
        let mut parts = history
            .iter()
            .map(|&id| self.embed(tape, b, id))
            .collect::<Result<Vec<_>>>()?;
        parts.push(c_prev);
        let x = tape.concat(&parts)?;
        let z = tape.matmul(x, b.var(*w))?;
        let z = tape.add_row(z, b.var(*bias))?;
        Ok(tape.tanh(z))
    }

    /// Log-distribution over the vocabulary from `(s_i, y_{i-1}, c_i)`.
    pub fn readout_on(&self, tape: &mut Tape<'_>, b: &Bound, s: Var, y_prev: LabelId, c: Var) -> Result<Var> {
        let e = self.embed(tape, b, y_prev)?;
        let z = tape.concat(&[s, e, c])?;
        let hidden = tape.matmul(z, b.var(self.layout.readout_w1))?;
        let hidden = tape.add_row(hidden, b.var(self.layout.readout_b1))?;
        let pooled = tape.maxout(hidden)?;
        let logits = tape.matmul(pooled, b.var(self.layout.readout_w2))?;
        let logits = tape.add_row(logits, b.var(self.layout.readout_b2))?;
        Ok(tape.log_softmax(logits))
    }

    /// Advances the decoder state with `y_prev` and the given previous
    /// context; shared by the AED and by context-substituted ILM scoring.
    pub fn advance_decoder_on(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        state: &DecVars,
        y_prev: LabelId,
        c_prev: Var,
    ) -> Result<DecVars> {
        match state {
            DecVars::Lstm { s, cell } => {
                let (s, cell) = self.decoder_lstm_on(tape, b, *s, *cell, y_prev, c_prev)?;
                Ok(DecVars::Lstm { s, cell })
            }
            DecVars::Ff { history, .. } => {
                let history = shift_history(history, y_prev);
                let s = self.decoder_ff_on(tape, b, &history, c_prev)?;
                Ok(DecVars::Ff { s, history })
            }
        }
    }

    /// One full AED label step: decoder, attention, readout.
    pub fn step_on(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        enc: &EncVars,
        state: &StepVars,
        y_prev: LabelId,
    ) -> Result<(StepVars, Var)> {
        let decoder = self.advance_decoder_on(tape, b, &state.decoder, y_prev, state.context)?;
        let s = decoder.output();
        let (_, context, beta) = self.attend_on(tape, b, enc, s, state.beta)?;
        let logp = self.readout_on(tape, b, s, y_prev, context)?;
        Ok((StepVars { decoder, context, beta }, logp))
    }

    pub fn initial_state_on(&self, tape: &mut Tape<'_>, frames: usize) -> StepVars {
        StepVars {
            decoder: self.initial_decoder_on(tape),
            context: tape.constant(Tensor::zeros(&[1, self.config.enc_dim()])),
            beta: tape.constant(Tensor::zeros(&[1, frames])),
        }
    }

    pub fn initial_decoder_on(&self, tape: &mut Tape<'_>) -> DecVars {
        let s = tape.constant(Tensor::zeros(&[1, self.config.dec_width]));
        match self.config.decoder {
            DecoderKind::Lstm => DecVars::Lstm {
                s,
                cell: tape.constant(Tensor::zeros(&[1, self.config.dec_width])),
            },
            DecoderKind::Ff => DecVars::Ff {
                s,
                history: vec![BOS; self.config.context_k],
            },
        }
    }

    pub fn check_labels(&self, labels: &[LabelId]) -> Result<()> {
        labels.iter().try_for_each(|&l| self.vocab.check_label(l))
    }

    /// Teacher-forced per-step log-distributions, stacked `(N+1) × V`, with
    /// targets `labels ++ [EOS]`.
    pub fn teacher_forced_on(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        features: Var,
        labels: &[LabelId],
    ) -> Result<(Var, Vec<LabelId>)> {
        self.check_labels(labels)?;
        let enc = self.encode_on(tape, b, features)?;
        let frames = tape.value(enc.h).rows();
        let mut state = self.initial_state_on(tape, frames);
        let mut rows = Vec::with_capacity(labels.len() + 1);
        for &y_prev in std::iter::once(&BOS).chain(labels) {
            let (next, logp) = self.step_on(tape, b, &enc, &state, y_prev)?;
            rows.push(logp);
            state = next;
        }
        let stacked = tape.stack_rows(&rows)?;
        Ok((stacked, targets_with_eos(labels)))
    }

    // ---- owned-tensor API --------------------------------------------------

    pub fn encode(&self, features: &Tensor) -> Result<EncoderOutput> {
        if features.rows() == 0 {
            return Err(Error::Input("empty feature sequence".into()));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.leaf_ref(features, false);
        let enc = self.encode_on(&mut tape, &b, x)?;
        let out = EncoderOutput {
            h: tape.value(enc.h).clone(),
            keys: tape.value(enc.keys).clone(),
        };
        out.h.validate()?;
        Ok(out)
    }

    pub fn initial_state(&self, enc: &EncoderOutput) -> AedState {
        let s = Tensor::zeros(&[1, self.config.dec_width]);
        let decoder = match self.config.decoder {
            DecoderKind::Lstm => DecoderState::Lstm {
                cell: s.clone(),
                s,
            },
            DecoderKind::Ff => DecoderState::Ff {
                s,
                history: vec![BOS; self.config.context_k],
            },
        };
        AedState {
            decoder,
            context: Tensor::zeros(&[1, self.config.enc_dim()]),
            beta: Tensor::zeros(&[1, enc.frames()]),
            step: 0,
        }
    }

    pub fn attend(&self, s: &Tensor, beta: &Tensor, enc: &EncoderOutput) -> Result<AttentionState> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let ev = EncVars {
            h: tape.leaf_ref(&enc.h, false),
            keys: tape.leaf_ref(&enc.keys, false),
        };
        let s = tape.leaf_ref(s, false);
        let beta = tape.leaf_ref(beta, false);
        let (alpha, context, beta) = self.attend_on(&mut tape, &b, &ev, s, beta)?;
        Ok(AttentionState {
            alpha: tape.value(alpha).clone(),
            beta: tape.value(beta).clone(),
            context: tape.value(context).clone(),
        })
    }

    pub fn decoder_step_lstm(&self, state: &DecoderState, y_prev: LabelId, c_prev: &Tensor) -> Result<DecoderState> {
        let DecoderState::Lstm { s, cell } = state else {
            return Err(Error::Usage("LSTM decoder step given an FF state".into()));
        };
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let (s, cell, c) = (
            tape.leaf_ref(s, false),
            tape.leaf_ref(cell, false),
            tape.leaf_ref(c_prev, false),
        );
        let (s, cell) = self.decoder_lstm_on(&mut tape, &b, s, cell, y_prev, c)?;
        Ok(DecoderState::Lstm {
            s: tape.value(s).clone(),
            cell: tape.value(cell).clone(),
        })
    }

    /// FF decoder state from the last k labels (oldest first) and `c_{i-1}`.
    pub fn decoder_step_ff(&self, history: &[LabelId], c_prev: &Tensor) -> Result<DecoderState> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let c = tape.leaf_ref(c_prev, false);
        let s = self.decoder_ff_on(&mut tape, &b, history, c)?;
        Ok(DecoderState::Ff {
            s: tape.value(s).clone(),
            history: history.to_vec(),
        })
    }

    pub fn readout(&self, s: &Tensor, y_prev: LabelId, c: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let (s, c) = (tape.leaf_ref(s, false), tape.leaf_ref(c, false));
        let logp = self.readout_on(&mut tape, &b, s, y_prev, c)?;
        Ok(tape.value(logp).data().to_vec())
    }

    /// One inference step: consumes `y_prev`, returns the next state and the
    /// log-distribution of the next label.
    pub fn step(&self, enc: &EncoderOutput, state: &AedState, y_prev: LabelId) -> Result<(AedState, Vec<f64>)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let ev = EncVars {
            h: tape.leaf_ref(&enc.h, false),
            keys: tape.leaf_ref(&enc.keys, false),
        };
        let sv = StepVars {
            decoder: decoder_state_on(&mut tape, &state.decoder),
            context: tape.leaf_ref(&state.context, false),
            beta: tape.leaf_ref(&state.beta, false),
        };
        let (next, logp) = self.step_on(&mut tape, &b, &ev, &sv, y_prev)?;
        let out = AedState {
            decoder: decoder_state_from(&tape, &next.decoder),
            context: tape.value(next.context).clone(),
            beta: tape.value(next.beta).clone(),
            step: state.step + 1,
        };
        Ok((out, tape.value(logp).data().to_vec()))
    }

    /// Teacher-forced `log P(labels, EOS | features)`.
    pub fn sequence_logprob(&self, features: &Tensor, labels: &[LabelId]) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.leaf_ref(features, false);
        let (rows, targets) = self.teacher_forced_on(&mut tape, &b, x, labels)?;
        Ok(picked_sum(tape.value(rows), &targets))
    }

    pub fn utterance_logprob(&self, utt: &Utterance) -> Result<f64> {
        self.sequence_logprob(&utt.features, &utt.labels)
    }
}

impl Trainable for AedModel {
    type Example = Utterance;

    fn trainable_params(&self) -> &ParamSet {
        &self.params
    }

    fn trainable_params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss(&self, utt: &Utterance) -> Result<ExampleLoss> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, true);
        let x = tape.leaf_ref(&utt.features, false);
        let (rows, targets) = self.teacher_forced_on(&mut tape, &b, x, &utt.labels)?;
        let mean = tape.cross_entropy(rows, &targets)?;
        let total = tape.scale(mean, targets.len() as f64);
        tape.backward(total)?;
        Ok(ExampleLoss {
            nll: tape.value(total).item(),
            tokens: targets.len(),
            grads: b.gradients(&tape),
        })
    }

    fn example_nll(&self, utt: &Utterance) -> Result<(f64, usize)> {
        let lp = self.utterance_logprob(utt)?;
        Ok((-lp, utt.labels.len() + 1))
    }
}

fn run_direction(
    tape: &mut Tape<'_>,
    b: &Bound,
    ids: &LstmIds,
    input: Var,
    order: Vec<usize>,
) -> Result<Vec<Var>> {
    let w = ids.bind(b);
    let xw = tape.matmul(input, w.w_x)?;
    let projected = tape.add_row(xw, w.b)?;
    let width = tape.value(w.w_h).rows();
    let mut h = tape.constant(Tensor::zeros(&[1, width]));
    let mut c = tape.constant(Tensor::zeros(&[1, width]));
    let mut out = Vec::with_capacity(order.len());
    for t in order {
        let row = tape.row(projected, t)?;
        (h, c) = lstm_cell_projected(tape, row, h, c, w.w_h)?;
        out.push(h);
    }
    Ok(out)
}

/// Mean over consecutive groups of `factor` rows; the last group may be short.
fn pool_rows(tape: &mut Tape<'_>, rows: &[Var], factor: usize) -> Result<Vec<Var>> {
    rows.chunks(factor)
        .map(|group| {
            let stacked = tape.stack_rows(group)?;
            Ok(tape.mean_rows(stacked))
        })
        .collect()
}

pub(crate) fn shift_history(history: &[LabelId], y_prev: LabelId) -> Vec<LabelId> {
    let mut next = history[1..].to_vec();
    next.push(y_prev);
    next
}

pub(crate) fn targets_with_eos(labels: &[LabelId]) -> Vec<LabelId> {
    let mut t = labels.to_vec();
    t.push(EOS);
    t
}

pub(crate) fn picked_sum(rows: &Tensor, targets: &[LabelId]) -> f64 {
    targets.iter().enumerate().map(|(r, &t)| rows.get(r, t)).sum()
}

pub(crate) fn decoder_state_on<'a>(tape: &mut Tape<'a>, state: &'a DecoderState) -> DecVars {
    match state {
        DecoderState::Lstm { s, cell } => DecVars::Lstm {
            s: tape.leaf_ref(s, false),
            cell: tape.leaf_ref(cell, false),
        },
        DecoderState::Ff { s, history } => DecVars::Ff {
            s: tape.leaf_ref(s, false),
            history: history.clone(),
        },
    }
}

pub(crate) fn decoder_state_from(tape: &Tape<'_>, vars: &DecVars) -> DecoderState {
    match vars {
        DecVars::Lstm { s, cell } => DecoderState::Lstm {
            s: tape.value(*s).clone(),
            cell: tape.value(*cell).clone(),
        },
        DecVars::Ff { s, history } => DecoderState::Ff {
            s: tape.value(*s).clone(),
            history: history.clone(),
        },
    }
}
