use crate::data::LabelId;
use crate::error::{Error, Result};
use crate::model::{AedModel, DecVars, DecoderState, EncoderOutput};
use crate::numcore::{Bound, Tape, Tensor, Var};

use super::mini_lstm::MiniLstm;

/// How the attention context is replaced when scoring with the ILM.
#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    Zero,
    /// Training-corpus average of attention contexts.
    GlobalContextAvg(Tensor),
    /// Training-corpus average of encoder states.
    GlobalEncoderAvg(Tensor),
    /// Average encoder state of the current utterance; needs its features.
    SeqEncoderAvg,
    MiniLstm(MiniLstm),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextSource {
    pub estimator: Estimator,
    /// Feed `ĉ_0 = 0` to the first decoder step regardless of estimator.
    pub zero_at_step_zero: bool,
}

impl ContextSource {
    pub fn new(estimator: Estimator) -> Self {
        ContextSource {
            estimator,
            zero_at_step_zero: true,
        }
    }

    pub fn method(&self) -> &'static str {
        match self.estimator {
            Estimator::Zero => "zero",
            Estimator::GlobalContextAvg(_) => "ed_c",
            Estimator::GlobalEncoderAvg(_) => "ed_h",
            Estimator::SeqEncoderAvg => "ex_h",
            Estimator::MiniLstm(_) => "mini_lstm",
        }
    }

    /// True when ILM scores depend on the utterance's features.
    pub fn uses_features(&self) -> bool {
        matches!(self.estimator, Estimator::SeqEncoderAvg)
    }

    /// Binds the source to one utterance. `enc` is only consulted by
    /// [`Estimator::SeqEncoderAvg`].
    pub fn resolve<'a>(&'a self, model: &AedModel, enc: Option<&EncoderOutput>) -> Result<ResolvedSource<'a>> {
        let d_enc = model.config().enc_dim();
        let check = |t: &Tensor| {
            if t.shape() != [1, d_enc] {
                return Err(Error::dim("context estimate", t.shape(), &[1, d_enc]));
            }
            Ok(())
        };
        let kind = match &self.estimator {
            Estimator::Zero => Resolved::Fixed(Tensor::zeros(&[1, d_enc])),
            Estimator::GlobalContextAvg(c) | Estimator::GlobalEncoderAvg(c) => {
                check(c)?;
                Resolved::Fixed(c.clone())
            }
            Estimator::SeqEncoderAvg => {
                let enc = enc.ok_or_else(|| {
                    Error::Usage("the sequence encoder average needs the utterance's encoder output".into())
                })?;
                Resolved::Fixed(super::stats::seq_encoder_avg(enc))
            }
            Estimator::MiniLstm(m) => {
                if m.context_dim() != d_enc || m.input_dim() != model.config().emb_dim {
                    return Err(Error::dim(
                        "mini-LSTM",
                        &[m.input_dim(), m.context_dim()],
                        &[model.config().emb_dim, d_enc],
                    ));
                }
                Resolved::Mini(m)
            }
        };
        Ok(ResolvedSource {
            kind,
            zero_at_step_zero: self.zero_at_step_zero,
        })
    }
}

#[derive(Clone, Debug)]
enum Resolved<'a> {
    Fixed(Tensor),
    Mini(&'a MiniLstm),
}

/// A context source bound to one utterance.
#[derive(Clone, Debug)]
pub struct ResolvedSource<'a> {
    kind: Resolved<'a>,
    zero_at_step_zero: bool,
}

impl ResolvedSource<'_> {
    pub(crate) fn mini(&self) -> Option<&MiniLstm> {
        match &self.kind {
            Resolved::Mini(m) => Some(m),
            Resolved::Fixed(_) => None,
        }
    }
}

/// ILM decoding state between label steps.
#[derive(Clone, Debug, PartialEq)]
pub struct IlmState {
    pub decoder: DecoderState,
    /// `ĉ_{i-1}`.
    pub context: Tensor,
    /// Mini-LSTM `(h, cell)` when that estimator is used.
    pub mini: Option<(Tensor, Tensor)>,
    pub step: usize,
}

/// Tape handles mirroring [`IlmState`].
#[derive(Clone, Debug)]
pub struct IlmVars {
    pub decoder: DecVars,
    pub context: Var,
    pub mini: Option<(Var, Var)>,
}

/// Initial ILM state on a tape. `mini_b` must be given for a Mini-LSTM source.
pub fn ilm_initial_on(
    tape: &mut Tape<'_>,
    model: &AedModel,
    src: &ResolvedSource<'_>,
    mini_b: Option<&Bound>,
) -> Result<IlmVars> {
    let decoder = model.initial_decoder_on(tape);
    let d_enc = model.config().enc_dim();
    let (context, mini) = match &src.kind {
        Resolved::Fixed(c) => {
            let c0 = if src.zero_at_step_zero {
                Tensor::zeros(&[1, d_enc])
            } else {
                c.clone()
            };
            (tape.constant(c0), None)
        }
        Resolved::Mini(m) => {
            let b = mini_b.ok_or_else(|| Error::Usage("mini-LSTM parameters not bound".into()))?;
            let (h, cell) = m.initial_on(tape);
            let context = if src.zero_at_step_zero {
                tape.constant(Tensor::zeros(&[1, d_enc]))
            } else {
                m.project_on(tape, b, h)?
            };
            (context, Some((h, cell)))
        }
    };
    Ok(IlmVars {
        decoder,
        context,
        mini,
    })
}

/// One ILM step: the AED decoder and readout with every context replaced by
/// `ĉ`. The encoder is never touched.
pub fn ilm_step_on(
    tape: &mut Tape<'_>,
    model: &AedModel,
    aed_b: &Bound,
    mini_b: Option<&Bound>,
    src: &ResolvedSource<'_>,
    state: &IlmVars,
    y_prev: LabelId,
) -> Result<(IlmVars, Var)> {
    let decoder = model.advance_decoder_on(tape, aed_b, &state.decoder, y_prev, state.context)?;
    let (context, mini) = match &src.kind {
        Resolved::Fixed(c) => (tape.constant(c.clone()), None),
        Resolved::Mini(m) => {
            let b = mini_b.ok_or_else(|| Error::Usage("mini-LSTM parameters not bound".into()))?;
            let (h, cell) = state
                .mini
                .ok_or_else(|| Error::Usage("ILM state lacks mini-LSTM memory".into()))?;
            let embedding = aed_b.var(model.embedding_id());
            let (h, cell, c) = m.step_on(tape, b, embedding, y_prev, h, cell)?;
            (c, Some((h, cell)))
        }
    };
    let logp = model.readout_on(tape, aed_b, decoder.output(), y_prev, context)?;
    Ok((
        IlmVars {
            decoder,
            context,
            mini,
        },
        logp,
    ))
}

pub fn ilm_initial_state(model: &AedModel, src: &ResolvedSource<'_>) -> Result<IlmState> {
    let mut tape = Tape::new();
    let mini_b = src.mini().map(|m| m.params().bind(&mut tape, false));
    let vars = ilm_initial_on(&mut tape, model, src, mini_b.as_ref())?;
    Ok(state_from(&tape, &vars, 0))
}

/// Consumes `y_prev`; returns the next state and the ILM log-distribution.
pub fn ilm_step(
    model: &AedModel,
    src: &ResolvedSource<'_>,
    state: &IlmState,
    y_prev: LabelId,
) -> Result<(IlmState, Vec<f64>)> {
    let mut tape = Tape::new();
    let aed_b = model.bind(&mut tape, false);
    let mini_b = src.mini().map(|m| m.params().bind(&mut tape, false));
    let vars = IlmVars {
        decoder: crate::model::decoder_state_on(&mut tape, &state.decoder),
        context: tape.leaf_ref(&state.context, false),
        mini: state
            .mini
            .as_ref()
            .map(|(h, c)| (tape.leaf_ref(h, false), tape.leaf_ref(c, false))),
    };
    let (next, logp) = ilm_step_on(&mut tape, model, &aed_b, mini_b.as_ref(), src, &vars, y_prev)?;
    Ok((state_from(&tape, &next, state.step + 1), tape.value(logp).data().to_vec()))
}

/// Teacher-forced ILM log-distributions `(N+1) × V` on a tape.
pub fn ilm_teacher_forced_on(
    tape: &mut Tape<'_>,
    model: &AedModel,
    aed_b: &Bound,
    mini_b: Option<&Bound>,
    src: &ResolvedSource<'_>,
    labels: &[LabelId],
) -> Result<(Var, Vec<LabelId>)> {
    model.check_labels(labels)?;
    let mut state = ilm_initial_on(tape, model, src, mini_b)?;
    let mut rows = Vec::with_capacity(labels.len() + 1);
    for &y_prev in std::iter::once(&crate::data::BOS).chain(labels) {
        let (next, logp) = ilm_step_on(tape, model, aed_b, mini_b, src, &state, y_prev)?;
        rows.push(logp);
        state = next;
    }
    Ok((tape.stack_rows(&rows)?, crate::model::targets_with_eos(labels)))
}

/// `log P_ILM(labels, EOS)`.
pub fn ilm_sequence_logprob(model: &AedModel, src: &ResolvedSource<'_>, labels: &[LabelId]) -> Result<f64> {
    let mut tape = Tape::new();
    let aed_b = model.bind(&mut tape, false);
    let mini_b = src.mini().map(|m| m.params().bind(&mut tape, false));
    let (rows, targets) = ilm_teacher_forced_on(&mut tape, model, &aed_b, mini_b.as_ref(), src, labels)?;
    Ok(crate::model::picked_sum(tape.value(rows), &targets))
}

fn state_from(tape: &Tape<'_>, vars: &IlmVars, step: usize) -> IlmState {
    IlmState {
        decoder: crate::model::decoder_state_from(tape, &vars.decoder),
        context: tape.value(vars.context).clone(),
        mini: vars
            .mini
            .map(|(h, c)| (tape.value(h).clone(), tape.value(c).clone())),
        step,
    }
}
