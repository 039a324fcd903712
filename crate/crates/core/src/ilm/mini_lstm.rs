use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::source::{ilm_teacher_forced_on, ContextSource, Estimator};
use crate::data::{LabelId, Sentence};
use crate::error::{Error, Result};
use crate::model::{train, AedModel, ExampleLoss, LossCurve, TrainConfig, Trainable};
use crate::numcore::{lstm_cell, AdamConfig, Bound, LstmVars, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiniLstmConfig {
    pub width: usize,
    /// Fraction of training utterances used, sampled with `seed`.
    pub subset_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MiniLstmConfig {
    fn default() -> Self {
        MiniLstmConfig {
            width: 50,
            subset_fraction: 0.1,
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-3,
            init_scale: 0.08,
            seed: 1,
        }
    }
}

/// Small LSTM over AED label embeddings whose projected output replaces the
/// attention context.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniLstm {
    params: ParamSet,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl MiniLstm {
    pub fn new(input_dim: usize, width: usize, context_dim: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || width == 0 || context_dim == 0 {
            return Err(Error::Config("mini-LSTM dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        let w_x = params.add("mini.lstm.w_x", Tensor::zeros(&[input_dim, 4 * width]));
        let w_h = params.add("mini.lstm.w_h", Tensor::zeros(&[width, 4 * width]));
        let b = params.add("mini.lstm.b", Tensor::zeros(&[1, 4 * width]));
        let proj_w = params.add("mini.proj.w", Tensor::zeros(&[width, context_dim]));
        let proj_b = params.add("mini.proj.b", Tensor::zeros(&[1, context_dim]));
        params.init_uniform(&mut ChaCha8Rng::seed_from_u64(seed), init_scale);
        Ok(MiniLstm {
            params,
            w_x,
            w_h,
            b,
            proj_w,
            proj_b,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn width(&self) -> usize {
        self.params.get(self.w_h).rows()
    }

    pub fn input_dim(&self) -> usize {
        self.params.get(self.w_x).rows()
    }

    pub fn context_dim(&self) -> usize {
        self.params.get(self.proj_w).cols()
    }

    pub(crate) fn initial_on(&self, tape: &mut Tape<'_>) -> (Var, Var) {
        let w = self.width();
        (tape.constant(Tensor::zeros(&[1, w])), tape.constant(Tensor::zeros(&[1, w])))
    }

    pub(crate) fn project_on(&self, tape: &mut Tape<'_>, b: &Bound, h: Var) -> Result<Var> {
        let z = tape.matmul(h, b.var(self.proj_w))?;
        tape.add_row(z, b.var(self.proj_b))
    }

    /// Advances on `y_prev` and returns `(h, cell, ĉ)`.
    pub(crate) fn step_on(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        embedding: Var,
        y_prev: LabelId,
        h: Var,
        cell: Var,
    ) -> Result<(Var, Var, Var)> {
        let x = tape.gather(embedding, &[y_prev])?;
        let w = LstmVars {
            w_x: b.var(self.w_x),
            w_h: b.var(self.w_h),
            b: b.var(self.b),
        };
        let (h, cell) = lstm_cell(tape, x, h, cell, &w)?;
        let c = self.project_on(tape, b, h)?;
        Ok((h, cell, c))
    }
}

/// Mini-LSTM training objective: label cross-entropy of the context-substituted
/// decoder, with the AED bound as constants.
#[derive(Clone, Debug)]
pub struct MiniLstmObjective<'a> {
    pub aed: &'a AedModel,
    pub source: ContextSource,
}

impl MiniLstmObjective<'_> {
    fn mini(&self) -> &MiniLstm {
        match &self.source.estimator {
            Estimator::MiniLstm(m) => m,
            _ => unreachable!("objective always wraps a mini-LSTM"),
        }
    }
}

impl Trainable for MiniLstmObjective<'_> {
    type Example = Sentence;

    fn trainable_params(&self) -> &ParamSet {
        self.mini().params()
    }

    fn trainable_params_mut(&mut self) -> &mut ParamSet {
        match &mut self.source.estimator {
            Estimator::MiniLstm(m) => m.params_mut(),
            _ => unreachable!("objective always wraps a mini-LSTM"),
        }
    }

    fn example_loss(&self, s: &Sentence) -> Result<ExampleLoss> {
        let src = self.source.resolve(self.aed, None)?;
        let mini = self.mini();
        let mut tape = Tape::new();
        let aed_b = self.aed.bind(&mut tape, false);
        let mini_b = mini.params().bind(&mut tape, true);
        let (rows, targets) = ilm_teacher_forced_on(&mut tape, self.aed, &aed_b, Some(&mini_b), &src, &s.labels)?;
        let mean = tape.cross_entropy(rows, &targets)?;
        let total = tape.scale(mean, targets.len() as f64);
        tape.backward(total)?;
        Ok(ExampleLoss {
            nll: tape.value(total).item(),
            tokens: targets.len(),
            grads: mini_b.gradients(&tape),
        })
    }
}

/// Seeded sample of `fraction` of `len` indices (at least one), in ascending order.
pub fn sample_subset(len: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Input("cannot sample from an empty corpus".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subset fraction {fraction} outside (0, 1]")));
    }
    let n = ((len as f64 * fraction).round() as usize).clamp(1, len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Trains a Mini-LSTM with the AED frozen; fails if any AED parameter changed.
pub fn train_mini_lstm(
    model: &AedModel,
    subset: &[Sentence],
    config: &MiniLstmConfig,
    zero_at_step_zero: bool,
) -> Result<(ContextSource, LossCurve)> {
    if subset.is_empty() {
        return Err(Error::Input("empty mini-LSTM training subset".into()));
    }
    let before = model.params().checksum();
    let mini = MiniLstm::new(
        model.config().emb_dim,
        config.width,
        model.config().enc_dim(),
        config.init_scale,
        config.seed,
    )?;
    let mut objective = MiniLstmObjective {
        aed: model,
        source: ContextSource {
            estimator: Estimator::MiniLstm(mini),
            zero_at_step_zero,
        },
    };
    let train_cfg = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        adam: AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        seed: config.seed,
        ..TrainConfig::default()
    };
    let curve = train(&mut objective, subset, &train_cfg)?;
    if model.params().checksum() != before {
        return Err(Error::Invariant("AED parameters changed during mini-LSTM training".into()));
    }
    Ok((objective.source, curve))
}
