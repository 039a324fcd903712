use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::epoch_batches;
use crate::error::{Error, Result};
use crate::numcore::{Adam, AdamConfig, Gradients, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            grad_clip: 5.0,
            seed: 1,
        }
    }
}

/// Loss of one example: summed token NLL, its token count, and the gradient
/// of the summed NLL.
pub struct ExampleLoss {
    pub nll: f64,
    pub tokens: usize,
    pub grads: Gradients,
}

/// A model trained by minimizing token-averaged cross-entropy.
pub trait Trainable: Sync {
    type Example: Sync;

    fn trainable_params(&self) -> &ParamSet;
    fn trainable_params_mut(&mut self) -> &mut ParamSet;
    fn example_loss(&self, example: &Self::Example) -> Result<ExampleLoss>;

    /// Summed NLL and token count, without gradients.
    fn example_nll(&self, example: &Self::Example) -> Result<(f64, usize)> {
        self.example_loss(example).map(|r| (r.nll, r.tokens))
    }
}

/// Mean training cross-entropy per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub epoch_loss: Vec<f64>,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Mini-batch Adam. Per-example gradients are computed in parallel and
/// reduced in batch order, so results do not depend on the worker count.
pub fn train<M: Trainable>(model: &mut M, examples: &[M::Example], config: &TrainConfig) -> Result<LossCurve> {
    if examples.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    let mut adam = Adam::new(config.adam, model.trainable_params());
    let mut curve = LossCurve::default();
    for epoch in 0..config.epochs {
        let (mut nll, mut tokens) = (0.0, 0usize);
        for batch in epoch_batches(examples.len(), config.batch_size, config.seed, epoch)? {
            let model_ref = &*model;
            let results: Vec<Result<ExampleLoss>> = batch
                .par_iter()
                .map(|&i| model_ref.example_loss(&examples[i]))
                .collect();
            let mut grads = Gradients::zeros_like(model.trainable_params());
            let mut batch_tokens = 0;
            let mut parts = Vec::with_capacity(results.len());
            for r in results {
                let r = r.map_err(|e| Error::Training {
                    epoch,
                    message: e.to_string(),
                })?;
                batch_tokens += r.tokens;
                nll += r.nll;
                parts.push(r);
            }
            tokens += batch_tokens;
            for r in &parts {
                grads.accumulate(&r.grads, 1.0 / batch_tokens.max(1) as f64);
            }
            if !nll.is_finite() || !grads.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite loss or gradient".into(),
                });
            }
            if config.grad_clip > 0.0 {
                let norm = grads.norm();
                if norm > config.grad_clip {
                    grads.scale(config.grad_clip / norm);
                }
            }
            adam.step(model.trainable_params_mut(), &grads);
        }
        let mean = nll / tokens.max(1) as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        curve.epoch_loss.push(mean);
    }
    Ok(curve)
}

/// Mean per-token cross-entropy without updating anything.
pub fn evaluate<M: Trainable>(model: &M, examples: &[M::Example]) -> Result<f64> {
    let (nll, tokens) = examples
        .par_iter()
        .map(|e| model.example_nll(e))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0usize), |(a, n), (b, m)| (a + b, n + m));
    Ok(nll / tokens.max(1) as f64)
}
