use std::collections::HashMap;

use super::config::{FusionConfig, Method};
use crate::data::{LabelId, BOS};
use crate::error::{Error, Result};
use crate::ilm::{ilm_initial_state, ilm_step, ContextSource, IlmState, ResolvedSource};
use crate::model::{AedModel, AedState, EncoderOutput, LmState, LstmLm};
use crate::numcore::Tensor;

/// Models available to the decoder. Which ones are required depends on the
/// method: SF needs `lm`, DR also `dr_lm`, the ILM methods also `ilm`.
#[derive(Clone, Copy, Debug)]
pub struct Models<'a> {
    pub aed: &'a AedModel,
    pub lm: Option<&'a LstmLm>,
    pub dr_lm: Option<&'a LstmLm>,
    pub ilm: Option<&'a ContextSource>,
}

impl<'a> Models<'a> {
    pub fn aed_only(aed: &'a AedModel) -> Self {
        Models {
            aed,
            lm: None,
            dr_lm: None,
            ilm: None,
        }
    }

    /// Checks that `method` has what it needs and that vocabularies agree.
    pub fn check(&self, method: Method) -> Result<()> {
        let v = self.aed.vocab().size();
        let check_lm = |lm: Option<&LstmLm>, what: &str| -> Result<()> {
            let lm = lm.ok_or_else(|| Error::Config(format!("method {method} needs {what}")))?;
            if lm.vocab().size() != v {
                return Err(Error::Config(format!(
                    "{what} has {} labels, AED has {v}",
                    lm.vocab().size()
                )));
            }
            Ok(())
        };
        if method.uses_lm() {
            check_lm(self.lm, "an external LM")?;
        }
        if method == Method::Dr {
            check_lm(self.dr_lm, "a decoder-like LM")?;
        }
        if method.is_ilm() {
            let src = self
                .ilm
                .ok_or_else(|| Error::Config(format!("method {method} needs an ILM estimator")))?;
            if src.method() != method.name() {
                return Err(Error::Config(format!(
                    "method {method} given a {} estimator",
                    src.method()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum PriorState {
    None,
    Lm(LmState),
    Ilm(IlmState),
}

/// Decoder states after a label prefix, and each model's distribution over
/// the next label.
#[derive(Clone, Debug)]
pub struct Entry {
    aed_state: AedState,
    lm_state: Option<LmState>,
    prior_state: PriorState,
    pub aed: Vec<f64>,
    pub lm: Option<Vec<f64>>,
    pub prior: Option<Vec<f64>>,
}

/// Per-utterance scorer with a prefix cache, reusable across fusion scales.
pub struct Scorer<'a> {
    models: Models<'a>,
    method: Method,
    enc: EncoderOutput,
    ilm: Option<ResolvedSource<'a>>,
    cache: HashMap<Vec<LabelId>, Entry>,
}

impl<'a> Scorer<'a> {
    pub fn new(models: Models<'a>, method: Method, features: &Tensor) -> Result<Self> {
        models.check(method)?;
        let enc = models.aed.encode(features)?;
        let ilm = match (method.is_ilm(), models.ilm) {
            (true, Some(src)) => Some(src.resolve(models.aed, Some(&enc))?),
            _ => None,
        };
        Ok(Scorer {
            models,
            method,
            enc,
            ilm,
            cache: HashMap::new(),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn vocab_size(&self) -> usize {
        self.models.aed.vocab().size()
    }

    pub fn cached_prefixes(&self) -> usize {
        self.cache.len()
    }

    fn advance(&self, aed_state: &AedState, lm: Option<&LmState>, prior: &PriorState, y: LabelId) -> Result<Entry> {
        let (aed_state, aed) = self.models.aed.step(&self.enc, aed_state, y)?;
        let (lm_state, lm) = match (self.models.lm.filter(|_| self.method.uses_lm()), lm) {
            (Some(model), Some(state)) => {
                let (s, d) = model.step(state, y)?;
                (Some(s), Some(d))
            }
            _ => (None, None),
        };
        let (prior_state, prior) = match prior {
            PriorState::None => (PriorState::None, None),
            PriorState::Lm(state) => {
                let (s, d) = self.models.dr_lm.expect("checked").step(state, y)?;
                (PriorState::Lm(s), Some(d))
            }
            PriorState::Ilm(state) => {
                let src = self.ilm.as_ref().expect("resolved with the state");
                let (s, d) = ilm_step(self.models.aed, src, state, y)?;
                (PriorState::Ilm(s), Some(d))
            }
        };
        Ok(Entry {
            aed_state,
            lm_state,
            prior_state,
            aed,
            lm,
            prior,
        })
    }

    fn root(&self) -> Result<Entry> {
        let lm = self
            .models
            .lm
            .filter(|_| self.method.uses_lm())
            .map(|m| m.initial_state());
        let prior = match self.method {
            Method::Dr => PriorState::Lm(self.models.dr_lm.expect("checked").initial_state()),
            m if m.is_ilm() => PriorState::Ilm(ilm_initial_state(self.models.aed, self.ilm.as_ref().expect("checked"))?),
            _ => PriorState::None,
        };
        self.advance(&self.models.aed.initial_state(&self.enc), lm.as_ref(), &prior, BOS)
    }

    /// Distributions for the label following `prefix` (which excludes BOS).
    pub fn entry(&mut self, prefix: &[LabelId]) -> Result<&Entry> {
        if !self.cache.contains_key(prefix) {
            let entry = match prefix.split_last() {
                None => self.root()?,
                Some((&last, head)) => {
                    self.entry(head)?;
                    let parent = &self.cache[head];
                    self.advance(&parent.aed_state, parent.lm_state.as_ref(), &parent.prior_state, last)?
                }
            };
            self.cache.insert(prefix.to_vec(), entry);
        }
        Ok(&self.cache[prefix])
    }
}

/// Per-label fused scores `aed + λ1·lm − λ2·prior`. Zero-scaled terms are
/// skipped so that the reduced methods are bitwise identical to the full one.
pub fn fused_step_scores(entry: &Entry, config: &FusionConfig) -> Vec<f64> {
    let mut s = entry.aed.clone();
    if config.lambda1 != 0.0 {
        if let Some(lm) = &entry.lm {
            s.iter_mut().zip(lm).for_each(|(x, l)| *x += config.lambda1 * l);
        }
    }
    if config.lambda2 != 0.0 {
        if let Some(p) = &entry.prior {
            s.iter_mut().zip(p).for_each(|(x, l)| *x -= config.lambda2 * l);
        }
    }
    s
}
