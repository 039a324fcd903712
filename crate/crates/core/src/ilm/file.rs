use std::path::Path;

use super::mini_lstm::MiniLstm;
use super::source::{ContextSource, Estimator};
use crate::error::{Error, Result};
use crate::model::{AedModel, Container};

/// Writes an estimator tagged with its method and the AED's content hash.
pub fn save_estimator(source: &ContextSource, aed_hash: &str, path: &Path) -> Result<()> {
    let mut c = Container::default();
    c.push("kind", "estimator");
    c.push("method", source.method());
    c.push("aed_hash", aed_hash);
    c.push("zero_at_step_zero", source.zero_at_step_zero.to_string());
    match &source.estimator {
        Estimator::Zero | Estimator::SeqEncoderAvg => {}
        Estimator::GlobalContextAvg(t) | Estimator::GlobalEncoderAvg(t) => c.tensors.push(("c_hat".into(), t.clone())),
        Estimator::MiniLstm(m) => c.push_params(m.params()),
    }
    c.save(path)
}

/// Loads an estimator; its recorded AED hash must match `model`.
pub fn load_estimator(path: &Path, model: &AedModel) -> Result<ContextSource> {
    let c = Container::load(path)?;
    if c.get("kind") != Some("estimator") {
        return Err(Error::Config(format!("{} is not an estimator file", path.display())));
    }
    let expected = model.content_hash();
    let recorded = c.require("aed_hash")?;
    if recorded != expected {
        return Err(Error::Config(format!(
            "estimator {} was computed for AED {recorded}, not {expected}",
            path.display()
        )));
    }
    let zero_at_step_zero = match c.require("zero_at_step_zero")? {
        "true" => true,
        "false" => false,
        other => return Err(Error::Config(format!("bad zero_at_step_zero {other:?}"))),
    };
    let c_hat = || {
        c.tensors
            .iter()
            .find(|(n, _)| n == "c_hat")
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Config("estimator file lacks c_hat".into()))
    };
    let estimator = match c.require("method")? {
        "zero" => Estimator::Zero,
        "ed_c" => Estimator::GlobalContextAvg(c_hat()?),
        "ed_h" => Estimator::GlobalEncoderAvg(c_hat()?),
        "ex_h" => Estimator::SeqEncoderAvg,
        "mini_lstm" => {
            let width = c
                .tensors
                .iter()
                .find(|(n, _)| n == "mini.lstm.w_h")
                .map(|(_, t)| t.rows())
                .ok_or_else(|| Error::Config("estimator file lacks mini-LSTM weights".into()))?;
            let mut m = MiniLstm::new(model.config().emb_dim, width, model.config().enc_dim(), 0.0, 0)?;
            c.read_params(m.params_mut())?;
            Estimator::MiniLstm(m)
        }
        other => return Err(Error::Config(format!("unknown estimator method {other:?}"))),
    };
    let source = ContextSource {
        estimator,
        zero_at_step_zero,
    };
    source.resolve(model, None).map(|_| ()).or_else(|e| match e {
        Error::Usage(_) => Ok(()),
        other => Err(other),
    })?;
    Ok(source)
}
