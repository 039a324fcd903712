#![allow(dead_code)]

use ilmlab_core::numcore::{Tape, Tensor, Var};
use ilmlab_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scalar probe: a fixed random weighting of every output element, so that
/// every component of the input gradient is exercised.
fn probe_loss<F>(build: &F, inputs: &[Tensor], weights: &Tensor, track: bool) -> (f64, Vec<Vec<f64>>)
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), track)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let out_shape = tape.value(out).shape().to_vec();
    let w = tape.constant(weights.clone().reshape(out_shape).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).item();
    if !track {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let grads = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
    (value, grads)
}

/// Central finite-difference check; returns the worst relative error over inputs.
pub fn gradient_check<F>(build: F, inputs: &[Tensor], seed: u64) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let out_len = tape.value(out).len();
    let mut r = rng(seed ^ 0x5eed);
    let weights = random_tensor(&mut r, &[out_len], 1.0);

    let (_, analytic) = probe_loss(&build, inputs, &weights, true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut dp = plus[k].data().to_vec();
            dp[j] += FD_EPS;
            plus[k] = Tensor::new(input.shape().to_vec(), dp).unwrap();
            let mut dm = minus[k].data().to_vec();
            dm[j] -= FD_EPS;
            minus[k] = Tensor::new(input.shape().to_vec(), dm).unwrap();
            let (lp, _) = probe_loss(&build, &plus, &weights, false);
            let (lm, _) = probe_loss(&build, &minus, &weights, false);
            numeric[j] = (lp - lm) / (2.0 * FD_EPS);
        }
        worst = worst.max(rel_error(&analytic[k], &numeric));
    }
    worst
}

/// Central differences of a model's summed example NLL against the analytic
/// parameter gradient, over every parameter value. Returns the relative error.
pub fn param_gradient_check<M>(model: &M, example: &M::Example) -> f64
where
    M: ilmlab_core::model::Trainable + Clone,
{
    let analytic: Vec<f64> = model.example_loss(example).unwrap().grads.0.concat();
    let names: Vec<String> = model.trainable_params().iter().map(|(n, _)| n.to_string()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for name in &names {
        let base = model.trainable_params().by_name(name).unwrap().clone();
        for j in 0..base.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut d = base.data().to_vec();
                d[j] += delta;
                m.trainable_params_mut()
                    .set(name, Tensor::new(base.shape().to_vec(), d).unwrap())
                    .unwrap();
                m.example_loss(example).unwrap().nll
            };
            numeric.push((eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS));
        }
    }
    rel_error(&analytic, &numeric)
}

pub mod instances {
    use ilmlab_core::fusion::{FusionConfig, Method};
    use ilmlab_core::ilm::{ContextSource, Estimator, MiniLstm};
    use ilmlab_core::model::{AedConfig, AedModel, DecoderKind, LmConfig, LstmLm};
    use ilmlab_core::numcore::Tensor;
    use rand::Rng;

    use super::{random_tensor, rng};

    /// A random tiny search problem: models, features and a fusion config.
    pub struct Instance {
        pub aed: AedModel,
        pub lm: LstmLm,
        pub dr_lm: LstmLm,
        pub ilm: ContextSource,
        pub features: Tensor,
        pub config: FusionConfig,
    }

    pub fn random_instance(seed: u64) -> Instance {
        let mut r = rng(seed);
        let labels = r.random_range(2..=4);
        let method = Method::ALL[r.random_range(0..Method::ALL.len())];
        let decoder = if r.random_bool(0.5) { DecoderKind::Lstm } else { DecoderKind::Ff };
        let aed = AedModel::new(AedConfig {
            input_dim: 2,
            num_labels: labels,
            enc_layers: 1,
            enc_width: 2,
            subsample: 1,
            emb_dim: 2,
            decoder,
            dec_width: 3,
            context_k: 3,
            att_dim: 2,
            readout_units: 2,
            init_scale: 1.0,
            seed: r.random::<u64>() >> 1,
        })
        .unwrap();
        let lm_cfg = |seed| LmConfig {
            num_labels: labels,
            emb_dim: 2,
            layers: 1,
            width: 3,
            init_scale: 1.0,
            seed,
            ..LmConfig::default()
        };
        let lm = LstmLm::new(lm_cfg(r.random::<u64>() >> 1)).unwrap();
        let dr_lm = LstmLm::new(lm_cfg(r.random::<u64>() >> 1)).unwrap();
        let estimator = match method {
            Method::EdC => Estimator::GlobalContextAvg(random_tensor(&mut r, &[1, 4], 1.0)),
            Method::EdH => Estimator::GlobalEncoderAvg(random_tensor(&mut r, &[1, 4], 1.0)),
            Method::ExH => Estimator::SeqEncoderAvg,
            Method::MiniLstm => Estimator::MiniLstm(MiniLstm::new(2, 3, 4, 1.0, r.random()).unwrap()),
            _ => Estimator::Zero,
        };
        let frames = r.random_range(1..=4);
        Instance {
            aed,
            lm,
            dr_lm,
            ilm: ContextSource::new(estimator),
            features: random_tensor(&mut r, &[frames, 2], 1.0),
            config: FusionConfig {
                method,
                lambda1: r.random_range(0.0..0.8),
                lambda2: r.random_range(0.0..0.8),
                beam_width: 1,
                max_output_len: r.random_range(1..=4),
                length_norm: false,
            },
        }
    }

    impl Instance {
        pub fn models(&self) -> ilmlab_core::fusion::Models<'_> {
            ilmlab_core::fusion::Models {
                aed: &self.aed,
                lm: Some(&self.lm),
                dr_lm: Some(&self.dr_lm),
                ilm: Some(&self.ilm),
            }
        }
    }
}
