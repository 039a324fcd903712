use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Sentence, TextCorpus, Utterance};
use super::vocab::{LabelId, Vocabulary, NUM_SENTINELS};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Source => 0x50_55_52_43,
            Domain::Target => 0x54_41_52_47,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Generator parameters, stored on disk as a flat key-value document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Ordinary labels, sentinels excluded.
    pub num_labels: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Labels sharing one confusable emission group.
    pub cluster_size: usize,
    /// Pairwise mean distance inside a group, in units of `noise_sigma`.
    pub confusion_distance: f64,
    /// Dirichlet concentration of bigram rows per domain.
    pub source_concentration: f64,
    pub target_concentration: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            num_labels: 50,
            feature_dim: 16,
            noise_sigma: 0.3,
            min_frames: 1,
            max_frames: 3,
            min_len: 4,
            max_len: 12,
            cluster_size: 5,
            confusion_distance: 4.5,
            source_concentration: 0.3,
            target_concentration: 0.3,
            seed: 1,
        }
    }
}

impl TaskConfig {
    pub fn to_kv(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("task config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_labels < 2 {
            return fail("num_labels must be at least 2");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and non-negative");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return fail("frames per label must satisfy 1 <= min_frames <= max_frames");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail("utterance length must satisfy 1 <= min_len <= max_len");
        }
        if self.cluster_size == 0 || self.cluster_size > self.feature_dim {
            return fail("cluster_size must be in 1..=feature_dim");
        }
        if self.confusion_distance <= 4.0 {
            return fail("confusion_distance must exceed 4 noise deviations");
        }
        if self.source_concentration <= 0.0 || self.target_concentration <= 0.0 {
            return fail("bigram concentrations must be positive");
        }
        if i64::try_from(self.seed).is_err() {
            return fail("seed must fit in a signed 64-bit integer");
        }
        Ok(())
    }
}

/// Fully resolved synthetic task: bigram tables per domain and emission means.
///
/// Bigram tables have `num_labels + 1` rows (row 0 is the sentence start) and
/// `num_labels` columns indexed by `label - NUM_SENTINELS`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub source_bigram: Vec<Vec<f64>>,
    pub target_bigram: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
}

fn dirichlet_row<R: Rng>(rng: &mut R, n: usize, alpha: f64, skip: Option<usize>) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let mut row: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        if let Some(s) = skip {
            row[s] = 0.0;
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 && total.is_finite() {
            row.iter_mut().for_each(|p| *p /= total);
            return row;
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl SyntheticTask {
    pub fn build(config: TaskConfig) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let v = config.num_labels;
        let table = |rng: &mut ChaCha8Rng, alpha: f64| -> Vec<Vec<f64>> {
            // Row 0 is the start distribution; label rows never repeat themselves.
            (0..=v)
                .map(|r| dirichlet_row(rng, v, alpha, r.checked_sub(1)))
                .collect()
        };
        let source_bigram = table(&mut rng, config.source_concentration);
        let target_bigram = table(&mut rng, config.target_concentration);
        let means = Self::emission_means(&config, &mut rng)?;
        Self::from_parts(config, source_bigram, target_bigram, means)
    }

    /// Confusable groups: members sit on distinct axes around a group centre,
    /// pairwise `confusion_distance * sigma` apart; centres are spread far apart.
    fn emission_means(config: &TaskConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let dim = config.feature_dim;
        let sigma = config.noise_sigma.max(1e-3);
        let within = config.confusion_distance * sigma;
        let offset = within / std::f64::consts::SQRT_2;
        let groups = config.num_labels.div_ceil(config.cluster_size);
        let radius = within * (2.0 + groups as f64).sqrt() * 2.0;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for _ in 0..1000 {
            let mut means = Vec::with_capacity(config.num_labels);
            for _ in 0..groups {
                let mut centre: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
                let n = centre.iter().map(|x| x * x).sum::<f64>().sqrt();
                centre.iter_mut().for_each(|x| *x *= radius / n);
                let mut axes: Vec<usize> = (0..dim).collect();
                axes.shuffle(rng);
                for &axis in axes.iter().take(config.cluster_size) {
                    if means.len() == config.num_labels {
                        break;
                    }
                    let mut m = centre.clone();
                    m[axis] += offset;
                    means.push(m);
                }
            }
            if min_pairwise_distance(&means) >= 0.999 * within {
                return Ok(means);
            }
        }
        Err(Error::Config(
            "could not place separated emission groups; raise feature_dim".into(),
        ))
    }

    pub fn from_parts(
        config: TaskConfig,
        source_bigram: Vec<Vec<f64>>,
        target_bigram: Vec<Vec<f64>>,
        means: Vec<Vec<f64>>,
    ) -> Result<Self> {
        config.check()?;
        let v = config.num_labels;
        for (name, t) in [("source", &source_bigram), ("target", &target_bigram)] {
            if t.len() != v + 1 || t.iter().any(|r| r.len() != v) {
                return Err(Error::Config(format!("{name} bigram table must be {}x{v}", v + 1)));
            }
            for row in t {
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 || row.iter().any(|p| *p < 0.0) {
                    return Err(Error::Config(format!("{name} bigram row not normalized")));
                }
            }
        }
        if means.len() != v || means.iter().any(|m| m.len() != config.feature_dim) {
            return Err(Error::Config("emission means have wrong shape".into()));
        }
        let min_dist = min_pairwise_distance(&means);
        if min_dist <= 4.0 * config.noise_sigma {
            return Err(Error::Config(format!(
                "emission means too close: {min_dist} <= 4 sigma"
            )));
        }
        Ok(SyntheticTask {
            config,
            source_bigram,
            target_bigram,
            means,
        })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.config.num_labels)
    }

    pub fn bigram(&self, domain: Domain) -> &[Vec<f64>] {
        match domain {
            Domain::Source => &self.source_bigram,
            Domain::Target => &self.target_bigram,
        }
    }

    fn rng_for(&self, domain: Domain, seed: u64) -> ChaCha8Rng {
        let mixed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(domain.tag())
            .wrapping_add(self.config.seed.rotate_left(17));
        ChaCha8Rng::seed_from_u64(mixed)
    }

    fn sample_labels<R: Rng>(&self, rng: &mut R, samplers: &[WeightedIndex<f64>]) -> Vec<LabelId> {
        let len = rng.random_range(self.config.min_len..=self.config.max_len);
        let mut labels = Vec::with_capacity(len);
        let mut row = 0;
        for _ in 0..len {
            let next = samplers[row].sample(rng);
            labels.push(next + NUM_SENTINELS);
            row = next + 1;
        }
        labels
    }

    fn samplers(&self, domain: Domain) -> Vec<WeightedIndex<f64>> {
        self.bigram(domain)
            .iter()
            .map(|row| WeightedIndex::new(row).expect("normalized bigram row"))
            .collect()
    }

    /// Paired corpus; a pure function of `(self, n_utts, domain, seed)`.
    pub fn generate_corpus(&self, n_utts: usize, domain: Domain, seed: u64) -> Result<Corpus> {
        if n_utts == 0 {
            return Err(Error::Input("n_utts must be at least 1".into()));
        }
        let mut rng = self.rng_for(domain, seed);
        let samplers = self.samplers(domain);
        let noise = Normal::new(0.0, self.config.noise_sigma)
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        let dim = self.config.feature_dim;
        let mut utterances = Vec::with_capacity(n_utts);
        for i in 0..n_utts {
            let labels = self.sample_labels(&mut rng, &samplers);
            let mut frames = Vec::new();
            for &l in &labels {
                let count = rng.random_range(self.config.min_frames..=self.config.max_frames);
                let mean = &self.means[l - NUM_SENTINELS];
                for _ in 0..count {
                    frames.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
                }
            }
            let t = frames.len() / dim;
            utterances.push(Utterance {
                id: format!("{}-{seed}-{i:06}", domain.name()),
                features: Tensor::matrix(t, dim, frames)?,
                labels,
            });
        }
        Corpus::new(dim, utterances)
    }

    /// Text-only corpus drawn from the domain's bigram table.
    pub fn generate_text(&self, n_sentences: usize, domain: Domain, seed: u64) -> Result<TextCorpus> {
        if n_sentences == 0 {
            return Err(Error::Input("n_sentences must be at least 1".into()));
        }
        let mut rng = self.rng_for(domain, seed ^ 0x7E57);
        let samplers = self.samplers(domain);
        let sentences = (0..n_sentences)
            .map(|i| Sentence {
                id: format!("{}-text-{seed}-{i:06}", domain.name()),
                labels: self.sample_labels(&mut rng, &samplers),
            })
            .collect();
        Ok(TextCorpus { sentences })
    }
}

pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(distance(&points[i], &points[j]));
        }
    }
    best
}
