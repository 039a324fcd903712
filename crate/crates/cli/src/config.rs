use std::path::{Path, PathBuf};

use ilmlab_core::data::TaskConfig;
use ilmlab_core::fusion::{FusionConfig, GridSpec, Method};
use ilmlab_core::ilm::MiniLstmConfig;
use ilmlab_core::model::{AedConfig, DecoderKind, LmConfig, LmRole, TrainConfig};
use ilmlab_core::numcore::AdamConfig;
use ilmlab_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a pipeline run depends on. Component seeds are derived from the
/// single top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Substitute the zero vector for the context at the first ILM step.
    pub zero_at_step_zero: bool,
    pub paths: Paths,
    pub task: TaskSection,
    pub data: DataSection,
    pub aed: AedSection,
    pub aed_train: TrainSection,
    pub lm: LmSection,
    pub lm_train: TrainSection,
    pub dr_lm_train: TrainSection,
    pub mini_lstm: MiniSection,
    pub decode: FusionConfig,
    pub grid: GridSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            workers: 0,
            zero_at_step_zero: true,
            paths: Paths::default(),
            task: TaskSection::default(),
            data: DataSection::default(),
            aed: AedSection::default(),
            aed_train: TrainSection::default(),
            lm: LmSection::default(),
            lm_train: TrainSection::default(),
            dr_lm_train: TrainSection::default(),
            mini_lstm: MiniSection::default(),
            decode: FusionConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

/// Output directory and optional artifact locations. Unset artifacts live in
/// the standard layout under `out`; overrides are used as given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_text: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aed: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dr_lm: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimators: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("run"),
            train_corpus: None,
            heldout_corpus: None,
            dev_corpus: None,
            test_corpus: None,
            lm_text: None,
            aed: None,
            lm: None,
            dr_lm: None,
            estimators: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub cluster_size: usize,
    pub confusion_distance: f64,
    pub source_concentration: f64,
    pub target_concentration: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        let t = TaskConfig::default();
        TaskSection {
            num_labels: t.num_labels,
            feature_dim: t.feature_dim,
            noise_sigma: t.noise_sigma,
            min_frames: t.min_frames,
            max_frames: t.max_frames,
            min_len: t.min_len,
            max_len: t.max_len,
            cluster_size: t.cluster_size,
            confusion_distance: t.confusion_distance,
            source_concentration: t.source_concentration,
            target_concentration: t.target_concentration,
        }
    }
}

/// Corpus sizes. Train and held-out are source domain; dev, test and LM text
/// are target domain. The held-out set only measures ILM perplexity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: usize,
    pub heldout: usize,
    pub dev: usize,
    pub test: usize,
    pub lm_text: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: 2000,
            heldout: 200,
            dev: 200,
            test: 200,
            lm_text: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AedSection {
    pub enc_layers: usize,
    pub enc_width: usize,
    pub subsample: usize,
    pub emb_dim: usize,
    pub decoder: DecoderKind,
    pub dec_width: usize,
    pub context_k: usize,
    pub att_dim: usize,
    pub readout_units: usize,
    pub init_scale: f64,
}

impl Default for AedSection {
    fn default() -> Self {
        let a = AedConfig::default();
        AedSection {
            enc_layers: a.enc_layers,
            enc_width: a.enc_width,
            subsample: a.subsample,
            emb_dim: a.emb_dim,
            decoder: a.decoder,
            dec_width: a.dec_width,
            context_k: a.context_k,
            att_dim: a.att_dim,
            readout_units: a.readout_units,
            init_scale: a.init_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            grad_clip: t.grad_clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub emb_dim: usize,
    pub layers: usize,
    pub width: usize,
    pub init_scale: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        let l = LmConfig::default();
        LmSection {
            emb_dim: l.emb_dim,
            layers: l.layers,
            width: l.width,
            init_scale: l.init_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiniSection {
    pub width: usize,
    pub subset_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
}

impl Default for MiniSection {
    fn default() -> Self {
        let m = MiniLstmConfig::default();
        MiniSection {
            width: m.width,
            subset_fraction: m.subset_fraction,
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            init_scale: m.init_scale,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub method: Option<Method>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub beam: Option<usize>,
    pub decoder: Option<DecoderKind>,
    pub decoder_width: Option<usize>,
    pub context_k: Option<usize>,
}

/// Stable per-component seed.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(component.as_bytes());
    let digest = h.finalize();
    // Seeds are written to TOML, whose integers are signed.
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) >> 1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "config file not found".into(),
            });
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.paths.out = v.clone();
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.method {
            self.decode.method = v;
        }
        if let Some(v) = o.lambda1 {
            self.decode.lambda1 = v;
        }
        if let Some(v) = o.lambda2 {
            self.decode.lambda2 = v;
        }
        if let Some(v) = o.beam {
            self.decode.beam_width = v;
        }
        if let Some(v) = o.decoder {
            self.aed.decoder = v;
        }
        if let Some(v) = o.decoder_width {
            self.aed.dec_width = v;
        }
        if let Some(v) = o.context_k {
            self.aed.context_k = v;
        }
    }

    /// Config with the output directory blanked, so that identical settings
    /// written to different places hash the same.
    pub fn portable(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.paths.out = PathBuf::from(".");
        c
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.portable().to_toml()))
    }

    pub fn task_config(&self) -> TaskConfig {
        let t = &self.task;
        TaskConfig {
            num_labels: t.num_labels,
            feature_dim: t.feature_dim,
            noise_sigma: t.noise_sigma,
            min_frames: t.min_frames,
            max_frames: t.max_frames,
            min_len: t.min_len,
            max_len: t.max_len,
            cluster_size: t.cluster_size,
            confusion_distance: t.confusion_distance,
            source_concentration: t.source_concentration,
            target_concentration: t.target_concentration,
            seed: derive_seed(self.seed, "task"),
        }
    }

    pub fn aed_config(&self) -> AedConfig {
        let a = &self.aed;
        AedConfig {
            input_dim: self.task.feature_dim,
            num_labels: self.task.num_labels,
            enc_layers: a.enc_layers,
            enc_width: a.enc_width,
            subsample: a.subsample,
            emb_dim: a.emb_dim,
            decoder: a.decoder,
            dec_width: a.dec_width,
            context_k: a.context_k,
            att_dim: a.att_dim,
            readout_units: a.readout_units,
            init_scale: a.init_scale,
            seed: derive_seed(self.seed, "aed.init"),
        }
    }

    pub fn lm_config(&self, role: LmRole) -> LmConfig {
        match role {
            LmRole::External => LmConfig {
                num_labels: self.task.num_labels,
                emb_dim: self.lm.emb_dim,
                layers: self.lm.layers,
                width: self.lm.width,
                role,
                init_scale: self.lm.init_scale,
                seed: derive_seed(self.seed, "lm.init"),
            },
            LmRole::DecoderLike => {
                let mut c = LmConfig::decoder_like(&self.aed_config(), derive_seed(self.seed, "dr_lm.init"));
                c.init_scale = self.aed.init_scale;
                c
            }
        }
    }

    pub fn train_config(&self, role: TrainRole) -> TrainConfig {
        let (section, tag) = match role {
            TrainRole::Aed => (&self.aed_train, "aed.train"),
            TrainRole::Lm => (&self.lm_train, "lm.train"),
            TrainRole::DrLm => (&self.dr_lm_train, "dr_lm.train"),
        };
        TrainConfig {
            epochs: section.epochs,
            batch_size: section.batch_size,
            adam: AdamConfig {
                learning_rate: section.learning_rate,
                ..AdamConfig::default()
            },
            grad_clip: section.grad_clip,
            seed: derive_seed(self.seed, tag),
        }
    }

    pub fn mini_config(&self) -> MiniLstmConfig {
        let m = &self.mini_lstm;
        MiniLstmConfig {
            width: m.width,
            subset_fraction: m.subset_fraction,
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            init_scale: m.init_scale,
            seed: derive_seed(self.seed, "mini_lstm"),
        }
    }

    pub fn corpus_seed(&self, split: &str) -> u64 {
        derive_seed(self.seed, &format!("data.{split}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainRole {
    Aed,
    Lm,
    DrLm,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 3\n").is_ok());
        assert!(ExperimentConfig::from_toml("sed = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[aed]\nwidth = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[decode]\nmethod = \"nope\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.aed.decoder = DecoderKind::Ff;
        c.decode.method = Method::MiniLstm;
        c.paths.lm = Some("elsewhere/lm.ckpt".into());
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn flags_win_over_file() {
        let mut c = ExperimentConfig::from_toml("seed = 3\n[decode]\nlambda1 = 0.5\nbeam_width = 8\n").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            lambda1: Some(0.25),
            decoder: Some(DecoderKind::Ff),
            context_k: Some(2),
            ..Overrides::default()
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.decode.lambda1, 0.25);
        assert_eq!(c.decode.beam_width, 8);
        assert_eq!(c.aed_config().decoder, DecoderKind::Ff);
        assert_eq!(c.aed_config().context_k, 2);
    }

    #[test]
    fn hash_ignores_output_directory() {
        let mut a = ExperimentConfig::default();
        let mut b = a.clone();
        a.paths.out = "one".into();
        b.paths.out = "two".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn derived_seeds_differ_by_component() {
        let c = ExperimentConfig::default();
        assert_ne!(c.corpus_seed("train"), c.corpus_seed("dev"));
        assert_ne!(c.aed_config().seed, c.lm_config(LmRole::External).seed);
        assert_eq!(derive_seed(5, "x"), derive_seed(5, "x"));
    }
}
