use std::path::{Path, PathBuf};

use ilmlab_core::fusion::Method;
use ilmlab_core::{Error, Result};

use crate::config::ExperimentConfig;

/// Where every artifact of a run lives.
#[derive(Clone, Debug)]
pub struct Layout {
    out: PathBuf,
    cfg: crate::config::Paths,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            out: cfg.paths.out.clone(),
            cfg: cfg.paths.clone(),
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn pick(&self, custom: &Option<PathBuf>, default: &str) -> PathBuf {
        match custom {
            Some(p) => p.clone(),
            None => self.out.join(default),
        }
    }

    pub fn task(&self) -> PathBuf {
        self.out.join("data/task.toml")
    }

    pub fn train_corpus(&self) -> PathBuf {
        self.pick(&self.cfg.train_corpus, "data/train.corpus")
    }

    pub fn heldout_corpus(&self) -> PathBuf {
        self.pick(&self.cfg.heldout_corpus, "data/heldout.corpus")
    }

    pub fn dev_corpus(&self) -> PathBuf {
        self.pick(&self.cfg.dev_corpus, "data/dev.corpus")
    }

    pub fn test_corpus(&self) -> PathBuf {
        self.pick(&self.cfg.test_corpus, "data/test.corpus")
    }

    pub fn lm_text(&self) -> PathBuf {
        self.pick(&self.cfg.lm_text, "data/lm.txt")
    }

    pub fn aed(&self) -> PathBuf {
        self.pick(&self.cfg.aed, "models/aed.ckpt")
    }

    pub fn lm(&self) -> PathBuf {
        self.pick(&self.cfg.lm, "models/lm.ckpt")
    }

    pub fn dr_lm(&self) -> PathBuf {
        self.pick(&self.cfg.dr_lm, "models/dr_lm.ckpt")
    }

    /// Per-epoch training loss next to a checkpoint.
    pub fn loss_curve(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("loss")
    }

    pub fn estimator(&self, method: Method) -> PathBuf {
        self.pick(&self.cfg.estimators, "estimators")
            .join(format!("{}.est", method.name()))
    }

    pub fn scales(&self, method: Method) -> PathBuf {
        self.out.join(format!("tune/{}.scales", method.name()))
    }

    pub fn surface(&self, method: Method) -> PathBuf {
        self.out.join(format!("tune/{}.surface", method.name()))
    }

    pub fn nbest(&self, method: Method) -> PathBuf {
        self.out.join(format!("decode/{}.nbest", method.name()))
    }

    pub fn score(&self, method: Method) -> PathBuf {
        self.out.join(format!("decode/{}.score", method.name()))
    }

    pub fn table(&self) -> PathBuf {
        self.out.join("results/table.txt")
    }

    pub fn table_kv(&self) -> PathBuf {
        self.out.join("results/table.kv")
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.out.join(format!("manifests/{name}.manifest"))
    }

    /// Path as recorded in manifests: relative to the output directory when
    /// it lies inside it.
    pub fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Fails with an actionable message when an input artifact is absent.
    pub fn require(&self, path: &Path, producer: &str) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: format!("produce it with `ilmlab {producer}` using the same --out"),
            })
        }
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}
