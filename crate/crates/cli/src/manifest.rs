use std::fmt::Write as _;
use std::path::Path;

use ilmlab_core::Result;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::layout::{ensure_parent, Layout};

const MAGIC: &str = "#ilmlab-manifest v1";

/// Record of one command invocation: what ran, on which inputs, with which
/// settings, and what it wrote. Contains no timestamps or absolute paths so
/// that reruns are byte-identical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    /// Command-specific flags not captured by the config.
    pub args: Vec<(String, String)>,
    pub config_hash: String,
    pub config: String,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            args: Vec::new(),
            config_hash: cfg.hash(),
            config: cfg.portable().to_toml(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.args.push((key.to_string(), value.into()));
        self
    }

    pub fn input(&mut self, layout: &Layout, path: &Path) -> Result<&mut Self> {
        self.inputs.push((layout.display(path), file_hash(path)?));
        Ok(self)
    }

    pub fn output(&mut self, layout: &Layout, path: &Path) -> Result<&mut Self> {
        self.outputs.push((layout.display(path), file_hash(path)?));
        Ok(self)
    }

    /// Command line that reproduces this run, given the embedded config saved
    /// to `config.toml`.
    pub fn command_line(&self) -> String {
        let mut line = format!("ilmlab {} --config config.toml --out <dir>", self.command);
        for (k, v) in &self.args {
            if v == "true" {
                write!(line, " --{k}").expect("string write");
            } else {
                write!(line, " --{k} {v}").expect("string write");
            }
        }
        line
    }

    pub fn render(&self) -> String {
        let mut out = format!("{MAGIC}\ncommand={}\n", self.command);
        for (k, v) in &self.args {
            writeln!(out, "arg.{k}={v}").expect("string write");
        }
        writeln!(out, "reproduce={}", self.command_line()).expect("string write");
        writeln!(out, "config_hash={}", self.config_hash).expect("string write");
        for (p, h) in &self.inputs {
            writeln!(out, "input.{p}={h}").expect("string write");
        }
        for (p, h) in &self.outputs {
            writeln!(out, "output.{p}={h}").expect("string write");
        }
        out.push_str("[config]\n");
        out.push_str(&self.config);
        out
    }

    /// Writes `manifests/<name>.manifest` under the output directory.
    pub fn write(&self, layout: &Layout, name: &str) -> Result<()> {
        let path = layout.manifest(name);
        ensure_parent(&path)?;
        std::fs::write(&path, self.render())?;
        Ok(())
    }

    /// Embedded config section of a rendered manifest.
    pub fn config_of(rendered: &str) -> Option<&str> {
        rendered.split_once("[config]\n").map(|(_, c)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_config_parses_back() {
        let mut cfg = ExperimentConfig {
            seed: 42,
            ..ExperimentConfig::default()
        };
        cfg.paths.out = "/somewhere/absolute".into();
        let mut m = Manifest::new("tune", &cfg);
        m.arg("method", "sf");
        let text = m.render();
        assert!(!text.contains("/somewhere"));
        assert!(text.contains("reproduce=ilmlab tune --config config.toml --out <dir> --method sf\n"));
        let back = ExperimentConfig::from_toml(Manifest::config_of(&text).unwrap()).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.hash(), cfg.hash());
    }
}
