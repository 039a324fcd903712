use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::aed::AedModel;
use super::lm::LstmLm;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::numcore::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"ILMLABCK";
const VERSION: u32 = 1;

/// Binary container: magic, version, `key=value` header lines, then named
/// tensors with their shapes and little-endian f64 values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint header lacks {key:?}")))
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.header.push((key.into(), value.into()));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header: String = self.header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format(0, "not an ilmlab checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let header = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(at, "header is not UTF-8"))?;
        let mut out = Container::default();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(at, format!("bad header line {line:?}")))?;
            out.push(k, v);
        }
        let count = r.u32()?;
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::format(at, format!("bad rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::format(at, "extent overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::format(at, format!("implausible shape {shape:?}")))?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::format(at, format!("{name}: {e}")))?;
            out.tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after last tensor"));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run the producing subcommand first".into(),
            });
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized container.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Stores every field of a flat config as a header entry.
    pub fn push_config<C: Serialize>(&mut self, config: &C) -> Result<()> {
        let value = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
        let toml::Value::Table(table) = value else {
            return Err(Error::Config("config is not a table".into()));
        };
        for (k, v) in table {
            if matches!(v, toml::Value::Table(_)) {
                return Err(Error::Config(format!("nested config field {k}")));
            }
            self.push(format!("config.{k}"), v.to_string());
        }
        Ok(())
    }

    pub fn read_config<C: DeserializeOwned>(&self) -> Result<C> {
        let doc: String = self
            .header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| format!("{k} = {v}\n")))
            .collect();
        toml::from_str(&doc).map_err(|e| Error::Config(format!("checkpoint config: {e}")))
    }

    pub fn push_params(&mut self, params: &ParamSet) {
        self.tensors
            .extend(params.iter().map(|(n, t)| (n.to_string(), t.clone())));
    }

    /// Fills every parameter of `params` from the container; names and
    /// shapes must match exactly.
    pub fn read_params(&self, params: &mut ParamSet) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, t) in &self.tensors {
            if params.by_name(name).is_none() {
                return Err(Error::Config(format!("unexpected tensor {name}")));
            }
            params.set(name, t.clone())?;
        }
        Ok(())
    }

    fn check_kind(&self, kind: &str) -> Result<()> {
        match self.get("kind") {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Config(format!("expected a {kind} checkpoint, found {other:?}"))),
        }
    }

    fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(self.require("vocab")?.split(' ').map(str::to_string).collect())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.pos, "truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl AedModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push("kind", "aed");
        c.push_config(self.config()).expect("AED config is flat");
        c.push("vocab", self.vocab().tokens().join(" "));
        c.push_params(self.params());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.check_kind("aed")?;
        let mut model = AedModel::skeleton(c.read_config()?)?.with_vocab(c.vocab()?)?;
        c.read_params(model.params_mut())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Hash of the checkpoint this model serializes to.
    pub fn content_hash(&self) -> String {
        self.to_container().content_hash()
    }
}

impl LstmLm {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push("kind", "lm");
        c.push_config(self.config()).expect("LM config is flat");
        c.push("vocab", self.vocab().tokens().join(" "));
        c.push_params(self.params());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.check_kind("lm")?;
        let mut lm = LstmLm::skeleton(c.read_config()?)?.with_vocab(c.vocab()?)?;
        c.read_params(lm.params_mut())?;
        Ok(lm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn content_hash(&self) -> String {
        self.to_container().content_hash()
    }
}
