use std::path::Path;

use sha2::{Digest, Sha256};

use super::vocab::{LabelId, BOS, EOS};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const CORPUS_MAGIC: &str = "#ilmlab-corpus v1";
const TEXT_MAGIC: &str = "#ilmlab-text v1";

/// One paired example. `labels` never contain sentinels.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T' × D_in` frames.
    pub features: Tensor,
    pub labels: Vec<LabelId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    feature_dim: usize,
    utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub labels: Vec<LabelId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TextCorpus {
    pub sentences: Vec<Sentence>,
}

fn check_labels(id: &str, labels: &[LabelId]) -> Result<()> {
    if labels.iter().any(|&l| l == BOS || l == EOS) {
        return Err(Error::Input(format!("{id}: sentinel ids stored in labels")));
    }
    Ok(())
}

impl Corpus {
    pub fn new(feature_dim: usize, utterances: Vec<Utterance>) -> Result<Self> {
        for u in &utterances {
            if u.features.cols() != feature_dim {
                return Err(Error::dim("corpus features", u.features.shape(), &[feature_dim]));
            }
            if u.features.rows() < u.labels.len() {
                return Err(Error::Input(format!(
                    "{}: {} frames for {} labels",
                    u.id,
                    u.features.rows(),
                    u.labels.len()
                )));
            }
            check_labels(&u.id, &u.labels)?;
        }
        Ok(Corpus {
            feature_dim,
            utterances,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Sub-corpus in the given index order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus {
            feature_dim: self.feature_dim,
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
        }
    }

    /// Transcriptions as a text corpus.
    pub fn transcripts(&self) -> TextCorpus {
        TextCorpus {
            sentences: self
                .utterances
                .iter()
                .map(|u| Sentence {
                    id: u.id.clone(),
                    labels: u.labels.clone(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{CORPUS_MAGIC} feature_dim={}\n", self.feature_dim);
        for u in &self.utterances {
            let mut raw = Vec::with_capacity(u.features.len() * 8);
            for v in u.features.data() {
                raw.extend_from_slice(&v.to_le_bytes());
            }
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                u.id,
                join_labels(&u.labels),
                u.features.rows(),
                hex::encode(raw)
            ));
        }
        out.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = Lines::new(bytes);
        let (offset, header) = lines
            .next()
            .ok_or_else(|| Error::format(0, "empty corpus file"))??;
        let dim = header
            .strip_prefix(CORPUS_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("feature_dim="))
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::format(offset, "bad corpus header"))?;
        let mut utterances = Vec::new();
        for line in lines {
            let (offset, line) = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::format(offset, format!("expected 4 fields, got {}", fields.len())));
            }
            let labels = parse_labels(fields[1])
                .ok_or_else(|| Error::format(offset + fields[0].len() + 1, "bad label list"))?;
            let frames_at = offset + fields[0].len() + fields[1].len() + 2;
            let frames: usize = fields[2]
                .parse()
                .ok()
                .filter(|&f| f > 0)
                .ok_or_else(|| Error::format(frames_at, "bad frame count"))?;
            let hex_at = frames_at + fields[2].len() + 1;
            let raw = hex::decode(fields[3]).map_err(|e| Error::format(hex_at, format!("bad hex: {e}")))?;
            if raw.len() != frames * dim * 8 {
                return Err(Error::format(
                    hex_at,
                    format!("expected {} feature bytes, got {}", frames * dim * 8, raw.len()),
                ));
            }
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let features = Tensor::matrix(frames, dim, values)
                .map_err(|e| Error::format(hex_at, e.to_string()))?;
            utterances.push(Utterance {
                id: fields[0].to_string(),
                features,
                labels,
            });
        }
        Corpus::new(dim, utterances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

impl TextCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Label tokens plus one end sentinel per sentence.
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.labels.len() + 1).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{TEXT_MAGIC}\n");
        for s in &self.sentences {
            out.push_str(&format!("{}\t{}\n", s.id, join_labels(&s.labels)));
        }
        out.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = Lines::new(bytes);
        let (offset, header) = lines
            .next()
            .ok_or_else(|| Error::format(0, "empty text file"))??;
        if header.trim_end() != TEXT_MAGIC {
            return Err(Error::format(offset, "bad text corpus header"));
        }
        let mut sentences = Vec::new();
        for line in lines {
            let (offset, line) = line?;
            let (id, labels) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(offset, "expected id<TAB>labels"))?;
            let labels = parse_labels(labels)
                .ok_or_else(|| Error::format(offset + id.len() + 1, "bad label list"))?;
            check_labels(id, &labels)?;
            sentences.push(Sentence {
                id: id.to_string(),
                labels,
            });
        }
        Ok(TextCorpus { sentences })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn join_labels(labels: &[LabelId]) -> String {
    labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_labels(field: &str) -> Option<Vec<LabelId>> {
    field.split(' ').filter(|s| !s.is_empty()).map(|s| s.parse().ok()).collect()
}

/// Newline-terminated UTF-8 lines with their starting byte offsets. A final
/// line without its newline is reported as truncated.
struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Lines { bytes, pos: 0 }
    }
}

impl<'a> Iterator for Lines<'a> {
    type Item = Result<(usize, &'a str)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.bytes[start..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            self.pos = self.bytes.len();
            return Some(Err(Error::format(start, "truncated record (missing newline)")));
        };
        self.pos = start + end + 1;
        Some(
            std::str::from_utf8(&rest[..end])
                .map(|s| (start, s))
                .map_err(|e| Error::format(start + e.valid_up_to(), "invalid UTF-8")),
        )
    }
}
