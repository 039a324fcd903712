use crate::error::{Error, Result};

pub type LabelId = usize;

pub const BOS: LabelId = 0;
pub const EOS: LabelId = 1;
pub const NUM_SENTINELS: usize = 2;

/// Output vocabulary: begin/end sentinels at ids 0 and 1, then ordinary labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn synthetic(num_labels: usize) -> Self {
        let mut tokens = vec!["<s>".to_string(), "</s>".to_string()];
        let width = num_labels.saturating_sub(1).to_string().len().max(2);
        tokens.extend((0..num_labels).map(|i| format!("w{i:0width$}")));
        Vocabulary { tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() <= NUM_SENTINELS {
            return Err(Error::Config("vocabulary needs at least one label".into()));
        }
        if tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::Config("vocabulary tokens must be non-empty without whitespace".into()));
        }
        Ok(Vocabulary { tokens })
    }

    /// Total size including sentinels.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_labels(&self) -> usize {
        self.tokens.len() - NUM_SENTINELS
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: LabelId) -> &str {
        &self.tokens[id]
    }

    /// Ids of ordinary (non-sentinel) labels.
    pub fn labels(&self) -> std::ops::Range<LabelId> {
        NUM_SENTINELS..self.tokens.len()
    }

    pub fn check_label(&self, id: LabelId) -> Result<()> {
        if id < NUM_SENTINELS || id >= self.tokens.len() {
            return Err(Error::Index {
                what: "label vocabulary",
                index: id,
                size: self.tokens.len(),
            });
        }
        Ok(())
    }

    pub fn render(&self, labels: &[LabelId]) -> String {
        labels
            .iter()
            .map(|&l| self.tokens.get(l).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
