use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoding method: which models are combined and which prior is subtracted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Sf,
    Dr,
    Zero,
    EdC,
    EdH,
    ExH,
    MiniLstm,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::None,
        Method::Sf,
        Method::Dr,
        Method::Zero,
        Method::EdC,
        Method::EdH,
        Method::ExH,
        Method::MiniLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Sf => "sf",
            Method::Dr => "dr",
            Method::Zero => "zero",
            Method::EdC => "ed_c",
            Method::EdH => "ed_h",
            Method::ExH => "ex_h",
            Method::MiniLstm => "mini_lstm",
        }
    }

    /// Label used in report tables.
    pub fn display(self) -> &'static str {
        match self {
            Method::None => "None",
            Method::Sf => "SF",
            Method::Dr => "DR",
            Method::Zero => "Zero",
            Method::EdC => "E_D[c]",
            Method::EdH => "E_D[h]",
            Method::ExH => "E_x[h]",
            Method::MiniLstm => "Mini-LSTM",
        }
    }

    pub fn uses_lm(self) -> bool {
        self != Method::None
    }

    pub fn uses_prior(self) -> bool {
        !matches!(self, Method::None | Method::Sf)
    }

    /// True for the context-substitution estimators.
    pub fn is_ilm(self) -> bool {
        self.uses_prior() && self != Method::Dr
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub method: Method,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beam_width: usize,
    pub max_output_len: usize,
    /// Divide final scores by output length (labels plus end sentinel).
    pub length_norm: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            method: Method::None,
            lambda1: 0.0,
            lambda2: 0.0,
            beam_width: 4,
            max_output_len: 20,
            length_norm: false,
        }
    }
}

impl FusionConfig {
    /// Validated copy with the scales the method does not use forced to zero.
    pub fn effective(&self) -> Result<FusionConfig> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be positive".into()));
        }
        if self.max_output_len == 0 {
            return Err(Error::Config("max output length must be positive".into()));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        let mut out = self.clone();
        if !self.method.uses_lm() {
            out.lambda1 = 0.0;
        }
        if !self.method.uses_prior() {
            out.lambda2 = 0.0;
        }
        Ok(out)
    }
}

/// Inclusive range `min, min+step, ..., max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn point(v: f64) -> Self {
        Axis {
            min: v,
            max: v,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min >= 0.0 && self.max >= self.min && self.step > 0.0) || !self.max.is_finite() {
            return Err(Error::Config(format!("empty or invalid grid axis {self:?}")));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        // Rounded so that 0.1 * 3 prints and compares as 0.3.
        Ok((0..=n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lambda1: Axis,
    pub lambda2: Axis,
}

impl Default for GridSpec {
    fn default() -> Self {
        let axis = Axis {
            min: 0.0,
            max: 0.8,
            step: 0.02,
        };
        GridSpec {
            lambda1: axis,
            lambda2: axis,
        }
    }
}

impl GridSpec {
    /// Grid points for `method`, in lexicographic `(λ1, λ2)` order. Axes a
    /// method does not use collapse to zero.
    pub fn points(&self, method: Method) -> Result<Vec<(f64, f64)>> {
        let l1 = if method.uses_lm() { self.lambda1.values()? } else { vec![0.0] };
        let l2 = if method.uses_prior() { self.lambda2.values()? } else { vec![0.0] };
        Ok(l1.iter().flat_map(|&a| l2.iter().map(move |&b| (a, b))).collect())
    }
}
