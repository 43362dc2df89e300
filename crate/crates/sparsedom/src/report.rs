//! Check reports shared by every inequality check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// The swept parameter (λ, instance index, ...).
    pub param: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl Sample {
    pub fn new(param: f64, lhs: f64, rhs: f64) -> Self {
        Sample { param, lhs, rhs, ratio: ratio(lhs, rhs) }
    }
}

/// `lhs / rhs` with `0/0 = 0` and `x/0 = ∞` for `x > 0`.
pub fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 0.0 {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: String,
    pub kind: String,
    pub digest: String,
    pub samples: Vec<Sample>,
    pub empirical_constant: f64,
    /// `None` means no ceiling (smoke mode): the check cannot fail on ratio.
    pub ceiling: Option<f64>,
    pub passed: bool,
    /// Named side quantities (constants, calibrated exponents, ...).
    pub extras: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl CheckReport {
    pub fn new(id: impl Into<String>, kind: impl Into<String>, digest: impl Into<String>) -> Self {
        CheckReport {
            id: id.into(),
            kind: kind.into(),
            digest: digest.into(),
            samples: Vec::new(),
            empirical_constant: 0.0,
            ceiling: None,
            passed: true,
            extras: BTreeMap::new(),
            notes: Vec::new(),
            runtime_ms: 0.0,
        }
    }

    pub fn with_ceiling(mut self, c: Option<f64>) -> Self {
        self.ceiling = c.filter(|c| c.is_finite());
        self
    }

    pub fn push(&mut self, s: Sample) {
        self.samples.push(s);
    }

    pub fn extra(&mut self, key: &str, v: f64) {
        self.extras.insert(key.to_string(), v);
    }

    /// Recompute the empirical constant and verdict. A hard failure recorded
    /// via [`CheckReport::fail`] stays failed.
    pub fn finish(mut self) -> Self {
        self.empirical_constant = self.samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
        if let Some(c) = self.ceiling {
            if !(self.empirical_constant <= c) {
                self.passed = false;
            }
        }
        self
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        self.passed = false;
        self.notes.push(why.into());
    }
}

/// Hex SHA-256 of the given parts, joined with newlines.
pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Digest including raw bit patterns of grid data.
pub fn digest_values(tag: &str, values: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    for v in values {
        h.update((v.len() as u64).to_le_bytes());
        for x in *v {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
