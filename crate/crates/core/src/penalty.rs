//! Pairwise penalty math: cosine similarity and the two sigmoid penalties.
//!
//! A pair of samples with different labels is penalized by the S-shaped
//! sigmoid `1 / (1 + e^(a - b x))`, which grows with similarity. A pair with
//! the same label is penalized by the Z-shaped sigmoid
//! `1 / (1 + e^(-(a - b x)))`, which grows as the pair drifts apart. `x` is
//! the cosine similarity of the two embeddings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_A: f64 = 5.0;
pub const DEFAULT_B: f64 = 10.0;

/// Which pair categories contribute to the cumulative penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CaseMode {
    /// Only similar pairs with different labels.
    #[serde(rename = "case1")]
    Case1Only,
    /// Only dissimilar pairs with the same label.
    #[serde(rename = "case2")]
    Case2Only,
    #[default]
    #[serde(rename = "both")]
    Both,
}

impl CaseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseMode::Case1Only => "case1",
            CaseMode::Case2Only => "case2",
            CaseMode::Both => "both",
        }
    }

    pub fn includes(self, case: PairCase) -> bool {
        matches!(
            (self, case),
            (CaseMode::Both, _)
                | (CaseMode::Case1Only, PairCase::Case1)
                | (CaseMode::Case2Only, PairCase::Case2)
        )
    }
}

impl fmt::Display for CaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "case1" | "case1only" | "case1-only" => Ok(CaseMode::Case1Only),
            "case2" | "case2only" | "case2-only" => Ok(CaseMode::Case2Only),
            "both" => Ok(CaseMode::Both),
            other => Err(Error::InvalidParams(format!(
                "unknown mode {other:?} (expected case1, case2 or both)"
            ))),
        }
    }
}

/// Sigmoid constants and the active case mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyParams {
    a: f64,
    b: f64,
    mode: CaseMode,
}

impl PenaltyParams {
    pub fn new(a: f64, b: f64, mode: CaseMode) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParams(format!(
                "a must be a finite value > 0, got {a}"
            )));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidParams(format!(
                "b must be a finite value > 0, got {b}"
            )));
        }
        Ok(Self { a, b, mode })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn mode(&self) -> CaseMode {
        self.mode
    }

    pub fn with_mode(self, mode: CaseMode) -> Self {
        Self { mode, ..self }
    }
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            a: DEFAULT_A,
            b: DEFAULT_B,
            mode: CaseMode::Both,
        }
    }
}

impl<'de> Deserialize<'de> for PenaltyParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            a: f64,
            b: f64,
            #[serde(default)]
            mode: CaseMode,
        }
        let raw = Raw::deserialize(deserializer)?;
        PenaltyParams::new(raw.a, raw.b, raw.mode).map_err(serde::de::Error::custom)
    }
}

/// A cosine similarity, clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Similarity(f64);

impl Similarity {
    /// Clamps `x` into `[-1, 1]`. NaN is rejected by the callers that could
    /// produce it, so it is passed through unchanged here.
    pub fn clamped(x: f64) -> Self {
        Similarity(x.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairCase {
    /// Similar embeddings, different labels.
    Case1,
    /// Dissimilar embeddings, same label.
    Case2,
}

impl PairCase {
    pub fn for_labels(same_label: bool) -> Self {
        if same_label {
            PairCase::Case2
        } else {
            PairCase::Case1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairPenalty {
    pub value: f64,
    pub case: PairCase,
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<Similarity> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::ZeroNormVector);
    }
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (&x, &y) in u.iter().zip(v) {
        dot += x * y;
        uu += x * x;
        vv += y * y;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    // sqrt of each norm separately keeps the product symmetric in (u, v).
    Ok(Similarity::clamped(dot / (uu.sqrt() * vv.sqrt())))
}

#[inline]
pub fn s_penalty(x: f64, params: &PenaltyParams) -> f64 {
    1.0 / (1.0 + (params.a - params.b * x).exp())
}

#[inline]
pub fn z_penalty(x: f64, params: &PenaltyParams) -> f64 {
    1.0 / (1.0 + (-(params.a - params.b * x)).exp())
}

/// Penalty for one pair, or `None` when the pair's case is excluded by the
/// active mode.
#[inline]
pub fn pair_penalty(x: f64, same_label: bool, params: &PenaltyParams) -> Option<PairPenalty> {
    let case = PairCase::for_labels(same_label);
    if !params.mode.includes(case) {
        return None;
    }
    let value = match case {
        PairCase::Case1 => s_penalty(x, params),
        PairCase::Case2 => z_penalty(x, params),
    };
    Some(PairPenalty { value, case })
}
