//! Contrastive-decoding numerics: softmax, the contrastive combination,
//! Gain scores, the plausibility constraint, distances and sampling.

mod distance;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::backend::LogitVector;

pub use self::distance::{distance, DistanceMetric, KL_SMOOTHING};
pub use self::sampling::{sample_token, SamplingConfig, SamplingMode};

/// Tolerance on `sum(p) == 1` accepted by [`ProbVector::new`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CdError {
    #[error("shape-mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("empty-support: no token has positive mass after masking")]
    EmptySupport,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("not a probability vector: {0}")]
    NotNormalized(String),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
}

fn check_len(left: usize, right: usize) -> Result<(), CdError> {
    if left == right {
        Ok(())
    } else {
        Err(CdError::ShapeMismatch { left, right })
    }
}

/// Non-negative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, CdError> {
        if values.is_empty() {
            return Err(CdError::NotNormalized("empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CdError::NotNormalized(format!("entry {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(CdError::NotNormalized(format!("sum {sum}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtraction). `-inf` entries map to 0.
pub fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(z: &LogitVector) -> ProbVector {
    ProbVector(softmax_slice(z.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineSpace {
    /// `softmax((1 + a) f - a f_aug)`.
    Logit,
    /// `(1 + a) softmax(f) - a softmax(f_aug)`, left unnormalized.
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdConfig {
    pub alpha: f64,
    pub beta: f64,
    pub combine_space: CombineSpace,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            combine_space: CombineSpace::Logit,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<(), CdError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CdError::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(CdError::InvalidConfig(format!(
                "beta must be in (0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// A proper distribution.
    Probability,
    /// Probability-space contrast; may contain negatives and need not sum to 1.
    Unnormalized,
    /// Pre-softmax scores; excluded entries are `-inf`.
    Logit,
}

/// Per-token scores produced by contrastive combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub kind: ScoreKind,
}

impl ScoreVector {
    /// Non-negative weights for [`sample_token`]: negatives are clipped to 0
    /// and logit scores are pushed through softmax.
    pub fn sampling_weights(&self) -> Vec<f64> {
        match self.kind {
            ScoreKind::Probability | ScoreKind::Unnormalized => {
                self.values.iter().map(|v| v.max(0.0)).collect()
            }
            ScoreKind::Logit => {
                if self.values.iter().all(|v| *v == f64::NEG_INFINITY) {
                    vec![0.0; self.values.len()]
                } else {
                    softmax_slice(&self.values)
                }
            }
        }
    }
}

/// Raw contrastive logits `(1 + alpha) f - alpha f_aug`.
pub fn cd_logits(f: &LogitVector, f_aug: &LogitVector, alpha: f64) -> Result<Vec<f64>, CdError> {
    check_len(f.len(), f_aug.len())?;
    Ok(f.as_slice()
        .iter()
        .zip(f_aug.as_slice())
        .map(|(a, b)| (1.0 + alpha) * a - alpha * b)
        .collect())
}

pub fn cd_combine(
    f: &LogitVector,
    f_aug: &LogitVector,
    cfg: &CdConfig,
) -> Result<ScoreVector, CdError> {
    check_len(f.len(), f_aug.len())?;
    match cfg.combine_space {
        CombineSpace::Logit => Ok(ScoreVector {
            values: softmax_slice(&cd_logits(f, f_aug, cfg.alpha)?),
            kind: ScoreKind::Probability,
        }),
        CombineSpace::Probability => {
            let p = softmax_slice(f.as_slice());
            let q = softmax_slice(f_aug.as_slice());
            Ok(ScoreVector {
                values: p
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (1.0 + cfg.alpha) * a - cfg.alpha * b)
                    .collect(),
                kind: ScoreKind::Unnormalized,
            })
        }
    }
}

/// Increase of the ground-truth token's probability from regular to
/// contrastive decoding.
pub fn gain(p_cd: &[f64], p_reg: &[f64], y_gt: usize) -> Result<f64, CdError> {
    check_len(p_cd.len(), p_reg.len())?;
    if y_gt >= p_reg.len() {
        return Err(CdError::TokenOutOfRange {
            token: y_gt,
            vocab: p_reg.len(),
        });
    }
    Ok(p_cd[y_gt] - p_reg[y_gt])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedScores {
    pub scores: ScoreVector,
    /// Candidate token ids in ascending order.
    pub candidates: Vec<usize>,
}

/// Restrict `scores` to `{y : p_reg[y] >= beta * max p_reg}`.
pub fn plausibility_mask(
    p_reg: &ProbVector,
    scores: &ScoreVector,
    beta: f64,
) -> Result<MaskedScores, CdError> {
    check_len(p_reg.len(), scores.values.len())?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(CdError::InvalidConfig(format!(
            "beta must be in (0, 1], got {beta}"
        )));
    }
    let p = p_reg.as_slice();
    let threshold = beta * p[argmax(p)];
    let excluded = match scores.kind {
        ScoreKind::Logit => f64::NEG_INFINITY,
        ScoreKind::Probability | ScoreKind::Unnormalized => 0.0,
    };
    let mut candidates = Vec::new();
    let values = scores
        .values
        .iter()
        .zip(p)
        .enumerate()
        .map(|(i, (s, pr))| {
            if *pr >= threshold {
                candidates.push(i);
                *s
            } else {
                excluded
            }
        })
        .collect();
    Ok(MaskedScores {
        scores: ScoreVector {
            values,
            kind: scores.kind,
        },
        candidates,
    })
}
