use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_len, CdError, ProbVector};

/// Mixing weight of the uniform distribution blended into `q` before KL.
pub const KL_SMOOTHING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    L1,
    L2,
    L3,
    Linf,
    Cosine,
    KL,
    /// 1-D earth mover's distance over token-index order.
    Emd,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 7] = [
        DistanceMetric::L1,
        DistanceMetric::L2,
        DistanceMetric::L3,
        DistanceMetric::Linf,
        DistanceMetric::Cosine,
        DistanceMetric::KL,
        DistanceMetric::Emd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::L1 => "l1",
            DistanceMetric::L2 => "l2",
            DistanceMetric::L3 => "l3",
            DistanceMetric::Linf => "linf",
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::KL => "kl",
            DistanceMetric::Emd => "emd",
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistanceMetric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown distance metric {s:?}"))
    }
}

/// Distance between two distributions of equal length.
pub fn distance(p: &ProbVector, q: &ProbVector, metric: DistanceMetric) -> Result<f64, CdError> {
    check_len(p.len(), q.len())?;
    let (p, q) = (p.as_slice(), q.as_slice());
    let diffs = || p.iter().zip(q).map(|(a, b)| (a - b).abs());
    let d = match metric {
        DistanceMetric::L1 => diffs().sum(),
        DistanceMetric::L2 => diffs().map(|d| d * d).sum::<f64>().sqrt(),
        DistanceMetric::L3 => diffs().map(|d| d * d * d).sum::<f64>().cbrt(),
        DistanceMetric::Linf => diffs().fold(0.0, f64::max),
        DistanceMetric::Cosine => {
            let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nq = q.iter().map(|b| b * b).sum::<f64>().sqrt();
            (1.0 - dot / (np * nq)).max(0.0)
        }
        DistanceMetric::KL => {
            let u = 1.0 / q.len() as f64;
            p.iter()
                .zip(q)
                .filter(|(a, _)| **a > 0.0)
                .map(|(a, b)| {
                    let qs = (1.0 - KL_SMOOTHING) * b + KL_SMOOTHING * u;
                    a * (a / qs).ln()
                })
                .sum::<f64>()
                .max(0.0)
        }
        DistanceMetric::Emd => {
            let mut cp = 0.0;
            let mut cq = 0.0;
            let mut total = 0.0;
            for (a, b) in p.iter().zip(q) {
                cp += a;
                cq += b;
                total += (cp - cq).abs();
            }
            total
        }
    };
    Ok(d)
}
