use serde::{Deserialize, Serialize};

use super::{argmax, CdError};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// 0 disables top-k.
    pub top_k: usize,
    pub mode: SamplingMode,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            top_k: 0,
            mode: SamplingMode::Sample,
        }
    }
}

impl SamplingConfig {
    pub fn greedy() -> Self {
        Self {
            mode: SamplingMode::Greedy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CdError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(CdError::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(CdError::InvalidConfig(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// Draw a token from non-negative `weights`.
///
/// Surviving weights are renormalized, then top-k keeps the k largest and
/// top-p keeps the shortest descending prefix whose mass reaches `top_p`.
/// Ties in the ordering go to the lower index. Greedy mode returns the
/// argmax directly. Temperature is not applied here; callers scale logits
/// before combination.
pub fn sample_token(weights: &[f64], cfg: &SamplingConfig, seed: u64) -> Result<usize, CdError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(CdError::InvalidConfig(
            "sampling weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(CdError::EmptySupport);
    }
    if cfg.mode == SamplingMode::Greedy {
        return Ok(argmax(weights));
    }

    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    // Stable sort keeps lower indices first among equal weights.
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    if cfg.top_k > 0 {
        order.truncate(cfg.top_k);
    }
    let kept_mass: f64 = order.iter().map(|&i| weights[i]).sum();
    let mut cumulative = 0.0;
    let mut cut = order.len();
    for (n, &i) in order.iter().enumerate() {
        cumulative += weights[i] / kept_mass;
        if cumulative >= cfg.top_p {
            cut = n + 1;
            break;
        }
    }
    order.truncate(cut);

    // Inverse-CDF draw over the survivors in ascending index order.
    order.sort_unstable();
    let mass: f64 = order.iter().map(|&i| weights[i]).sum();
    let target = SeededRng::new(seed).uniform() * mass;
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if target < acc {
            return Ok(i);
        }
    }
    Ok(*order.last().expect("support is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_picks_argmax() {
        assert_eq!(
            sample_token(&[0.1, 0.7, 0.2], &SamplingConfig::greedy(), 0).unwrap(),
            1
        );
        assert_eq!(
            sample_token(&[0.4, 0.2, 0.4], &SamplingConfig::greedy(), 0).unwrap(),
            0
        );
    }

    #[test]
    fn top_k_one_is_argmax_for_every_seed() {
        let cfg = SamplingConfig {
            top_k: 1,
            ..SamplingConfig::default()
        };
        for seed in 0..200 {
            assert_eq!(sample_token(&[0.2, 0.3, 0.5, 0.0], &cfg, seed).unwrap(), 2);
        }
    }

    #[test]
    fn top_p_truncates_support() {
        let cfg = SamplingConfig {
            top_p: 0.5,
            ..SamplingConfig::default()
        };
        for seed in 0..200 {
            assert_eq!(sample_token(&[0.6, 0.3, 0.1], &cfg, seed).unwrap(), 0);
        }
        let cfg = SamplingConfig {
            top_p: 0.85,
            ..SamplingConfig::default()
        };
        let seen: std::collections::BTreeSet<usize> = (0..500)
            .map(|s| sample_token(&[0.6, 0.3, 0.1], &cfg, s).unwrap())
            .collect();
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn unnormalized_weights_are_renormalized() {
        let mut ones = 0;
        for seed in 0..20_000 {
            ones += sample_token(&[2.0, 6.0], &SamplingConfig::default(), seed).unwrap();
        }
        let freq = ones as f64 / 20_000.0;
        assert!((freq - 0.75).abs() < 0.015, "{freq}");
    }

    #[test]
    fn empty_support_is_an_error() {
        let err = sample_token(&[0.0, 0.0], &SamplingConfig::default(), 1).unwrap_err();
        assert_eq!(err, CdError::EmptySupport);
        assert!(sample_token(&[f64::NAN, 1.0], &SamplingConfig::default(), 1).is_err());
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let w = [0.1, 0.2, 0.3, 0.4];
        let a: Vec<usize> = (0..50)
            .map(|s| sample_token(&w, &SamplingConfig::default(), s).unwrap())
            .collect();
        let b: Vec<usize> = (0..50)
            .map(|s| sample_token(&w, &SamplingConfig::default(), s).unwrap())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn validation() {
        let bad = SamplingConfig {
            top_p: 1.2,
            ..SamplingConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig {
            temperature: 0.0,
            ..SamplingConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SamplingConfig::default().validate().is_ok());
    }
}
