//! Resolution of decoding settings: flags, then `VACODE_BACKEND_URL`, then
//! the `--config` TOML file, then defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use vacode::{
    AugKind, AugmentationOp, CdConfig, CombineSpace, DecodingConfig, DistanceMetric,
    SamplingConfig, SamplingMode,
};

use crate::CliError;

pub const DEFAULT_BACKEND: &str = "in-process:toy";

/// Settings that may come from the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub top_k: Option<usize>,
    pub mode: Option<String>,
    pub metric: Option<String>,
    pub combine_space: Option<String>,
    pub max_len: Option<usize>,
    pub seed: Option<u64>,
    pub augs: Option<String>,
    pub concurrent_step1: Option<bool>,
    pub tau: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config: cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config: {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// `in-process:toy`, `in-process:toy-hard` or an http(s) base URL.
    #[arg(long, env = "VACODE_BACKEND_URL")]
    pub backend: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    /// 0 disables top-k.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// `sample` or `greedy`.
    #[arg(long)]
    pub mode: Option<String>,
    /// l1, l2, l3, linf, cosine, kl or emd.
    #[arg(long)]
    pub metric: Option<String>,
    /// `logit` or `probability`.
    #[arg(long)]
    pub combine_space: Option<String>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated augmentation kinds (default: all seven).
    #[arg(long)]
    pub augs: Option<String>,
    #[arg(long)]
    pub concurrent_step1: bool,
}

/// Fully resolved settings shared by the decoding commands.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub backend: String,
    pub decoding: DecodingConfig,
}

fn field<T: PartialOrd + std::fmt::Display + Copy>(
    name: &str,
    value: T,
    ok: impl Fn(T) -> bool,
    expect: &str,
) -> Result<T, CliError> {
    if ok(value) {
        Ok(value)
    } else {
        Err(CliError::Usage(format!(
            "invalid {name}: {value} (expected {expect})"
        )))
    }
}

fn parse_named<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid {name}: {e}")))
}

pub fn parse_augs(list: &str) -> Result<Vec<AugmentationOp>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_named::<AugKind>("augs", s).map(AugmentationOp::of_kind))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::Usage("invalid augs: empty list".into()))
            } else {
                Ok(v)
            }
        })
}

impl DecodeArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<Resolved, CliError> {
        let d = DecodingConfig::default();
        let alpha = field(
            "alpha",
            self.alpha.or(file.alpha).unwrap_or(d.cd.alpha),
            |a| a >= 0.0 && a.is_finite(),
            ">= 0",
        )?;
        let beta = field(
            "beta",
            self.beta.or(file.beta).unwrap_or(d.cd.beta),
            |b| b > 0.0 && b <= 1.0,
            "in (0, 1]",
        )?;
        let temperature = field(
            "temperature",
            self.temperature
                .or(file.temperature)
                .unwrap_or(d.sampling.temperature),
            |t| t > 0.0 && t.is_finite(),
            "> 0",
        )?;
        let top_p = field(
            "top_p",
            self.top_p.or(file.top_p).unwrap_or(d.sampling.top_p),
            |p| p > 0.0 && p <= 1.0,
            "in (0, 1]",
        )?;
        let max_len = field(
            "max_len",
            self.max_len.or(file.max_len).unwrap_or(d.max_len),
            |n| n >= 1,
            ">= 1",
        )?;
        let mode = match self.mode.as_deref().or(file.mode.as_deref()) {
            None => d.sampling.mode,
            Some("sample") => SamplingMode::Sample,
            Some("greedy") => SamplingMode::Greedy,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "invalid mode: {other:?} (expected sample or greedy)"
                )))
            }
        };
        let combine_space = match self
            .combine_space
            .as_deref()
            .or(file.combine_space.as_deref())
        {
            None => d.cd.combine_space,
            Some("logit") => CombineSpace::Logit,
            Some("probability") => CombineSpace::Probability,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "invalid combine_space: {other:?} (expected logit or probability)"
                )))
            }
        };
        let metric = match self.metric.as_deref().or(file.metric.as_deref()) {
            None => d.metric,
            Some(m) => parse_named::<DistanceMetric>("metric", m)?,
        };
        let aug_set = match self.augs.as_deref().or(file.augs.as_deref()) {
            None => d.aug_set.clone(),
            Some(list) => parse_augs(list)?,
        };
        let decoding = DecodingConfig {
            cd: CdConfig {
                alpha,
                beta,
                combine_space,
            },
            sampling: SamplingConfig {
                temperature,
                top_p,
                top_k: self.top_k.or(file.top_k).unwrap_or(d.sampling.top_k),
                mode,
            },
            metric,
            max_len,
            aug_set,
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            concurrent_step1: self.concurrent_step1 || file.concurrent_step1.unwrap_or(false),
            ..d
        };
        decoding
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Resolved {
            backend: self
                .backend
                .clone()
                .or_else(|| file.backend.clone())
                .unwrap_or_else(|| DEFAULT_BACKEND.to_string()),
            decoding,
        })
    }
}

pub fn resolve_tau(flag: Option<f64>, file: &FileConfig) -> Result<f64, CliError> {
    field(
        "tau",
        flag.or(file.tau).unwrap_or(0.5),
        |t| t > 0.0 && t <= 1.0,
        "in (0, 1]",
    )
}

pub fn resolve_workers(flag: Option<usize>, file: &FileConfig) -> Result<usize, CliError> {
    let default = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    field(
        "workers",
        flag.or(file.workers).unwrap_or(default),
        |w| w >= 1,
        ">= 1",
    )
}

pub fn resolve_out(flag: Option<PathBuf>, file: &FileConfig, default: &str) -> PathBuf {
    flag.or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}
