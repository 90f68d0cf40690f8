//! The contrastive decoding loop.
//!
//! At the first step the original image and every augmented image are scored,
//! and the augmentation whose output distribution lies farthest from the
//! original one is kept for the whole sequence. Every step then contrasts the
//! original logits against that augmentation's logits, restricts the result to
//! plausible tokens and samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, LogitVector, PromptTemplate, Question, TokenSequence};
use crate::cdcore::{
    argmax, cd_combine, distance, plausibility_mask, sample_token, softmax, softmax_slice,
    CdConfig, CdError, DistanceMetric, ProbVector, SamplingConfig,
};
use crate::imgaug::{apply, augmentation_set, AugError, AugmentationOp, ImageBuffer};
use crate::rng::{derive_seed, hash_str};

const AUG_STREAM: u64 = 0xA11C;
const SAMPLE_STREAM: u64 = 0x5A3F;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cd(#[from] CdError),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error("invalid decoding config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Use the full augmentation set.
    All,
    /// Use the subset kept by calibration.
    Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub cd: CdConfig,
    pub sampling: SamplingConfig,
    pub metric: DistanceMetric,
    pub max_len: usize,
    pub strategy: Strategy,
    pub aug_set: Vec<AugmentationOp>,
    pub seed: u64,
    #[serde(default)]
    pub prompt: PromptTemplate,
    /// Issue the step-1 augmented requests in parallel.
    #[serde(default)]
    pub concurrent_step1: bool,
    /// Overrides the backend's advertised end-of-sequence id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<u32>,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            cd: CdConfig::default(),
            sampling: SamplingConfig::default(),
            metric: DistanceMetric::L2,
            max_len: 8,
            strategy: Strategy::All,
            aug_set: augmentation_set(),
            seed: 0,
            prompt: PromptTemplate::default(),
            concurrent_step1: false,
            eos_id: None,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.aug_set.is_empty() {
            return Err(DecodeError::InvalidConfig(
                "aug_set must be non-empty".into(),
            ));
        }
        if self.max_len == 0 {
            return Err(DecodeError::InvalidConfig("max_len must be >= 1".into()));
        }
        for op in &self.aug_set {
            op.aug.validate()?;
        }
        self.cd.validate()?;
        self.sampling.validate()?;
        Ok(())
    }

    /// Copy with the seed mixed with `stream` (e.g. a sample id).
    pub fn reseeded(&self, stream: &str) -> Self {
        Self {
            seed: derive_seed(self.seed, hash_str(stream)),
            ..self.clone()
        }
    }

    pub fn with_aug_set(&self, aug_set: Vec<AugmentationOp>) -> Self {
        Self {
            aug_set,
            ..self.clone()
        }
    }

    fn step_seed(&self, step: usize) -> u64 {
        derive_seed(derive_seed(self.seed, SAMPLE_STREAM), step as u64)
    }

    /// The op actually applied for this sequence: its seed mixed with ours.
    pub fn sequence_op(&self, op: &AugmentationOp) -> AugmentationOp {
        op.with_seed(derive_seed(derive_seed(self.seed, AUG_STREAM), op.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token: u32,
    /// Size of the plausible candidate set sampled from.
    pub candidates: usize,
    pub backend_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugDistance {
    pub aug: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    /// `None` for regular decoding.
    pub chosen_aug: Option<AugmentationOp>,
    pub chosen_index: Option<usize>,
    pub per_step: Vec<StepRecord>,
    /// Step-1 distances in `aug_set` order.
    pub distances_at_t1: Vec<AugDistance>,
}

impl DecodeTrace {
    pub fn tokens(&self) -> TokenSequence {
        TokenSequence(self.per_step.iter().map(|s| s.token).collect())
    }

    pub fn total_calls(&self) -> usize {
        self.per_step.iter().map(|s| s.backend_calls).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub answer: String,
    pub trace: DecodeTrace,
}

/// Everything computed at the first step, before any token is chosen.
#[derive(Debug, Clone)]
pub struct FirstStep {
    pub prompt: String,
    pub logits: LogitVector,
    pub p_reg: ProbVector,
    pub aug_images: Vec<ImageBuffer>,
    pub aug_logits: Vec<LogitVector>,
    pub aug_probs: Vec<ProbVector>,
    pub distances: Vec<f64>,
    /// Index into `aug_set` of the farthest augmentation (lowest index on ties).
    pub chosen: usize,
}

fn check_vocab(expected: usize, got: &LogitVector) -> Result<(), DecodeError> {
    if got.len() == expected {
        Ok(())
    } else {
        Err(CdError::ShapeMismatch {
            left: expected,
            right: got.len(),
        }
        .into())
    }
}

/// Score the original and every augmented image and pick the farthest
/// augmentation. Costs `aug_set.len() + 1` backend calls.
pub fn first_step(
    image: &ImageBuffer,
    question: &Question,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
) -> Result<FirstStep, DecodeError> {
    cfg.validate()?;
    let prompt = cfg.prompt.render(question);
    let empty = TokenSequence::new();
    let aug_images = cfg
        .aug_set
        .iter()
        .map(|op| apply(&cfg.sequence_op(op), image))
        .collect::<Result<Vec<_>, _>>()?;

    let logits = backend.next_logits(image, &prompt, &empty)?;
    let aug_logits: Vec<LogitVector> = if cfg.concurrent_step1 {
        aug_images
            .par_iter()
            .map(|img| backend.next_logits(img, &prompt, &empty))
            .collect::<Result<_, _>>()?
    } else {
        aug_images
            .iter()
            .map(|img| backend.next_logits(img, &prompt, &empty))
            .collect::<Result<_, _>>()?
    };
    for l in &aug_logits {
        check_vocab(logits.len(), l)?;
    }

    let p_reg = softmax(&logits);
    let aug_probs: Vec<ProbVector> = aug_logits.iter().map(softmax).collect();
    let distances = aug_probs
        .iter()
        .map(|q| distance(&p_reg, q, cfg.metric))
        .collect::<Result<Vec<_>, _>>()?;
    let chosen = argmax(&distances);
    Ok(FirstStep {
        prompt,
        logits,
        p_reg,
        aug_images,
        aug_logits,
        aug_probs,
        distances,
        chosen,
    })
}

fn resolve_eos(cfg: &DecodingConfig, backend: &dyn Backend) -> Result<Option<u32>, DecodeError> {
    match cfg.eos_id {
        Some(id) => Ok(Some(id)),
        None => Ok(backend.info()?.eos_id),
    }
}

fn finish(
    backend: &dyn Backend,
    eos: Option<u32>,
    chosen_aug: Option<(usize, AugmentationOp)>,
    per_step: Vec<StepRecord>,
    distances_at_t1: Vec<AugDistance>,
) -> Result<DecodeOutput, DecodeError> {
    let ids: Vec<u32> = per_step
        .iter()
        .map(|s| s.token)
        .filter(|t| Some(*t) != eos)
        .collect();
    let answer = backend.detokenize(&TokenSequence(ids))?;
    let (chosen_index, chosen_aug) = match chosen_aug {
        Some((i, op)) => (Some(i), Some(op)),
        None => (None, None),
    };
    Ok(DecodeOutput {
        answer,
        trace: DecodeTrace {
            chosen_aug,
            chosen_index,
            per_step,
            distances_at_t1,
        },
    })
}

/// Contrastive decoding over `cfg.aug_set`.
pub fn decode(
    image: &ImageBuffer,
    question: &Question,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
) -> Result<DecodeOutput, DecodeError> {
    let eos = resolve_eos(cfg, backend)?;
    let first = first_step(image, question, cfg, backend)?;
    let chosen = first.chosen;
    let aug_image = &first.aug_images[chosen];
    let inv_t = 1.0 / cfg.sampling.temperature;

    let mut prefix = TokenSequence::new();
    let mut per_step = Vec::new();
    for step in 1..=cfg.max_len {
        let (f, f_aug, calls) = if step == 1 {
            (
                first.logits.clone(),
                first.aug_logits[chosen].clone(),
                cfg.aug_set.len() + 1,
            )
        } else {
            let f = backend.next_logits(image, &first.prompt, &prefix)?;
            let f_aug = backend.next_logits(aug_image, &first.prompt, &prefix)?;
            (f, f_aug, 2)
        };
        check_vocab(first.logits.len(), &f)?;
        check_vocab(first.logits.len(), &f_aug)?;
        let scores = cd_combine(&f.scaled(inv_t), &f_aug.scaled(inv_t), &cfg.cd)?;
        let masked = plausibility_mask(&softmax(&f), &scores, cfg.cd.beta)?;
        let token = sample_token(
            &masked.scores.sampling_weights(),
            &cfg.sampling,
            cfg.step_seed(step),
        )? as u32;
        per_step.push(StepRecord {
            token,
            candidates: masked.candidates.len(),
            backend_calls: calls,
        });
        prefix.push(token);
        if Some(token) == eos {
            break;
        }
    }

    let distances = cfg
        .aug_set
        .iter()
        .zip(&first.distances)
        .map(|(op, d)| AugDistance {
            aug: op.to_string(),
            distance: *d,
        })
        .collect();
    finish(
        backend,
        eos,
        Some((chosen, cfg.aug_set[chosen].clone())),
        per_step,
        distances,
    )
}

/// Plain sampling from the original image, with the same sampling config and
/// per-step seeds as [`decode`]. One backend call per step.
pub fn decode_regular(
    image: &ImageBuffer,
    question: &Question,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
) -> Result<DecodeOutput, DecodeError> {
    if cfg.max_len == 0 {
        return Err(DecodeError::InvalidConfig("max_len must be >= 1".into()));
    }
    cfg.sampling.validate()?;
    let eos = resolve_eos(cfg, backend)?;
    let prompt = cfg.prompt.render(question);
    let inv_t = 1.0 / cfg.sampling.temperature;
    let mut prefix = TokenSequence::new();
    let mut per_step = Vec::new();
    for step in 1..=cfg.max_len {
        let f = backend.next_logits(image, &prompt, &prefix)?;
        let weights = softmax_slice(f.scaled(inv_t).as_slice());
        let token = sample_token(&weights, &cfg.sampling, cfg.step_seed(step))? as u32;
        per_step.push(StepRecord {
            token,
            candidates: f.len(),
            backend_calls: 1,
        });
        prefix.push(token);
        if Some(token) == eos {
            break;
        }
    }
    finish(backend, eos, None, per_step, Vec::new())
}

pub fn decode_single_aug(
    image: &ImageBuffer,
    question: &Question,
    aug: &AugmentationOp,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
) -> Result<DecodeOutput, DecodeError> {
    decode(
        image,
        question,
        &cfg.with_aug_set(vec![aug.clone()]),
        backend,
    )
}

pub fn decode_with_selection(
    image: &ImageBuffer,
    question: &Question,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    calibration: &CalibrationReport,
) -> Result<DecodeOutput, DecodeError> {
    decode(
        image,
        question,
        &cfg.with_aug_set(calibration.kept.clone()),
        backend,
    )
}

/// Step-1 selection counts over a calibration split and the kept subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub augmentations: Vec<AugmentationOp>,
    pub counts: Vec<usize>,
    pub n: usize,
    pub m: usize,
    pub tau: f64,
    /// `tau * n / m`.
    pub threshold: f64,
    pub kept: Vec<AugmentationOp>,
    /// True when nothing met the threshold and the most-selected op was kept.
    pub fallback: bool,
}

impl CalibrationReport {
    /// Keep `{i : counts[i] >= tau * N / M}` in `augmentations` order; if that
    /// is empty keep the most-selected augmentation (lowest index on ties).
    pub fn from_counts(
        augmentations: Vec<AugmentationOp>,
        counts: Vec<usize>,
        tau: f64,
    ) -> Result<Self, DecodeError> {
        if augmentations.is_empty() || augmentations.len() != counts.len() {
            return Err(DecodeError::InvalidConfig(format!(
                "calibration needs one count per augmentation ({} vs {})",
                augmentations.len(),
                counts.len()
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(DecodeError::InvalidConfig(format!(
                "tau must be > 0, got {tau}"
            )));
        }
        let n: usize = counts.iter().sum();
        let m = augmentations.len();
        let threshold = tau * n as f64 / m as f64;
        let mut kept: Vec<AugmentationOp> = augmentations
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c as f64 >= threshold)
            .map(|(op, _)| op.clone())
            .collect();
        let fallback = kept.is_empty();
        if fallback {
            let mut best = 0;
            for (i, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = i;
                }
            }
            kept.push(augmentations[best].clone());
        }
        Ok(Self {
            augmentations,
            counts,
            n,
            m,
            tau,
            threshold,
            kept,
            fallback,
        })
    }
}

/// One calibration query; `seed` is the per-sample seed stream.
pub struct CalibrationQuery<'a> {
    pub image: &'a ImageBuffer,
    pub question: &'a Question,
    pub stream: &'a str,
}

/// Run step 1 on every query and count which augmentation each selects.
pub fn calibrate(
    queries: &[CalibrationQuery<'_>],
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    tau: f64,
) -> Result<CalibrationReport, DecodeError> {
    if queries.is_empty() {
        return Err(DecodeError::InvalidConfig(
            "calibration needs at least one sample".into(),
        ));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(DecodeError::InvalidConfig(format!(
            "tau must be in (0, 1], got {tau}"
        )));
    }
    cfg.validate()?;
    let picks = queries
        .par_iter()
        .map(|q| {
            first_step(q.image, q.question, &cfg.reseeded(q.stream), backend).map(|s| s.chosen)
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let mut counts = vec![0usize; cfg.aug_set.len()];
    for i in picks {
        counts[i] += 1;
    }
    CalibrationReport::from_counts(cfg.aug_set.clone(), counts, tau)
}
