//! Benchmark evaluation: datasets, decoding methods, MME-style scores,
//! CircularEval, the augmentation analyses and report files.

mod analysis;
mod dataset;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Question};
use crate::decoder::{
    calibrate, decode, decode_regular, decode_single_aug, decode_with_selection, CalibrationQuery,
    CalibrationReport, DecodeError, DecodeOutput, DecodingConfig,
};
use crate::imgaug::{AugmentationOp, ImageBuffer};

pub use self::analysis::{
    ablate_distance, analyze_gain, AblationRow, GainAnalysis, GainCell, RankRow, SelectionRow,
};
pub use self::dataset::{
    generate_toy_dataset, generate_toy_mcq, load_dataset, load_images, EvalSample, TOY_CATEGORIES,
};
pub use self::report::{format_f, write_ablation, write_partial, write_report};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing-image: {}", .0.display())]
    MissingImage(PathBuf),
    #[error("not-mcq: sample {0} has no options")]
    NotMcq(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    /// A sample failed; `partial` holds the records completed before the abort.
    #[error("evaluation aborted at sample {sample}: {source}")]
    Aborted {
        sample: String,
        source: DecodeError,
        partial: Vec<SampleRecord>,
    },
    #[error("report inconsistency: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Regular,
    Single(AugmentationOp),
    VacodeAll,
    VacodeSelection(CalibrationReport),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Regular => f.write_str("regular"),
            Method::Single(op) => write!(f, "single:{op}"),
            Method::VacodeAll => f.write_str("vacode_all"),
            Method::VacodeSelection(_) => f.write_str("vacode_selection"),
        }
    }
}

impl Method {
    pub fn run(
        &self,
        image: &ImageBuffer,
        question: &Question,
        cfg: &DecodingConfig,
        backend: &dyn Backend,
    ) -> Result<DecodeOutput, DecodeError> {
        match self {
            Method::Regular => decode_regular(image, question, cfg, backend),
            Method::Single(op) => decode_single_aug(image, question, op, cfg, backend),
            Method::VacodeAll => decode(image, question, cfg, backend),
            Method::VacodeSelection(cal) => {
                decode_with_selection(image, question, cfg, backend, cal)
            }
        }
    }
}

/// The first answer word, case-insensitively equal to the label.
pub fn answer_matches(answer: &str, label: &str) -> bool {
    answer
        .split_whitespace()
        .next()
        .is_some_and(|w| w.to_lowercase() == label.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub id: String,
    pub category: String,
    pub pair_id: Option<String>,
    pub label: String,
    pub answer: String,
    pub correct: bool,
    pub chosen_aug: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub n: usize,
    pub accuracy: f64,
    pub accuracy_plus: f64,
    pub mme_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub categories: Vec<CategoryScore>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedScores>,
    /// Per-category means over seeds.
    pub mean: Vec<CategoryScore>,
    pub mean_total: f64,
    pub records: Vec<SampleRecord>,
    pub config: DecodingConfig,
}

impl EvalReport {
    pub fn mean_of(&self, category: &str) -> Option<&CategoryScore> {
        self.mean.iter().find(|c| c.category == category)
    }
}

/// Accuracy, accuracy+ and MME score per category, categories sorted by name.
/// Samples sharing a `pair_id` form one accuracy+ unit; a sample without one
/// is a unit by itself.
pub fn score_records(records: &[SampleRecord]) -> Vec<CategoryScore> {
    let mut by_cat: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        by_cat.entry(&r.category).or_default().push(r);
    }
    by_cat
        .into_iter()
        .map(|(category, rs)| {
            let n = rs.len();
            let correct = rs.iter().filter(|r| r.correct).count();
            let mut units: BTreeMap<&str, bool> = BTreeMap::new();
            for r in &rs {
                let key = r.pair_id.as_deref().unwrap_or(&r.id);
                *units.entry(key).or_insert(true) &= r.correct;
            }
            let accuracy = correct as f64 / n as f64;
            let accuracy_plus = units.values().filter(|c| **c).count() as f64 / units.len() as f64;
            CategoryScore {
                category: category.to_string(),
                n,
                accuracy,
                accuracy_plus,
                mme_score: 100.0 * accuracy + 100.0 * accuracy_plus,
            }
        })
        .collect()
}

fn assemble(
    method: String,
    seeds: &[u64],
    mut records: Vec<SampleRecord>,
    cfg: &DecodingConfig,
) -> EvalReport {
    records.sort_by(|a, b| (a.seed, &a.id).cmp(&(b.seed, &b.id)));
    let per_seed: Vec<SeedScores> = seeds
        .iter()
        .map(|&seed| {
            let rs: Vec<SampleRecord> =
                records.iter().filter(|r| r.seed == seed).cloned().collect();
            let categories = score_records(&rs);
            let total = categories.iter().map(|c| c.mme_score).sum();
            SeedScores {
                seed,
                categories,
                total,
            }
        })
        .collect();
    let k = per_seed.len() as f64;
    let mean: Vec<CategoryScore> = per_seed
        .first()
        .map(|first| {
            first
                .categories
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let avg = |f: fn(&CategoryScore) -> f64| {
                        per_seed.iter().map(|s| f(&s.categories[i])).sum::<f64>() / k
                    };
                    CategoryScore {
                        category: c.category.clone(),
                        n: c.n,
                        accuracy: avg(|c| c.accuracy),
                        accuracy_plus: avg(|c| c.accuracy_plus),
                        mme_score: avg(|c| c.mme_score),
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    let mean_total = per_seed.iter().map(|s| s.total).sum::<f64>() / k;
    EvalReport {
        method,
        seeds: seeds.to_vec(),
        per_seed,
        mean,
        mean_total,
        records,
        config: cfg.clone(),
    }
}

/// Recompute every category row from the raw records and check the MME
/// identity, the 200-point cap and the totals.
pub fn verify_report(report: &EvalReport) -> Result<(), EvalError> {
    for s in &report.per_seed {
        let rs: Vec<SampleRecord> = report
            .records
            .iter()
            .filter(|r| r.seed == s.seed)
            .cloned()
            .collect();
        let fresh = score_records(&rs);
        if fresh != s.categories {
            return Err(EvalError::Inconsistent(format!(
                "seed {} category rows differ from records",
                s.seed
            )));
        }
        for c in &s.categories {
            if (c.mme_score - 100.0 * (c.accuracy + c.accuracy_plus)).abs() > 1e-9
                || c.mme_score > 200.0 + 1e-9
            {
                return Err(EvalError::Inconsistent(format!(
                    "category {} score {}",
                    c.category, c.mme_score
                )));
            }
        }
        let total: f64 = s.categories.iter().map(|c| c.mme_score).sum();
        if (total - s.total).abs() > 1e-9 {
            return Err(EvalError::Inconsistent(format!(
                "seed {} total {} != {total}",
                s.seed, s.total
            )));
        }
    }
    let mean = report.per_seed.iter().map(|s| s.total).sum::<f64>() / report.per_seed.len() as f64;
    if (mean - report.mean_total).abs() > 1e-9 {
        return Err(EvalError::Inconsistent(format!(
            "mean total {} != {mean}",
            report.mean_total
        )));
    }
    Ok(())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Io(format!("thread pool: {e}")))
}

/// Run every (seed, sample) job, keeping file order within a seed.
fn run_jobs<T, F>(
    samples: &[EvalSample],
    seeds: &[u64],
    workers: usize,
    job: F,
    partial: fn(&T) -> Option<SampleRecord>,
) -> Result<Vec<T>, EvalError>
where
    T: Send,
    F: Fn(u64, usize) -> Result<T, DecodeError> + Sync,
{
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&s| (0..samples.len()).map(move |i| (s, i)))
        .collect();
    let results: Vec<Result<T, DecodeError>> =
        pool(workers)?.install(|| jobs.par_iter().map(|&(s, i)| job(s, i)).collect());
    let mut done = Vec::with_capacity(results.len());
    let mut failure = None;
    for (r, (_, i)) in results.into_iter().zip(&jobs) {
        match r {
            Ok(t) => done.push(t),
            Err(e) if failure.is_none() => failure = Some((samples[*i].id.clone(), e)),
            Err(_) => {}
        }
    }
    match failure {
        None => Ok(done),
        Some((sample, source)) => {
            let mut partial: Vec<SampleRecord> = done.iter().filter_map(partial).collect();
            partial.sort_by(|a, b| (a.seed, &a.id).cmp(&(b.seed, &b.id)));
            Err(EvalError::Aborted {
                sample,
                source,
                partial,
            })
        }
    }
}

fn check_seeds(seeds: &[u64]) -> Result<(), EvalError> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if seeds.is_empty() || sorted.len() != seeds.len() {
        return Err(EvalError::Invalid(format!(
            "seeds must be non-empty and distinct, got {seeds:?}"
        )));
    }
    Ok(())
}

fn check_images(samples: &[EvalSample], images: &[ImageBuffer]) -> Result<(), EvalError> {
    if samples.len() != images.len() {
        return Err(EvalError::Invalid(format!(
            "{} samples but {} images",
            samples.len(),
            images.len()
        )));
    }
    if samples.is_empty() {
        return Err(EvalError::Invalid("no samples".into()));
    }
    Ok(())
}

/// Calibrate the selection strategy on a held-out split: step 1 runs once
/// per sample under `cfg.seed`, seeded by the sample id.
pub fn calibrate_samples(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    tau: f64,
) -> Result<CalibrationReport, EvalError> {
    check_images(samples, images)?;
    let questions: Vec<Question> = samples.iter().map(EvalSample::to_question).collect();
    let queries: Vec<CalibrationQuery> = samples
        .iter()
        .zip(images)
        .zip(&questions)
        .map(|((s, image), question)| CalibrationQuery {
            image,
            question,
            stream: &s.id,
        })
        .collect();
    Ok(calibrate(&queries, cfg, backend, tau)?)
}

/// Evaluate `method` on every sample under each seed. `images[i]` belongs to
/// `samples[i]`. Per-sample seeds are derived from the run seed and sample id,
/// so results do not depend on `workers`.
pub fn evaluate(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    method: &Method,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    seeds: &[u64],
    workers: usize,
) -> Result<EvalReport, EvalError> {
    check_images(samples, images)?;
    check_seeds(seeds)?;
    cfg.validate()?;
    let records = run_jobs(
        samples,
        seeds,
        workers,
        |seed, i| {
            let s = &samples[i];
            let c = DecodingConfig {
                seed,
                ..cfg.clone()
            }
            .reseeded(&s.id);
            let out = method.run(&images[i], &s.to_question(), &c, backend)?;
            Ok(SampleRecord {
                seed,
                id: s.id.clone(),
                category: s.category.clone(),
                pair_id: s.pair_id.clone(),
                label: s.label.clone(),
                correct: answer_matches(&out.answer, &s.label),
                answer: out.answer,
                chosen_aug: out.trace.chosen_aug.map(|op| op.to_string()),
            })
        },
        |r| Some(r.clone()),
    )?;
    let report = assemble(method.to_string(), seeds, records, cfg);
    verify_report(&report)?;
    Ok(report)
}

/// The `r`-th rotation of a sample's options: option texts shift by `r`
/// positions under fixed letters, and the label follows its text.
pub fn rotate_options(
    sample: &EvalSample,
    r: usize,
) -> Result<(Vec<(String, String)>, String), EvalError> {
    let k = sample.options.len();
    if k < 2 {
        return Err(EvalError::NotMcq(sample.id.clone()));
    }
    let truth = sample
        .options
        .iter()
        .position(|(l, _)| l.eq_ignore_ascii_case(&sample.label))
        .ok_or_else(|| {
            EvalError::Invalid(format!("sample {}: label not among options", sample.id))
        })?;
    let options: Vec<(String, String)> = (0..k)
        .map(|j| {
            (
                sample.options[j].0.clone(),
                sample.options[(j + r) % k].1.clone(),
            )
        })
        .collect();
    let new_pos = (truth + k - r % k) % k;
    Ok((options, sample.options[new_pos].0.clone()))
}

/// CircularEval: a sample with k options is correct only if all k rotations
/// are answered correctly. The record's answer is the unrotated one.
pub fn circular_eval(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    method: &Method,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    seeds: &[u64],
    workers: usize,
) -> Result<EvalReport, EvalError> {
    check_images(samples, images)?;
    check_seeds(seeds)?;
    cfg.validate()?;
    let rotations = samples
        .iter()
        .map(|s| {
            (0..s.options.len().max(1))
                .map(|r| rotate_options(s, r))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let records = run_jobs(
        samples,
        seeds,
        workers,
        |seed, i| {
            let s = &samples[i];
            let mut first = None;
            let mut all = true;
            for (r, (options, label)) in rotations[i].iter().enumerate() {
                let c = DecodingConfig {
                    seed,
                    ..cfg.clone()
                }
                .reseeded(&format!("{}#{r}", s.id));
                let q = Question::with_options(s.question.clone(), options.clone());
                let out = method.run(&images[i], &q, &c, backend)?;
                all &= answer_matches(&out.answer, label);
                first.get_or_insert(out);
            }
            let out = first.expect("at least two rotations");
            Ok(SampleRecord {
                seed,
                id: s.id.clone(),
                category: s.category.clone(),
                pair_id: s.pair_id.clone(),
                label: s.label.clone(),
                answer: out.answer,
                correct: all,
                chosen_aug: out.trace.chosen_aug.map(|op| op.to_string()),
            })
        },
        |r| Some(r.clone()),
    )?;
    let report = assemble(format!("circular:{method}"), seeds, records, cfg);
    verify_report(&report)?;
    Ok(report)
}
