use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{answer_matches, check_images, check_seeds, run_jobs, EvalError, EvalSample};
use crate::backend::Backend;
use crate::cdcore::{cd_combine, gain, DistanceMetric};
use crate::decoder::{decode_regular, first_step, DecodeError, DecodingConfig};
use crate::imgaug::{AugmentationOp, ImageBuffer};

/// Mean Gain and score drop of one augmentation within one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCell {
    pub category: String,
    pub aug: String,
    pub mean_gain: f64,
    /// Regular-decoding accuracy on the original images.
    pub accuracy_original: f64,
    /// Regular-decoding accuracy on the augmented images.
    pub accuracy_augmented: f64,
    /// `100 * (accuracy_original - accuracy_augmented)`.
    pub score_drop: f64,
}

/// Mean Gain of the augmentation ranked `rank` by step-1 distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    /// `"all"` or a category name.
    pub category: String,
    pub rank: usize,
    pub mean_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub category: String,
    pub aug: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainAnalysis {
    pub augs: Vec<String>,
    pub metric: DistanceMetric,
    pub cells: Vec<GainCell>,
    pub ranks: Vec<RankRow>,
    pub selection: Vec<SelectionRow>,
}

impl GainAnalysis {
    pub fn cell(&self, category: &str, aug: &str) -> Option<&GainCell> {
        self.cells
            .iter()
            .find(|c| c.category == category && c.aug == aug)
    }

    pub fn rank(&self, category: &str, rank: usize) -> Option<f64> {
        self.ranks
            .iter()
            .find(|r| r.category == category && r.rank == rank)
            .map(|r| r.mean_gain)
    }

    pub fn categories(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cells.iter().map(|c| c.category.clone()).collect();
        out.dedup();
        out
    }
}

struct Probe {
    category: String,
    chosen: usize,
    distances: Vec<f64>,
    gains: Vec<f64>,
    /// `(original, per augmentation)` regular-decoding correctness.
    correct: Option<(bool, Vec<bool>)>,
}

fn probe(
    sample: &EvalSample,
    image: &ImageBuffer,
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    with_drop: bool,
) -> Result<Probe, DecodeError> {
    let q = sample.to_question();
    let first = first_step(image, &q, cfg, backend)?;
    // The ground-truth token is the first token of the label.
    let y_gt = *backend
        .tokenize(&sample.label)?
        .ids()
        .first()
        .ok_or_else(|| {
            DecodeError::InvalidConfig(format!("label {:?} tokenizes to nothing", sample.label))
        })? as usize;
    let p_reg = first.p_reg.as_slice();
    let gains = first
        .aug_logits
        .iter()
        .map(|f_aug| {
            let p_cd = cd_combine(&first.logits, f_aug, &cfg.cd)?;
            gain(&p_cd.values, p_reg, y_gt)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let correct = if with_drop {
        let ok = |img: &ImageBuffer| {
            decode_regular(img, &q, cfg, backend).map(|o| answer_matches(&o.answer, &sample.label))
        };
        let original = ok(image)?;
        let augmented = first
            .aug_images
            .iter()
            .map(ok)
            .collect::<Result<Vec<_>, _>>()?;
        Some((original, augmented))
    } else {
        None
    };
    Ok(Probe {
        category: sample.category.clone(),
        chosen: first.chosen,
        distances: first.distances,
        gains,
        correct,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Augmentation indices by descending distance; ties keep the lower index first.
fn ranking(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]));
    order
}

fn probe_all(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    seeds: &[u64],
    workers: usize,
    with_drop: bool,
) -> Result<Vec<Probe>, EvalError> {
    check_images(samples, images)?;
    check_seeds(seeds)?;
    cfg.validate()?;
    run_jobs(
        samples,
        seeds,
        workers,
        |seed, i| {
            let c = DecodingConfig {
                seed,
                ..cfg.clone()
            }
            .reseeded(&samples[i].id);
            probe(&samples[i], &images[i], &c, backend, with_drop)
        },
        |_| None,
    )
}

fn summarize(probes: &[Probe], aug_set: &[AugmentationOp], metric: DistanceMetric) -> GainAnalysis {
    let augs: Vec<String> = aug_set.iter().map(ToString::to_string).collect();
    let m = augs.len();
    let mut by_cat: BTreeMap<&str, Vec<&Probe>> = BTreeMap::new();
    for p in probes {
        by_cat.entry(&p.category).or_default().push(p);
    }

    let mut cells = Vec::new();
    let mut selection = Vec::new();
    for (category, ps) in &by_cat {
        let n = ps.len() as f64;
        let acc_orig = ps
            .iter()
            .filter(|p| p.correct.as_ref().is_some_and(|c| c.0))
            .count() as f64
            / n;
        for (i, aug) in augs.iter().enumerate() {
            let gains: Vec<f64> = ps.iter().map(|p| p.gains[i]).collect();
            let acc_aug = ps
                .iter()
                .filter(|p| p.correct.as_ref().is_some_and(|c| c.1[i]))
                .count() as f64
                / n;
            cells.push(GainCell {
                category: category.to_string(),
                aug: aug.clone(),
                mean_gain: mean(&gains),
                accuracy_original: acc_orig,
                accuracy_augmented: acc_aug,
                score_drop: 100.0 * (acc_orig - acc_aug),
            });
            let count = ps.iter().filter(|p| p.chosen == i).count();
            selection.push(SelectionRow {
                category: category.to_string(),
                aug: aug.clone(),
                count,
                frequency: count as f64 / n,
            });
        }
    }

    let mut ranks = Vec::new();
    let groups: Vec<(&str, Vec<&Probe>)> = std::iter::once(("all", probes.iter().collect()))
        .chain(by_cat.iter().map(|(c, ps)| (*c, ps.clone())))
        .collect();
    for (category, ps) in groups {
        let ranked: Vec<Vec<usize>> = ps.iter().map(|p| ranking(&p.distances)).collect();
        for r in 0..m {
            let gains: Vec<f64> = ps
                .iter()
                .zip(&ranked)
                .map(|(p, order)| p.gains[order[r]])
                .collect();
            ranks.push(RankRow {
                category: category.to_string(),
                rank: r + 1,
                mean_gain: mean(&gains),
            });
        }
    }

    GainAnalysis {
        augs,
        metric,
        cells,
        ranks,
        selection,
    }
}

/// Step-1 Gain of every augmentation, the score drop of regular decoding on
/// augmented images, mean Gain by distance rank and selection frequencies,
/// averaged over all samples and seeds. `cfg.aug_set` is the set analysed.
pub fn analyze_gain(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    seeds: &[u64],
    workers: usize,
) -> Result<GainAnalysis, EvalError> {
    let probes = probe_all(samples, images, cfg, backend, seeds, workers, true)?;
    Ok(summarize(&probes, &cfg.aug_set, cfg.metric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub metric: DistanceMetric,
    /// Mean Gain of the augmentation each sample selects under this metric.
    pub mean_gain_selected: f64,
    /// Mean Gain of the augmentation ranked last under this metric.
    pub mean_gain_last: f64,
}

/// Mean Gain of the selected augmentation under each distance metric.
pub fn ablate_distance(
    samples: &[EvalSample],
    images: &[ImageBuffer],
    cfg: &DecodingConfig,
    backend: &dyn Backend,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<AblationRow>, EvalError> {
    DistanceMetric::ALL
        .iter()
        .map(|&metric| {
            let c = DecodingConfig {
                metric,
                ..cfg.clone()
            };
            let probes = probe_all(samples, images, &c, backend, seeds, workers, false)?;
            let a = summarize(&probes, &c.aug_set, metric);
            Ok(AblationRow {
                metric,
                mean_gain_selected: a.rank("all", 1).unwrap_or(0.0),
                mean_gain_last: a.rank("all", c.aug_set.len()).unwrap_or(0.0),
            })
        })
        .collect()
}
