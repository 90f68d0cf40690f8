//! Single-image visual augmentations.
//!
//! Each augmentation is a pure function of `(parameters, seed, image)`.
//! [`augmentation_set`] returns the canonical seven in the fixed order the
//! decoder relies on for tie-breaking.

mod image;
pub(crate) mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::image::{ImageBuffer, CHANNELS};

/// Smallest side length Crop and Erase accept.
pub const MIN_REGION_SIDE: usize = 8;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AugError {
    #[error("image-too-small: {kind} needs at least {min}x{min}, got {width}x{height}")]
    ImageTooSmall {
        kind: AugKind,
        min: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid parameter for {kind}: {message}")]
    InvalidParam { kind: AugKind, message: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image codec error: {0}")]
    Codec(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown augmentation kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugKind {
    Color,
    Flip,
    Crop,
    Erase,
    Sharp,
    Edge,
    Noise,
    /// No-op control, never part of the canonical set.
    Identity,
}

impl AugKind {
    /// The canonical seven, in canonical order.
    pub const CANONICAL: [AugKind; 7] = [
        AugKind::Color,
        AugKind::Edge,
        AugKind::Sharp,
        AugKind::Crop,
        AugKind::Erase,
        AugKind::Flip,
        AugKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::Color => "color",
            AugKind::Flip => "flip",
            AugKind::Crop => "crop",
            AugKind::Erase => "erase",
            AugKind::Sharp => "sharp",
            AugKind::Edge => "edge",
            AugKind::Noise => "noise",
            AugKind::Identity => "identity",
        }
    }

    pub fn uses_seed(self) -> bool {
        matches!(self, AugKind::Crop | AugKind::Erase | AugKind::Noise)
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugKind {
    type Err = AugError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "color" => Ok(AugKind::Color),
            "flip" => Ok(AugKind::Flip),
            "crop" => Ok(AugKind::Crop),
            "erase" => Ok(AugKind::Erase),
            "sharp" => Ok(AugKind::Sharp),
            "edge" => Ok(AugKind::Edge),
            "noise" => Ok(AugKind::Noise),
            "identity" => Ok(AugKind::Identity),
            _ => Err(AugError::UnknownKind(s.to_string())),
        }
    }
}

/// An augmentation together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Augmentation {
    /// Per-channel inversion `v -> 255 - v`.
    Color,
    /// Horizontal flip followed by vertical flip.
    Flip,
    /// Random rectangle with side fractions drawn from `[min_frac, max_frac]`
    /// per dimension, resampled bilinearly back to the input size.
    Crop {
        min_frac: f64,
        max_frac: f64,
    },
    /// One filled rectangle with area fraction in `[min_area, max_area]` and
    /// aspect ratio (height / width) in `[min_aspect, max_aspect]`.
    Erase {
        min_area: f64,
        max_area: f64,
        min_aspect: f64,
        max_aspect: f64,
        fill: [u8; 3],
    },
    /// Unsharp masking: `img + strength * (img - blur_sigma(img))`.
    Sharp {
        sigma: f64,
        strength: f64,
    },
    /// Sobel magnitude of Rec. 601 luma, normalized to `[0, 255]`.
    Edge,
    /// Diffusion forward process at `step` of a linear beta schedule.
    Noise {
        beta_start: f64,
        beta_end: f64,
        num_steps: usize,
        step: usize,
    },
    Identity,
}

impl Augmentation {
    pub fn default_for(kind: AugKind) -> Self {
        match kind {
            AugKind::Color => Augmentation::Color,
            AugKind::Flip => Augmentation::Flip,
            AugKind::Crop => Augmentation::Crop {
                min_frac: 0.4,
                max_frac: 0.8,
            },
            AugKind::Erase => Augmentation::Erase {
                min_area: 0.2,
                max_area: 0.5,
                min_aspect: 0.5,
                max_aspect: 2.0,
                fill: [128, 128, 128],
            },
            AugKind::Sharp => Augmentation::Sharp {
                sigma: 2.0,
                strength: 3.0,
            },
            AugKind::Edge => Augmentation::Edge,
            AugKind::Noise => Augmentation::Noise {
                beta_start: 1e-4,
                beta_end: 0.02,
                num_steps: 1000,
                step: 500,
            },
            AugKind::Identity => Augmentation::Identity,
        }
    }

    pub fn kind(&self) -> AugKind {
        match self {
            Augmentation::Color => AugKind::Color,
            Augmentation::Flip => AugKind::Flip,
            Augmentation::Crop { .. } => AugKind::Crop,
            Augmentation::Erase { .. } => AugKind::Erase,
            Augmentation::Sharp { .. } => AugKind::Sharp,
            Augmentation::Edge => AugKind::Edge,
            Augmentation::Noise { .. } => AugKind::Noise,
            Augmentation::Identity => AugKind::Identity,
        }
    }

    pub fn validate(&self) -> Result<(), AugError> {
        let kind = self.kind();
        let bad = |message: String| Err(AugError::InvalidParam { kind, message });
        match *self {
            Augmentation::Crop { min_frac, max_frac } => {
                if !(0.0 < min_frac && min_frac <= max_frac && max_frac <= 1.0) {
                    return bad(format!(
                        "need 0 < min_frac <= max_frac <= 1, got [{min_frac}, {max_frac}]"
                    ));
                }
            }
            Augmentation::Erase {
                min_area,
                max_area,
                min_aspect,
                max_aspect,
                ..
            } => {
                if !(0.0 < min_area && min_area <= max_area && max_area <= 1.0) {
                    return bad(format!(
                        "need 0 < min_area <= max_area <= 1, got [{min_area}, {max_area}]"
                    ));
                }
                if !(0.0 < min_aspect && min_aspect <= max_aspect && max_aspect.is_finite()) {
                    return bad(format!(
                        "need 0 < min_aspect <= max_aspect, got [{min_aspect}, {max_aspect}]"
                    ));
                }
            }
            Augmentation::Sharp { sigma, strength } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return bad(format!("sigma must be positive, got {sigma}"));
                }
                if !(strength >= 0.0 && strength.is_finite()) {
                    return bad(format!("strength must be non-negative, got {strength}"));
                }
            }
            Augmentation::Noise {
                beta_start,
                beta_end,
                num_steps,
                step,
            } => {
                if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
                    return bad(format!(
                        "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
                    ));
                }
                if num_steps == 0 || step == 0 || step > num_steps {
                    return bad(format!(
                        "need 1 <= step <= num_steps, got {step}/{num_steps}"
                    ));
                }
            }
            Augmentation::Color
            | Augmentation::Flip
            | Augmentation::Edge
            | Augmentation::Identity => {}
        }
        Ok(())
    }
}

/// An augmentation plus the seed its random choices are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub aug: Augmentation,
    pub seed: u64,
}

impl AugmentationOp {
    pub fn new(aug: Augmentation, seed: u64) -> Self {
        Self { aug, seed }
    }

    pub fn of_kind(kind: AugKind) -> Self {
        Self::new(Augmentation::default_for(kind), 0)
    }

    pub fn identity() -> Self {
        Self::of_kind(AugKind::Identity)
    }

    pub fn kind(&self) -> AugKind {
        self.aug.kind()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            aug: self.aug.clone(),
            seed,
        }
    }
}

impl fmt::Display for AugmentationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.kind(), f)
    }
}

/// The seven canonical augmentations with default parameters, in the order
/// `[Color, Edge, Sharp, Crop, Erase, Flip, Noise]`.
pub fn augmentation_set() -> Vec<AugmentationOp> {
    AugKind::CANONICAL
        .iter()
        .map(|&k| AugmentationOp::of_kind(k))
        .collect()
}

/// Apply `op` to `img`, returning a new image of the same size.
pub fn apply(op: &AugmentationOp, img: &ImageBuffer) -> Result<ImageBuffer, AugError> {
    op.aug.validate()?;
    match op.aug {
        Augmentation::Identity => Ok(img.clone()),
        Augmentation::Color => Ok(ops::invert(img)),
        Augmentation::Flip => Ok(ops::rotate_half_turn(img)),
        Augmentation::Crop { min_frac, max_frac } => {
            require_region(op.kind(), img)?;
            Ok(ops::random_crop(img, min_frac, max_frac, op.seed))
        }
        Augmentation::Erase {
            min_area,
            max_area,
            min_aspect,
            max_aspect,
            fill,
        } => {
            require_region(op.kind(), img)?;
            Ok(ops::random_erase(
                img,
                (min_area, max_area),
                (min_aspect, max_aspect),
                fill,
                op.seed,
            ))
        }
        Augmentation::Sharp { sigma, strength } => Ok(ops::unsharp_mask(img, sigma, strength)),
        Augmentation::Edge => Ok(ops::sobel_edges(img)),
        Augmentation::Noise {
            beta_start,
            beta_end,
            num_steps,
            step,
        } => {
            let alpha_bar = ops::linear_alpha_bar(beta_start, beta_end, num_steps, step);
            Ok(ops::diffusion_noise(img, alpha_bar, op.seed))
        }
    }
}

fn require_region(kind: AugKind, img: &ImageBuffer) -> Result<(), AugError> {
    if img.width() < MIN_REGION_SIDE || img.height() < MIN_REGION_SIDE {
        return Err(AugError::ImageTooSmall {
            kind,
            min: MIN_REGION_SIDE,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}
