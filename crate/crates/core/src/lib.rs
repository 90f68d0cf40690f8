//! Contrastive decoding for vision-language models with image augmentations
//! selected per question.
//!
//! The crate is organised bottom-up: [`imgaug`] produces augmented images,
//! [`backend`] talks to a model, [`cdcore`] holds the numerics, [`decoder`]
//! runs the decoding loop and [`evalharness`] turns runs into reports.
//! [`toyvlm`] is a synthetic model used for tests and demos.

pub mod backend;
pub mod cdcore;
pub mod decoder;
pub mod evalharness;
pub mod imgaug;
pub mod rng;
pub mod toyvlm;

pub use backend::{
    open_backend, Backend, BackendDescriptor, BackendError, CountingBackend, HttpBackend,
    LogitVector, PromptTemplate, Question, TokenSequence,
};
pub use cdcore::{
    CdConfig, CdError, CombineSpace, DistanceMetric, ProbVector, SamplingConfig, SamplingMode,
    ScoreKind, ScoreVector,
};
pub use decoder::{
    calibrate, decode, decode_regular, decode_single_aug, decode_with_selection, CalibrationReport,
    DecodeError, DecodeOutput, DecodeTrace, DecodingConfig, Strategy,
};
pub use imgaug::{
    apply, augmentation_set, AugError, AugKind, Augmentation, AugmentationOp, ImageBuffer,
};
pub use toyvlm::{ToyMode, ToyVlm};

/// Engine version recorded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
