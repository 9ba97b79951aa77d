//! Algorithmic core of the FloodNet VQA fusion-head baseline.
//!
//! Everything here is pure computation over in-memory data and builds without
//! `std` (only `alloc` is required). File formats, encoders and the command
//! line live in the `floodvqa` companion crate.
//!
//! The pipeline this crate supports:
//!
//! 1. [`vocab`] fixes the 56-way answer space and the five question types.
//! 2. [`split`] partitions question/answer pairs into image-disjoint sides.
//! 3. [`fusion`] maps an (image vector, text vector) pair to 56 logits with a
//!    concatenate, add or multiply head.
//! 4. [`train`] fits a head with Adam on cross-entropy ([`loss`], [`optim`]).
//! 5. [`eval`] scores a head and aggregates per-question-type accuracy.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod fusion;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod qa;
pub mod split;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use eval::{decompose_check, AccuracyTally, EvalReport};
pub use fusion::{Activation, FusionConfig, FusionMethod, FusionModel};
pub use qa::QAPair;
pub use split::{split_by_image, type_histogram, DatasetSplit};
pub use train::{EpochStats, FeatureSet, TrainConfig, Trainer};
pub use vocab::{LabelVocabulary, QuestionType, NUM_CLASSES};
