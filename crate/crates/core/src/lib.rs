//! A self-contained laboratory for one-shot class forgetting in dense networks.
//!
//! The crate trains multi-layer perceptrons whose classes are additionally
//! anchored to per-class random signals ("mnemonic codes"), estimates
//! per-parameter sensitivity from empirical Fisher diagonals, and removes a
//! class from a trained model with a single signed parameter perturbation.
//! Everything runs in `f64` on the CPU and is deterministic under a fixed
//! seed.
//!
//! Module map:
//!
//! - [`nn`]: the dense-network engine (forward, reverse-mode gradients,
//!   softmax cross-entropy, SGD with weight decay and cosine schedule).
//! - [`params`]: flat parameter storage with named layer segmentation.
//! - [`data`]: MNIST IDX ingestion, synthetic Gaussian-cluster datasets,
//!   and input standardization.
//! - [`codebook`]: generation and persistence of mnemonic codebooks.
//! - [`train`]: training loops (plain, code-mixed, class-excluded oracle,
//!   short fine-tuning).
//! - [`unlearn`]: Fisher-diagonal estimation, perturbation amplitudes, and
//!   the one-shot forgetting procedure.
//! - [`eval`]: forgetting metrics, membership-inference AUC, backdoor and
//!   curvature diagnostics, FIM approximation studies.
//! - [`checkpoint`]: bit-exact model persistence.

pub mod checkpoint;
pub mod codebook;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod params;
pub mod partition;
pub mod train;
pub mod unlearn;

pub use codebook::{generate_codebook, MnemonicCodebook};
pub use data::{make_synthetic, LabeledDataset, NormStats, SplitTag};
pub use error::{Error, Result};
pub use nn::{MlpModel, Schedule, SgdConfig};
pub use params::{GradientVector, ParameterVector, Segment, Segmentation};
pub use partition::ClassPartition;
pub use train::{plain_train, train_with_codes, TrainConfig, TrainRecord};
pub use unlearn::{forget, forget_with_data, ForgetReport, PerturbationPlan};
