//! SIGMA sequential recommender: a bidirectional partially flipped Mamba
//! encoder with a dense selective gate and a convolutional GRU branch, on
//! top of a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod bench;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod mamba;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use blocks::{partial_flip, LayerCtx, Mode, SigmaLayer};
pub use config::{Ablation, ModelConfig, Precision, TrainConfig};
pub use data::{Batch, Group, InteractionSequence, Part, SplitDataset, SplitOptions, SplitRow};
pub use error::{Error, ErrorCategory, Result};
pub use eval::{EvalReport, Metric, RankedPrediction};
pub use mamba::{MambaBlock, MambaDims, MambaState, SeqBlock};
pub use model::SigmaModel;
pub use params::{Bound, Gradients, Init, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
pub use train::{Adam, EpochLog, TrainOutcome};
