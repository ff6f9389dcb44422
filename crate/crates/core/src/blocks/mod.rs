//! The SIGMA layer and its parts.

pub mod fegru;
pub mod flip;
pub mod gate;
pub mod layer;

pub use fegru::FeGru;
pub use flip::{batch_flip_indices, flip_indices, partial_flip};
pub use gate::DsGate;
pub use layer::{dropout, pf_mamba, sigma_stack, LayerCtx, Mode, SigmaLayer};
