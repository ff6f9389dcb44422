//! Model and training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar precision of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Component switches for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Both directional branches see the unflipped sequence.
    pub no_flip: bool,
    /// Directional branches are summed with unit weights.
    pub no_ds_gate: bool,
    /// The recurrent branch is dropped and the mixing weight of the
    /// bidirectional branch is fixed to one.
    pub no_fegru: bool,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match (self.no_flip, self.no_ds_gate, self.no_fegru) {
            (false, false, false) => "default",
            (true, false, false) => "w/o partial flipping",
            (false, true, false) => "w/o DS gate",
            (false, false, true) => "w/o FE-GRU",
            _ => "combined ablation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Catalog size K; item ids run 1..=K with 0 reserved for padding.
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
    /// Number of most recent items kept in place by the partial flip.
    pub flip_keep: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub tie_weights: bool,
    pub layernorm_eps: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_items: 0,
            dim: 64,
            layers: 1,
            flip_keep: 5,
            d_state: 32,
            d_conv: 4,
            expand: 2,
            dropout: 0.3,
            max_len: 50,
            tie_weights: true,
            layernorm_eps: 1e-5,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_items", self.num_items),
            ("dim", self.dim),
            ("layers", self.layers),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("expand", self.expand),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.layernorm_eps.is_nan() || self.layernorm_eps < 0.0 {
            return Err(Error::Config("layernorm_eps must be non-negative".into()));
        }
        Ok(())
    }

    /// Flip suffix length actually applied; `usize::MAX` disables flipping.
    pub fn effective_flip_keep(&self) -> usize {
        if self.ablation.no_flip {
            usize::MAX
        } else {
            self.flip_keep
        }
    }

    pub fn dt_rank(&self) -> usize {
        self.dim.div_ceil(16)
    }

    pub fn inner_dim(&self) -> usize {
        self.expand * self.dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub patience: usize,
    /// Global-norm gradient clipping threshold, off when `None`.
    pub clip_norm: Option<f64>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 2024,
            eval_every: 1,
            patience: 10,
            clip_norm: None,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and patience must be positive".into(),
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}
