//! Item embedding, SIGMA encoder and next-item scoring.

use crate::autodiff::{Tape, Var};
use crate::blocks::{sigma_stack, LayerCtx, Mode, SigmaLayer};
use crate::config::ModelConfig;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct SigmaModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    /// `(K+1)×D`, row 0 is padding.
    pub embedding: ParamId,
    /// Separate output table when weights are untied, same layout as `embedding`.
    pub head: Option<ParamId>,
    pub layers: Vec<SigmaLayer>,
}

impl<T: Scalar> SigmaModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let table = |name: &str, init: &mut Init, params: &mut ParamStore<T>| {
            let mut e: Tensor<T> = init.normal(vec![cfg.num_items + 1, cfg.dim], 0.02);
            e.data_mut()[..cfg.dim].fill(T::zero());
            params.add(name, e)
        };
        let embedding = table("item_embedding", &mut init, &mut params);
        let layers = (0..cfg.layers)
            .map(|i| SigmaLayer::new(&mut params, &format!("layer{i}"), &cfg, &mut init))
            .collect();
        let head = (!cfg.tie_weights).then(|| table("item_head", &mut init, &mut params));
        Ok(SigmaModel {
            cfg,
            params,
            embedding,
            head,
            layers,
        })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.size() == 0 || batch.lens.iter().any(|&l| l == 0 || l > batch.width) {
            return Err(Error::Contract("every row needs 1..=width real items".into()));
        }
        let bound = self.cfg.num_items + 1;
        let bad = batch
            .ids
            .iter()
            .chain(&batch.targets)
            .find(|&&i| i >= bound);
        if let Some(&index) = bad {
            return Err(Error::Index {
                op: "item id",
                index,
                bound,
            });
        }
        Ok(())
    }

    /// `B×N×D` embeddings; padding maps to zero rows.
    pub fn embed<'p>(&self, tape: &mut Tape<'p, T>, p: &Bound, batch: &Batch) -> Result<Var> {
        self.check_batch(batch)?;
        tape.embedding(
            p[self.embedding],
            &batch.ids,
            &[batch.size(), batch.width],
            Some(0),
        )
    }

    pub fn encode<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = self.embed(tape, p, batch)?;
        let ctx = LayerCtx::new(&self.cfg, &batch.lens);
        sigma_stack(tape, p, &self.layers, h, &ctx, mode)
    }

    /// `B×D` user representation at the last column, where left padding
    /// puts the most recent item.
    pub fn represent<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = self.encode(tape, p, batch, mode)?;
        tape.select(h, 1, batch.width - 1)
    }

    /// `B×K` scores over items `1..=K`; column `j` scores item `j + 1`.
    pub fn logits<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let r = self.represent(tape, p, batch, mode)?;
        let table = p[self.head.unwrap_or(self.embedding)];
        let items = tape.narrow(table, 0, 1, self.cfg.num_items)?;
        let items_t = tape.transpose(items)?;
        tape.matmul(r, items_t)
    }

    /// Mean full-catalog cross-entropy of the batch targets.
    pub fn loss<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &Bound,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let logits = self.logits(tape, p, batch, mode)?;
        if batch.targets.contains(&0) {
            return Err(Error::Contract("padding is not a valid target".into()));
        }
        let classes: Vec<usize> = batch.targets.iter().map(|&t| t - 1).collect();
        tape.softmax_cross_entropy(logits, &classes)
    }

    /// Inference scores, row-major `B×K`.
    pub fn score(&self, batch: &Batch) -> Result<Vec<T>> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let logits = self.logits(&mut tape, &p, batch, &mut Mode::Eval)?;
        Ok(tape.value(logits).to_vec())
    }
}
