//! Forward-pass timing of SIGMA against a softmax-attention reference.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Tape};
use crate::blocks::Mode;
use crate::config::ModelConfig;
use crate::data::{Batch, SplitRow};
use crate::error::{Error, Result};
use crate::model::SigmaModel;
use crate::params::Init;
use crate::tensor::Scalar;

/// Single-head softmax self-attention over `B×N×D`, without masking.
#[derive(Clone, Debug)]
pub struct AttentionRef<T> {
    pub dim: usize,
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
}

impl<T: Scalar> AttentionRef<T> {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut init = Init::new(seed);
        let mut w = || init.normal::<T>(vec![dim, dim], 0.02).into_parts().1;
        AttentionRef {
            dim,
            wq: w(),
            wk: w(),
            wv: w(),
        }
    }

    pub fn forward(&self, x: &[T], batch: usize, len: usize) -> Result<Vec<T>> {
        let d = self.dim;
        if x.len() != batch * len * d {
            return Err(Error::dim("attention", format!("{} values for {batch}×{len}×{d}", x.len())));
        }
        let rows = batch * len;
        let proj = |w: &[T]| {
            let mut out = vec![T::zero(); rows * d];
            kernels::gemm_acc(x, w, &mut out, rows, d, d);
            out
        };
        let (q, k, v) = (proj(&self.wq), proj(&self.wk), proj(&self.wv));
        let scale = T::c(1.0 / (d as f64).sqrt());
        let mut out = vec![T::zero(); rows * d];
        let mut s = vec![T::zero(); len * len];
        for b in 0..batch {
            let span = b * len * d..(b + 1) * len * d;
            s.fill(T::zero());
            kernels::gemm_nt_acc(&q[span.clone()], &k[span.clone()], &mut s, len, len, d);
            for row in s.chunks_exact_mut(len) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for e in row.iter_mut() {
                    *e = ((*e - max) * scale).exp();
                    z = z + *e;
                }
                row.iter_mut().for_each(|e| *e = *e / z);
            }
            kernels::gemm_acc(&s, &v[span.clone()], &mut out[span], len, len, d);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub dim: usize,
    pub num_items: usize,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![128, 256, 512],
            batch: 8,
            dim: 64,
            num_items: 1000,
            warmup: 2,
            reps: 7,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub len: usize,
    pub median_ms: f64,
    /// Time relative to the previous length in the list.
    pub ratio: Option<f64>,
}

pub fn median_ms(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// A full-length batch of random item ids.
pub fn random_batch(batch: usize, len: usize, num_items: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<SplitRow> = (0..batch)
        .map(|u| SplitRow {
            user: u,
            input: (0..len).map(|_| rng.gen_range(1..=num_items)).collect(),
            target: rng.gen_range(1..=num_items),
            position: len,
        })
        .collect();
    let refs: Vec<&SplitRow> = rows.iter().collect();
    Batch::from_rows(&refs, len).expect("rows are non-empty")
}

/// Encoder forward pass without the output head.
pub fn sigma_forward<T: Scalar>(model: &SigmaModel<T>, batch: &Batch) -> Result<()> {
    let mut tape = Tape::inference();
    let p = model.params.bind(&mut tape);
    model.encode(&mut tape, &p, batch, &mut Mode::Eval)?;
    Ok(())
}

fn with_ratios(model: &str, lens: &[usize], ms: Vec<f64>) -> Vec<BenchRow> {
    let mut prev: Option<f64> = None;
    lens.iter()
        .zip(ms)
        .map(|(&len, t)| {
            let row = BenchRow {
                model: model.to_string(),
                len,
                median_ms: t,
                ratio: prev.map(|p| t / p),
            };
            prev = Some(t);
            row
        })
        .collect()
}

/// Median forward time per length for SIGMA (single layer, default block
/// sizes at `dim`) and the attention reference.
pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.lengths.is_empty() || cfg.lengths.contains(&0) {
        return Err(Error::Config("bench needs a non-empty list of positive lengths".into()));
    }
    let model_cfg = ModelConfig {
        num_items: cfg.num_items,
        dim: cfg.dim,
        max_len: *cfg.lengths.iter().max().expect("non-empty"),
        dropout: 0.0,
        ..Default::default()
    };
    let model = SigmaModel::<f32>::new(model_cfg, cfg.seed)?;
    let attn = AttentionRef::<f32>::new(cfg.dim, cfg.seed);
    let (mut sigma, mut attention) = (Vec::new(), Vec::new());
    for &len in &cfg.lengths {
        let batch = random_batch(cfg.batch, len, cfg.num_items, cfg.seed);
        sigma.push(median_ms(cfg.warmup, cfg.reps, || sigma_forward(&model, &batch))?);
        let x: Vec<f32> = Init::new(cfg.seed)
            .normal(vec![cfg.batch, len, cfg.dim], 1.0)
            .into_parts()
            .1;
        attention.push(median_ms(cfg.warmup, cfg.reps, || {
            attn.forward(&x, cfg.batch, len).map(drop)
        })?);
    }
    let mut rows = with_ratios("sigma", &cfg.lengths, sigma);
    rows.extend(with_ratios("attention", &cfg.lengths, attention));
    Ok(rows)
}
