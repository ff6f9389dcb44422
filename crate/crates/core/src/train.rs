//! Adam and the epoch loop.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::blocks::Mode;
use crate::config::TrainConfig;
use crate::data::{batch_iter, Part, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Metric, OVERALL};
use crate::model::SigmaModel;
use crate::params::{Gradients, ParamStore};
use crate::tensor::Scalar;

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Dropout,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match which {
        Stream::Init => 0,
        Stream::Shuffle => 1,
        Stream::Dropout => 2,
    });
    rng
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.ids().map(|id| vec![T::zero(); store.get(id).numel()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn from_config(store: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        Adam::new(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    /// Apply one update. Nothing is modified if any gradient is non-finite.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for id in store.ids() {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(t));
        let c2 = T::c(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::c(self.lr), T::c(self.eps));
        for id in store.ids() {
            let i = id.index();
            let g = grads.get(id);
            let theta = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                let m = b1 * self.m[i][j] + (T::one() - b1) * g[j];
                let v = b2 * self.v[i][j] + (T::one() - b2) * g[j] * g[j];
                self.m[i][j] = m;
                self.v[i][j] = v;
                theta[j] = theta[j] - lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Loss, gradients and parameter update for one batch.
pub fn train_step<T: Scalar>(
    model: &mut SigmaModel<T>,
    adam: &mut Adam<T>,
    batch: &crate::data::Batch,
    dropout_rng: &mut ChaCha8Rng,
    clip_norm: Option<f64>,
) -> Result<f64> {
    let (loss, mut grads) = {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let loss = model.loss(&mut tape, &p, batch, &mut Mode::Train(dropout_rng))?;
        let value = tape.value(loss)[0].to_f64().unwrap_or(f64::NAN);
        tape.backward(loss)?;
        (value, Gradients::collect(&tape, &p, &model.params))
    };
    if let Some(max) = clip_norm {
        let norm = grads.global_norm();
        if norm > max {
            grads.scale(T::c(max / norm));
        }
    }
    adam.update(&mut model.params, &grads)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_hr: Option<f64>,
    pub valid_ndcg: Option<f64>,
    pub valid_mrr: Option<f64>,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,valid_hr10,valid_ndcg10,valid_mrr10,seconds";

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            opt(self.valid_hr),
            opt(self.valid_ndcg),
            opt(self.valid_mrr),
            self.seconds
        )
    }
}

pub fn write_log<W: Write>(log: &[EpochLog], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", EpochLog::CSV_HEADER)?;
    for l in log {
        writeln!(out, "{}", l.csv_line())?;
    }
    Ok(())
}

pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the evaluation with the best validation NDCG@10, or
    /// the final parameters when validation never ran.
    pub best: SigmaModel<T>,
    pub best_epoch: Option<usize>,
    pub best_valid: Option<EvalReport>,
    pub log: Vec<EpochLog>,
}

pub const EVAL_BATCH: usize = 256;

/// Train with early stopping on validation NDCG@10. `on_epoch` sees every
/// log line as it is produced.
pub fn train<T: Scalar>(
    mut model: SigmaModel<T>,
    split: &SplitDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if split.num_items() != model.cfg.num_items {
        return Err(Error::Config(format!(
            "model catalog {} does not match split catalog {}",
            model.cfg.num_items,
            split.num_items()
        )));
    }
    let width = split.options.max_len;
    let mut adam = Adam::from_config(&model.params, cfg);
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut drop_rng = stream(cfg.seed, Stream::Dropout);
    let mut best: Option<(usize, f64, EvalReport, SigmaModel<T>)> = None;
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let (mut total, mut rows) = (0.0, 0usize);
        for (bi, batch) in batch_iter(&split.train, width, cfg.batch_size, Some(shuffle.gen()))?.enumerate() {
            let diverged = |loss: f64| Error::Diverged {
                epoch,
                batch: bi,
                lr: cfg.lr,
                loss,
            };
            let loss = match train_step(&mut model, &mut adam, &batch, &mut drop_rng, cfg.clip_norm) {
                Err(Error::NonFinite { .. }) | Err(Error::NonFiniteGrad(_)) => {
                    return Err(diverged(f64::NAN))
                }
                other => other?,
            };
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            total += loss * batch.size() as f64;
            rows += batch.size();
        }
        let train_loss = if rows == 0 { 0.0 } else { total / rows as f64 };
        let mut entry = EpochLog {
            epoch,
            train_loss,
            valid_hr: None,
            valid_ndcg: None,
            valid_mrr: None,
            seconds: 0.0,
        };
        let mut stop = false;
        if epoch % cfg.eval_every == 0 && !split.valid.is_empty() {
            let report = evaluate(&model, split, Part::Valid, EVAL_BATCH, &[10])?;
            let get = |m| report.get(m, 10, OVERALL);
            entry.valid_hr = get(Metric::Hr);
            entry.valid_ndcg = get(Metric::Ndcg);
            entry.valid_mrr = get(Metric::Mrr);
            let ndcg = entry.valid_ndcg.unwrap_or(0.0);
            if best.as_ref().is_none_or(|b| ndcg > b.1) {
                best = Some((epoch, ndcg, report, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= cfg.patience;
            }
        }
        entry.seconds = started.elapsed().as_secs_f64();
        log::info!("{}", entry.csv_line());
        on_epoch(&entry);
        log.push(entry);
        if stop {
            break;
        }
    }
    Ok(match best {
        Some((epoch, _, report, params)) => TrainOutcome {
            best: params,
            best_epoch: Some(epoch),
            best_valid: Some(report),
            log,
        },
        None => TrainOutcome {
            best: model,
            best_epoch: None,
            best_valid: None,
            log,
        },
    })
}
