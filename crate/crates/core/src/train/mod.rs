//! Mini-batch training with AdamW and best-validation checkpointing.

mod loss;
mod optim;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, PickResult, DEFAULT_TOLERANCE};
use crate::fsio::write_atomic;
use crate::graph::Dataset;
use crate::model::{CheckpointMeta, Model};
use crate::survey::LmoParams;

pub use loss::{star_loss, weighted_bce_loss};
pub use optim::{clip_grad_norm, optimizer_step, OptimState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub epochs: usize,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap, off when absent.
    pub grad_clip: Option<f64>,
    /// Tolerance in samples for validation accuracy.
    pub tolerance: usize,
    /// Stop once validation accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            weight_decay: 1e-4,
            batch_size: 256,
            lambda: 0.5,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            tolerance: DEFAULT_TOLERANCE,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.lr * self.weight_decay < 1.0) {
            return bad(format!("weight_decay {} is out of range for lr {}", self.weight_decay, self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_rmse: Option<f64>,
    pub seconds: f64,
}

/// Where [`train`] writes, plus what it records in the checkpoint sidecar.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs<'p> {
    pub checkpoint: Option<&'p Path>,
    pub metrics_log: Option<&'p Path>,
    pub lmo: Option<LmoParams>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Model with the best validation score.
    pub best: Model,
    /// Model after the final epoch.
    pub last: Model,
}

/// Center picks over every star in `ds`.
pub fn predict_dataset(model: &Model, ds: &Dataset) -> Result<Vec<PickResult>> {
    ds.iter().map(|s| model.predict_fb(&s?)).collect()
}

fn accumulate_star(
    store: &mut ParamStore<f32>,
    model_cfg: &crate::model::ModelConfig,
    sub: &crate::graph::StarSubgraph,
    lambda: f64,
    scale: f32,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = star_loss(&mut tape, store, model_cfg, sub, lambda)?;
    let value = f64::from(tape.scalar(l));
    if !value.is_finite() {
        return Ok(value);
    }
    let scaled = tape.scale(l, scale);
    let grads = tape.backward(scaled)?;
    tape.accumulate_param_grads(&grads, store);
    Ok(value)
}

/// Trains `model` on `train_ds`, scoring on `val_ds` (or on the training
/// stars when absent) after every epoch.
pub fn train(
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    model: Model,
    cfg: &TrainConfig,
    out: &TrainOutputs,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Config("training set has no labeled traces".into()));
    }
    let val_ds = val_ds.unwrap_or(train_ds);
    let model_cfg = model.config.clone();
    let mut params = model.params;
    let mut state = OptimState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut log = String::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, f64, usize, ParamStore<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grads();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let sub = train_ds.sample(i)?;
                let l = accumulate_star(&mut params, &model_cfg, &sub, cfg.lambda, scale)?;
                if !l.is_finite() {
                    return Err(Error::Numerical(format!(
                        "loss diverged to {l} at epoch {epoch} on trace {}; last good checkpoint kept",
                        sub.center_id
                    )));
                }
                loss_sum += l;
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut params, c);
            }
            optimizer_step(&mut params, &mut state, cfg)?;
        }

        let current = Model {
            config: model_cfg.clone(),
            params,
        };
        let picks = predict_dataset(&current, val_ds)?;
        let report = EvalReport::from_results(&picks, cfg.tolerance)?;
        params = current.params;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_ds.len() as f64,
            val_acc: report.accuracy,
            val_rmse: report.rmse,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val_acc {:.4} val_rmse {:?}",
            m.train_loss,
            m.val_acc,
            m.val_rmse
        );
        log.push_str(&serde_json::to_string(&m).map_err(|e| Error::Eval(e.to_string()))?);
        log.push('\n');
        if let Some(p) = out.metrics_log {
            write_atomic(p, log.as_bytes())?;
        }

        let rmse = report.rmse.unwrap_or(f64::INFINITY);
        let improved = match &best {
            None => true,
            Some((a, e, _, _)) => m.val_acc > *a || (m.val_acc == *a && rmse < *e),
        };
        if improved {
            if let Some(path) = out.checkpoint {
                let meta = CheckpointMeta {
                    model: model_cfg.clone(),
                    lambda: cfg.lambda,
                    init_seed: params.init_seed(),
                    lmo: out.lmo,
                    epoch,
                    val_acc: Some(m.val_acc),
                    optimizer_state: false,
                };
                crate::autodiff::save_checkpoint(path, &params, &meta)?;
            }
            best = Some((m.val_acc, rmse, epoch, params.clone()));
        }
        epochs.push(m);
        if cfg.target_accuracy.is_some_and(|t| report.accuracy >= t) {
            log::info!("validation accuracy target reached at epoch {epoch}");
            break;
        }
    }

    let last = Model {
        config: model_cfg.clone(),
        params,
    };
    let (best_epoch, best) = match best {
        Some((_, _, e, p)) => (e, Model { config: model_cfg, params: p }),
        None => (0, last.clone()),
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        best,
        last,
    })
}
