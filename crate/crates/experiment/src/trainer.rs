//! The training loop: forward, MSE plus optional structural loss with
//! dynamic weighting, backward, Adam; early stopping on validation MSE.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use log::{debug, info};
use psloss::data::{load_csv, split, DatasetView, RawDataset, Splits};
use psloss::forecaster::{Adam, AdamConfig, DLinear, DLinearConfig, Forecaster, LinearConfig, LinearModel, Model};
use psloss::gdw::{compute_weights_active, grad_norm, scale_factors_scoped, total_loss, WeightState, GDW_EPS};
use psloss::loss::{corr_loss, mean_loss, mse_loss, ps_loss, var_loss, CORR_EPS};
use psloss::metrics::{evaluate, MetricsReport};
use psloss::patching::{adaptive_plan, segment, PatchPlan};
use psloss::{Error, Result, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, LossMode, ModelKind};

/// Batches prepared ahead of the training step.
const PREFETCH_DEPTH: usize = 4;

/// Windows per forward pass during evaluation.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epoch: usize,
    #[serde(flatten)]
    pub state: WeightState,
    pub plan: PatchPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub train_seconds: f64,
    pub val_seconds: f64,
    /// Hash of the order in which training windows were visited.
    pub order_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub total_steps: u64,
    pub test: MetricsReport,
    pub weight_trace: Vec<TraceEntry>,
}

impl RunResult {
    /// Best validation MSE seen after each epoch.
    pub fn best_val_sequence(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.epochs
            .iter()
            .map(|e| {
                best = best.min(e.val_mse);
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: RunResult,
    pub model: Model,
    pub splits: Splits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub total: f64,
    pub mse: f64,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<RawDataset> {
    match &config.data.source {
        DataSource::Csv { .. } => {
            let path = config.resolved_csv_path().expect("csv source has a path");
            load_csv(&path)
        }
        DataSource::Synthetic(spec) => spec.generate(),
    }
}

pub fn build_model(config: &ExperimentConfig, channels: usize) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(match config.model.kind {
        ModelKind::Dlinear => Model::DLinear(DLinear::new(
            DLinearConfig {
                lookback: config.lookback,
                horizon: config.horizon,
                channels,
                kernel_size: config.model.kernel_size,
                channel_shared: config.model.channel_shared,
            },
            &mut rng,
        )?),
        ModelKind::Linear => Model::Linear(LinearModel::new(
            LinearConfig {
                lookback: config.lookback,
                horizon: config.horizon,
                channels,
            },
            &mut rng,
        )?),
    })
}

/// Forecasts for every stride-1 window of `view`, stacked as `(W, C, T)`
/// truth and prediction tensors.
pub fn predict_view(model: &Model, view: &DatasetView) -> Result<(Tensor, Tensor)> {
    let (l, t) = (model.lookback(), model.horizon());
    let starts = view.window_starts(l, t, 1);
    if starts.is_empty() {
        return Err(Error::Config(format!(
            "a view of {} rows holds no ({l}, {t}) window",
            view.len()
        )));
    }
    let parts: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let (x, y) = view.batch(chunk, l, t)?;
            let pred = model.predict(&x)?;
            Ok((y.to_vec(), pred.to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut truth = Vec::with_capacity(starts.len() * view.channels() * t);
    let mut pred = Vec::with_capacity(truth.capacity());
    for (y, p) in parts {
        truth.extend(y);
        pred.extend(p);
    }
    let shape = vec![starts.len(), view.channels(), t];
    Ok((Tensor::new(shape.clone(), truth)?, Tensor::new(shape, pred)?))
}

pub fn view_mse(model: &Model, view: &DatasetView) -> Result<f64> {
    let (y, p) = predict_view(model, view)?;
    let n = y.len() as f64;
    Ok(y.values()
        .iter()
        .zip(p.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn evaluate_view(model: &Model, view: &DatasetView) -> Result<MetricsReport> {
    let (y, p) = predict_view(model, view)?;
    evaluate(&y, &p)
}

pub struct Trainer {
    config: ExperimentConfig,
    model: Model,
    optimizer: Adam,
    splits: Splits,
    steps: u64,
    trace: Vec<TraceEntry>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let ds = load_dataset(&config)?;
        Trainer::with_dataset(config, &ds)
    }

    pub fn with_dataset(config: ExperimentConfig, ds: &RawDataset) -> Result<Self> {
        config.validate()?;
        let splits = split(ds, config.data.split, config.lookback)?;
        let model = build_model(&config, ds.channels())?;
        let optimizer = Adam::new(
            AdamConfig {
                lr: config.optim.lr,
                beta1: config.optim.beta1,
                beta2: config.optim.beta2,
                eps: config.optim.eps,
            },
            model.params(),
        );
        Ok(Trainer {
            config,
            model,
            optimizer,
            splits,
            steps: 0,
            trace: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// One optimizer step on a `(B, C, L)` / `(B, C, T)` batch.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor, epoch: usize, batch: usize) -> Result<StepStats> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = self.model.params().iter().map(|p| tape.leaf(p)).collect();
        let pred = self.model.forward(&tape, &leaves, x)?;
        let mse = mse_loss(&tape, y, &pred)?;
        let total = match self.config.loss.mode {
            LossMode::MseOnly => mse.clone(),
            LossMode::MsePlusPs => self
                .structural_loss(&tape, &leaves, y, &pred, epoch)
                .and_then(|ps| total_loss(&tape, &mse, &ps, self.config.loss.lambda))
                .map_err(|e| match e {
                    Error::Domain(m) => Error::Training(format!("{m} at epoch {epoch}, batch {batch}")),
                    other => other,
                })?,
        };
        let value = total.item()?;
        if !value.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {value} at epoch {epoch}, batch {batch}"
            )));
        }
        let refs: Vec<&Tensor> = leaves.iter().collect();
        let grads = tape.backward(&total, &refs)?;
        let grads: Vec<Tensor> = leaves
            .iter()
            .map(|l| grads.get(l).cloned().expect("gradient for every parameter"))
            .collect();
        self.optimizer
            .step(self.model.params_mut(), &grads)
            .map_err(|e| Error::Training(format!("epoch {epoch}, batch {batch}: {e}")))?;
        self.steps += 1;
        Ok(StepStats {
            total: value,
            mse: mse.item()?,
        })
    }

    fn structural_loss(
        &mut self,
        tape: &Tape,
        leaves: &[Tensor],
        truth: &Tensor,
        pred: &Tensor,
        epoch: usize,
    ) -> Result<Tensor> {
        let cfg = self.config.loss;
        let ab = cfg.ablation;
        let plan = if ab.no_patching {
            PatchPlan::whole_series(self.config.horizon)
        } else {
            adaptive_plan(truth, cfg.delta)?
        };
        let ty = segment(tape, truth, &plan)?;
        let py = segment(tape, pred, &plan)?;
        let corr = (!ab.no_corr).then(|| corr_loss(tape, &ty, &py, CORR_EPS)).transpose()?;
        let var = (!ab.no_var).then(|| var_loss(tape, &ty, &py)).transpose()?;
        let mean = (!ab.no_mean).then(|| mean_loss(tape, &ty, &py)).transpose()?;
        let components = [corr, var, mean];

        let (c, v) = scale_factors_scoped(truth, &pred.detach(), GDW_EPS, cfg.scale_scope)?;
        let (norms, weights) = if ab.no_weighting {
            let w = components.each_ref().map(|l| if l.is_some() { 1.0 } else { 0.0 });
            ([0.0; 3], w)
        } else {
            let out: Vec<&Tensor> = self.model.output_layer().iter().map(|&i| &leaves[i]).collect();
            let mut norms = [None; 3];
            for (n, l) in norms.iter_mut().zip(&components) {
                if let Some(l) = l {
                    *n = Some(grad_norm(tape, l, &out)?);
                }
            }
            (
                norms.map(|n| n.unwrap_or(0.0)),
                compute_weights_active(norms, c, v, GDW_EPS),
            )
        };

        if self.steps.is_multiple_of(self.config.log_interval as u64) {
            let active: Vec<f64> = norms
                .iter()
                .zip(&components)
                .filter(|(_, l)| l.is_some())
                .map(|(n, _)| *n)
                .collect();
            self.trace.push(TraceEntry {
                epoch,
                state: WeightState {
                    step: self.steps,
                    g_corr: norms[0],
                    g_var: norms[1],
                    g_mean: norms[2],
                    g_bar: active.iter().sum::<f64>() / active.len() as f64,
                    alpha: weights[0],
                    beta: weights[1],
                    gamma: weights[2],
                    c,
                    v,
                },
                plan,
            });
        }

        let zero = Tensor::scalar(0.0);
        let [corr, var, mean] = components;
        ps_loss(
            tape,
            corr.as_ref().unwrap_or(&zero),
            var.as_ref().unwrap_or(&zero),
            mean.as_ref().unwrap_or(&zero),
            weights[0],
            weights[1],
            weights[2],
        )
    }

    /// Full training run: epochs with shuffled windows, learning-rate decay,
    /// early stopping, best-checkpoint restore and test evaluation.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let cfg = self.config.clone();
        let (l, t, bs) = (cfg.lookback, cfg.horizon, cfg.optim.batch_size);
        let train_starts = self.splits.train.window_starts(l, t, cfg.optim.stride);
        if train_starts.len() < bs {
            return Err(Error::Config(format!(
                "{} training windows cannot fill a batch of {bs}",
                train_starts.len()
            )));
        }
        let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order_rng.set_stream(1);

        let mut epochs = Vec::new();
        let mut best = (f64::INFINITY, 0usize, self.model.clone());
        let mut stale = 0;
        let mut lr = cfg.optim.lr;
        'epochs: for epoch in 0..cfg.optim.epochs {
            self.optimizer.set_lr(lr);
            let mut order = train_starts.clone();
            order.shuffle(&mut order_rng);
            let mut hasher = DefaultHasher::new();
            order.hash(&mut hasher);

            let started = Instant::now();
            let (mut loss_sum, mut mse_sum, mut n) = (0.0, 0.0, 0usize);
            let mut capped = false;
            let train_view = self.splits.train.clone();
            thread::scope(|scope| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel(PREFETCH_DEPTH);
                let order = &order;
                scope.spawn(move || {
                    // drop_last: a trailing partial batch is skipped
                    for (i, chunk) in order.chunks_exact(bs).enumerate() {
                        if tx.send((i, train_view.batch(chunk, l, t))).is_err() {
                            break;
                        }
                    }
                });
                for (i, batch) in rx {
                    if cfg.optim.max_train_steps.is_some_and(|m| self.steps as usize >= m) {
                        capped = true;
                        break;
                    }
                    let (x, y) = batch?;
                    let s = self.train_step(&x, &y, epoch, i)?;
                    loss_sum += s.total;
                    mse_sum += s.mse;
                    n += 1;
                }
                Ok(())
            })?;
            let train_seconds = started.elapsed().as_secs_f64();

            let started = Instant::now();
            let val_mse = view_mse(&self.model, &self.splits.val)?;
            let val_seconds = started.elapsed().as_secs_f64();
            let denom = n.max(1) as f64;
            info!(
                "epoch {epoch}: steps {n}, train loss {:.6}, train mse {:.6}, val mse {val_mse:.6}, {train_seconds:.2}s",
                loss_sum / denom,
                mse_sum / denom
            );
            epochs.push(EpochLog {
                epoch,
                lr,
                steps: n,
                train_loss: loss_sum / denom,
                train_mse: mse_sum / denom,
                val_mse,
                train_seconds,
                val_seconds,
                order_digest: hasher.finish(),
            });

            if val_mse < best.0 {
                best = (val_mse, epoch, self.model.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.optim.patience {
                    debug!("early stop after epoch {epoch}");
                    break 'epochs;
                }
            }
            if capped || cfg.optim.max_train_steps.is_some_and(|m| self.steps as usize >= m) {
                break;
            }
            lr *= cfg.optim.lr_decay;
        }

        let (best_val_mse, best_epoch, model) = best;
        let test = evaluate_view(&model, &self.splits.test)?;
        info!("test mse {:.6}, mae {:.6}", test.mse, test.mae);
        Ok(TrainOutcome {
            result: RunResult {
                seed: cfg.seed,
                config: cfg,
                epochs,
                best_epoch,
                best_val_mse,
                total_steps: self.steps,
                test,
                weight_trace: self.trace,
            },
            model,
            splits: self.splits,
        })
    }
}
