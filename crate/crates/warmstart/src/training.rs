//! Training the warm-start predictor: Adam over minibatches of per-sample
//! tapes, a plateau learning-rate schedule, ground-truth caching for the
//! regression loss, and the learning-rate/architecture sweep.
//!
//! Determinism contract: for a fixed config and seed, training is bitwise
//! reproducible regardless of worker count. Per-sample gradients are computed
//! in parallel but collected in index order and reduced sequentially.

use crate::autodiff::{backward, record, LossKind};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::operators::Operator;
use crate::predictor::ModelWeights;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::sync::Arc;

/// Residual at which a cached fixed point counts as converged. Two orders
/// below the tightest evaluation tolerance so regression targets never
/// dominate error budgets.
pub const GROUND_TRUTH_TOL: f64 = 1e-10;
/// Default iteration cap for ground-truth computation.
pub const GROUND_TRUTH_CAP: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub z: Vec<f64>,
    pub residual: f64,
    /// Set when the cap was hit before reaching the tolerance; such instances
    /// are excluded from regression training.
    pub capped: bool,
}

/// Run the fixed-point iteration from zero until the residual reaches the
/// ground-truth tolerance or `cap` steps.
pub fn compute_ground_truth(op: &Operator, cap: usize) -> Result<GroundTruth> {
    let (z, residual, _, capped) = op.iterate(&vec![0.0; op.dim()], GROUND_TRUTH_TOL, cap)?;
    Ok(GroundTruth {
        z,
        residual,
        capped,
    })
}

pub fn cache_ground_truths(ops: &[Operator], cap: usize) -> Result<Vec<GroundTruth>> {
    ops.par_iter()
        .map(|op| compute_ground_truth(op, cap))
        .collect()
}

/// One training sample: the parameter, its instantiated operator, and the
/// cached fixed point when the regression loss is in play.
#[derive(Clone, Copy)]
pub struct TrainSample<'a> {
    pub theta: &'a [f64],
    pub op: &'a Operator,
    pub target: Option<&'a [f64]>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub k: usize,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Plateau window in epochs; a decay fires when the best loss in the last
    /// window fails to improve on the best loss before it, which needs two
    /// windows of history since the previous decay.
    pub plateau_window: usize,
    pub decay_factor: f64,
    /// Training stops early after this many decay events.
    pub max_decays: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            loss: LossKind::FixedPoint,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 200,
            plateau_window: 10,
            decay_factor: 5.0,
            max_decays: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub learning_rate: f64,
    /// Largest fp-loss minus twice the regression loss seen this epoch, when
    /// both were measured at the same point; stays below ~1e-9 for
    /// non-expansive operators.
    pub fp_minus_two_reg_max: Option<f64>,
}

#[derive(Debug)]
pub struct TrainResult {
    pub weights: ModelWeights,
    pub history: Vec<EpochStats>,
    pub decay_events: usize,
}

/// Training abort carrying the last finite checkpoint.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub checkpoint: ModelWeights,
    pub history: Vec<EpochStats>,
}

/// Number of plateau decays implied by a loss history.
///
/// Scanning forward: once at least two windows have elapsed since the last
/// decay, a decay fires when min(last window) >= min(everything since the
/// last decay but before the window).
pub fn decay_events(history: &[f64], window: usize) -> usize {
    let mut anchor = 0usize;
    let mut events = 0usize;
    for e in 1..=history.len() {
        if e - anchor >= 2 * window {
            let wmin = history[e - window..e]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let bmin = history[anchor..e - window]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if wmin >= bmin {
                events += 1;
                anchor = e;
            }
        }
    }
    events
}

/// Learning-rate multiplier implied by a loss history: divide by the decay
/// factor once per plateau event.
pub fn lr_schedule(history: &[f64], window: usize, factor: f64) -> f64 {
    factor.powi(-(decay_events(history, window) as i32))
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(w: &ModelWeights) -> Adam {
        let zeros: Vec<Matrix> = w
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.rows(), l.cols()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, w: &mut ModelWeights, grads: &[Matrix], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (layer, g) in grads.iter().enumerate() {
            let m = &mut self.m[layer];
            let v = &mut self.v[layer];
            let wl = &mut w.layers_mut()[layer];
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    let gij = g.get(i, j);
                    let mij = self.beta1 * m.get(i, j) + (1.0 - self.beta1) * gij;
                    let vij = self.beta2 * v.get(i, j) + (1.0 - self.beta2) * gij * gij;
                    m.set(i, j, mij);
                    v.set(i, j, vij);
                    let mhat = mij / bc1;
                    let vhat = vij / bc2;
                    wl.set(i, j, wl.get(i, j) - lr * mhat / (vhat.sqrt() + self.eps));
                }
            }
        }
    }
}

/// Minimize the empirical unrolled loss over the samples.
pub fn train(
    init: &ModelWeights,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> std::result::Result<TrainResult, Box<TrainAbort>> {
    if samples.is_empty() {
        return Err(Box::new(TrainAbort {
            error: Error::Missing("empty training set".into()),
            checkpoint: init.clone(),
            history: vec![],
        }));
    }
    if cfg.loss == LossKind::Regression && samples.iter().any(|s| s.target.is_none()) {
        return Err(Box::new(TrainAbort {
            error: Error::Missing(
                "regression loss needs cached ground truths for every sample".into(),
            ),
            checkpoint: init.clone(),
            history: vec![],
        }));
    }
    let mut w = init.clone();
    let mut adam = Adam::new(&w);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut losses: Vec<f64> = Vec::new();
    let mut history: Vec<EpochStats> = Vec::new();
    let mut last_good = w.clone();
    let mut events = 0usize;

    for epoch in 0..cfg.epochs {
        let mult = lr_schedule(&losses, cfg.plateau_window, cfg.decay_factor);
        let lr = cfg.learning_rate * mult;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);

        // Loss is accumulated per sample and reduced in index order so the
        // reported epoch loss does not depend on the shuffle.
        let mut sample_loss = vec![0.0; samples.len()];
        let mut coupling: Option<f64> = None;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let shared = Arc::new(w.clone());
            let per_sample: Vec<Result<(f64, Vec<Matrix>, Option<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let tape = record(&shared, s.theta, s.op, cfg.k, cfg.loss, s.target)?;
                    let grads = backward(&tape);
                    let gap = match (cfg.loss, s.target) {
                        (LossKind::Regression, Some(_)) => {
                            let zk = tape.state_value(cfg.k);
                            let fp = s.op.fp_residual(zk)?;
                            Some(fp - 2.0 * tape.output())
                        }
                        _ => None,
                    };
                    Ok((tape.output(), grads, gap))
                })
                .collect();

            let mut mean: Vec<Matrix> = w
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.rows(), l.cols()))
                .collect();
            let inv = 1.0 / batch.len() as f64;
            for (&i, r) in batch.iter().zip(per_sample) {
                let (loss, grads, gap) = match r {
                    Ok(v) => v,
                    Err(e) => {
                        return Err(Box::new(TrainAbort {
                            error: e,
                            checkpoint: last_good,
                            history,
                        }))
                    }
                };
                sample_loss[i] = loss;
                if let Some(g) = gap {
                    coupling = Some(coupling.map_or(g, |c: f64| c.max(g)));
                }
                for (acc, g) in mean.iter_mut().zip(&grads) {
                    acc.add_scaled(g, inv);
                }
            }
            if lr > 0.0 {
                adam.step(&mut w, &mean, lr);
            }
        }

        let train_loss = sample_loss.iter().sum::<f64>() / samples.len() as f64;
        history.push(EpochStats {
            epoch,
            train_loss,
            learning_rate: lr,
            fp_minus_two_reg_max: coupling,
        });
        if !train_loss.is_finite() {
            return Err(Box::new(TrainAbort {
                error: Error::Diverged { epoch },
                checkpoint: last_good,
                history,
            }));
        }
        last_good = w.clone();
        losses.push(train_loss);
        let now = decay_events(&losses, cfg.plateau_window);
        if now > events {
            events = now;
            if events >= cfg.max_decays {
                break;
            }
        }
    }

    Ok(TrainResult {
        weights: w,
        history,
        decay_events: events,
    })
}

/// Mean fixed-point residual after k steps from the predicted warm starts.
pub fn mean_fp_residual_at_k(
    weights: &ModelWeights,
    samples: &[TrainSample],
    k: usize,
) -> Result<f64> {
    let per: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let mut z = weights.forward(s.theta)?;
            for _ in 0..k {
                z = s.op.apply(&z)?;
            }
            s.op.fp_residual(&z)
        })
        .collect();
    let mut sum = 0.0;
    for r in per {
        sum += r?;
    }
    Ok(sum / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub point: SweepPoint,
    pub val_fp_residual: f64,
}

/// Train each grid point on the head of the sample list and score the tail by
/// validation fp-residual at the training k. Returns the winning index and
/// every outcome.
pub fn sweep(
    samples: &[TrainSample],
    theta_dim: usize,
    state_dim: usize,
    points: &[SweepPoint],
    base: &TrainConfig,
    val_fraction: f64,
    seed: u64,
) -> Result<(usize, Vec<SweepOutcome>)> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let n_val = ((samples.len() as f64 * val_fraction) as usize)
        .max(1)
        .min(samples.len() - 1);
    let (train_part, val_part) = samples.split_at(samples.len() - n_val);
    let mut outcomes = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let mut sizes = vec![theta_dim];
        sizes.extend(&point.hidden);
        sizes.push(state_dim);
        let init = ModelWeights::init(&sizes, true, seed.wrapping_add(i as u64));
        let mut cfg = base.clone();
        cfg.learning_rate = point.learning_rate;
        let result = train(&init, train_part, &cfg).map_err(|a| a.error)?;
        let val = mean_fp_residual_at_k(&result.weights, val_part, cfg.k)?;
        outcomes.push(SweepOutcome {
            point: point.clone(),
            val_fp_residual: val,
        });
    }
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.val_fp_residual.total_cmp(&b.val_fp_residual))
        .map(|(i, _)| i)
        .unwrap();
    Ok((best, outcomes))
}
