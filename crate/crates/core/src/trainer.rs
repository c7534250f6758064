//! SGD with momentum, cosine annealing and global-norm clipping, plus the
//! epoch and evaluation loops shared by search and final training.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binarized::{loss_and_grad, BinarizeMode, LossKind};
use crate::data::{augment, batches, AugmentSpec, Dataset};
use crate::error::{invalid, Error, Result};
use crate::ops::{NamedSlot, Slot};
use crate::report::JsonlWriter;
use crate::supernet::{AlphaOptimizer, ArchSelection, Network, SampledArch};
use crate::tensor::{Mode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Initial learning rate `lr0`.
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f32,
    /// `η₂ = eta2_scale · η₁` for the auxiliary amplitude `A`.
    pub eta2_scale: f32,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.025,
            momentum: 0.9,
            weight_decay: 5e-4,
            clip_norm: 5.0,
            eta2_scale: 1.0,
        }
    }
}

impl OptimConfig {
    /// Settings for training a derived network.
    pub fn evaluation() -> Self {
        Self {
            weight_decay: 3e-4,
            ..Self::default()
        }
    }
}

/// `½·lr0·(1 + cos(π·e/E))`; `lr0` for `E = 0`.
pub fn cosine_lr(lr0: f32, epoch: usize, total: usize) -> f32 {
    if total == 0 {
        return lr0;
    }
    let t = epoch.min(total) as f64 / total as f64;
    (0.5 * lr0 as f64 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    /// Schedule length `E`.
    pub epochs: usize,
    pub epoch: usize,
    pub steps: u64,
}

impl OptimState {
    pub fn new(config: OptimConfig, epochs: usize) -> Self {
        Self {
            config,
            epochs,
            epoch: 0,
            steps: 0,
        }
    }

    pub fn lr(&self) -> f32 {
        cosine_lr(self.config.lr, self.epoch, self.epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clip_scale: f32,
}

enum Pending<'a> {
    Dense(&'a mut crate::ops::Param),
    Binarized(&'a mut crate::ops::BinarizedParam, Tensor, Vec<f32>),
}

/// One momentum step over every slot. Gradients are clipped to a global
/// norm, then `v ← m·v + g + wd·p` and `p ← p − lr·v`. Binarized kernels use
/// `δ_X`/`δ_A` as their gradient and are moved through their own update so
/// that `A` stays non-negative. All gradients are cleared afterwards.
pub fn sgd_step(slots: Vec<NamedSlot<'_, f32>>, cfg: &OptimConfig, lr: f32) -> Result<StepStats> {
    let mut pending = Vec::with_capacity(slots.len());
    let mut norm2 = 0.0f64;
    for s in slots {
        match s.slot {
            Slot::Dense(p) => {
                norm2 += p.grad.data().iter().map(|&g| (g as f64).powi(2)).sum::<f64>();
                pending.push((s.name, Pending::Dense(p)));
            }
            Slot::Binarized(b) => {
                let dx = b.kernel.grad_kernel(&b.grad_xhat)?;
                let da = if b.kernel.mode() == BinarizeMode::Pcnn {
                    b.kernel.grad_amplitude(&b.grad_xhat)?
                } else {
                    vec![0.0; b.kernel.amplitude().len()]
                };
                norm2 += dx.data().iter().chain(&da).map(|&g| (g as f64).powi(2)).sum::<f64>();
                pending.push((s.name, Pending::Binarized(b, dx, da)));
            }
            Slot::Buffer(_) => {}
        }
    }
    let grad_norm = norm2.sqrt();
    if !grad_norm.is_finite() {
        let culprit = pending
            .iter()
            .find(|(_, p)| match p {
                Pending::Dense(p) => !p.grad.is_finite(),
                Pending::Binarized(_, dx, da) => !dx.is_finite() || da.iter().any(|v| !v.is_finite()),
            })
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        return Err(Error::NonFinite(format!("gradient of {culprit}")));
    }
    let clip_scale = if cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm as f64 {
        (cfg.clip_norm as f64 / grad_norm) as f32
    } else {
        1.0
    };
    let (m, wd) = (cfg.momentum, cfg.weight_decay);
    for (_, p) in pending {
        match p {
            Pending::Dense(p) => {
                let decay = if p.decay { wd } else { 0.0 };
                let values = p.value.data_mut();
                for ((v, &g), x) in p.velocity.data_mut().iter_mut().zip(p.grad.data()).zip(values.iter_mut()) {
                    *v = m * *v + clip_scale * g + decay * *x;
                    *x -= lr * *v;
                }
                p.grad.fill(0.0);
            }
            Pending::Binarized(b, dx, da) => {
                let weights = b.kernel.weights().data().to_vec();
                for ((v, &g), &x) in b.velocity_x.data_mut().iter_mut().zip(dx.data()).zip(&weights) {
                    *v = m * *v + clip_scale * g + wd * x;
                }
                for (v, &g) in b.velocity_a.iter_mut().zip(&da) {
                    *v = m * *v + clip_scale * g;
                }
                b.kernel.eta1 = lr;
                b.kernel.eta2 = lr * cfg.eta2_scale;
                b.kernel.update_params(&b.velocity_x, &b.velocity_a)?;
                b.grad_xhat.fill(0.0);
            }
        }
    }
    Ok(StepStats { grad_norm, clip_scale })
}

/// Index of the largest logit per example (ties to the lowest class).
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let k = logits.example_len();
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Joint α updates interleaved with weight steps.
#[derive(Debug, Clone, Copy)]
pub struct AlphaPhase<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
    pub optimizer: AlphaOptimizer,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochOptions<'a> {
    pub batch_size: usize,
    pub loss: LossKind,
    pub augment: AugmentSpec,
    pub alpha: Option<AlphaPhase<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    /// Example-weighted mean of `L_S + L_Â` over the epoch's batches.
    pub loss: f64,
    pub classification: f64,
    pub amplitude: f64,
    pub examples: usize,
    pub lr: f32,
    pub alpha_steps: usize,
}

fn sampled(selection: ArchSelection<'_>) -> Option<&SampledArch> {
    match selection {
        ArchSelection::Mixture => None,
        ArchSelection::Sampled(s) => Some(s),
    }
}

/// One pass over `indices`. Only the parameters used by `selection` are
/// updated. The learning rate comes from `state` and the epoch counter is
/// advanced at the end.
pub fn train_epoch<R: Rng>(
    net: &mut Network,
    data: &Dataset,
    indices: &[usize],
    selection: ArchSelection<'_>,
    state: &mut OptimState,
    opts: &EpochOptions<'_>,
    rng: &mut R,
) -> Result<EpochStats> {
    if indices.is_empty() {
        return Err(invalid!("training split is empty"));
    }
    let lr = state.lr();
    let only = sampled(selection);
    let train_batches = batches(indices, opts.batch_size, Some(&mut *rng));
    let val_batches = match &opts.alpha {
        Some(a) if !a.indices.is_empty() => batches(a.indices, opts.batch_size, Some(&mut *rng)),
        Some(_) => return Err(invalid!("architecture-validation split is empty")),
        None => Vec::new(),
    };
    let (mut cls_sum, mut amp_sum, mut seen, mut alpha_steps) = (0.0f64, 0.0f64, 0usize, 0usize);
    for (b, idx) in train_batches.iter().enumerate() {
        if let Some(a) = &opts.alpha {
            let (vx, vy) = a.data.batch(&val_batches[b % val_batches.len()])?;
            net.alpha_step(&vx, &vy, opts.loss, &a.optimizer)?;
            alpha_steps += 1;
        }
        let (x, y) = data.batch(idx)?;
        let x = augment(&x, &opts.augment, rng);
        let logits = net.forward(&x, Mode::Train, selection)?;
        let (ls, grad) = loss_and_grad(opts.loss, &logits, &y)?;
        let la = net.amplitude_loss(only)?;
        net.backward(&grad)?;
        sgd_step(net.collect_state(only)?, &state.config, lr)?;
        net.zero_grad();
        state.steps += 1;
        cls_sum += ls as f64 * idx.len() as f64;
        amp_sum += la * idx.len() as f64;
        seen += idx.len();
    }
    state.epoch += 1;
    let n = seen as f64;
    Ok(EpochStats {
        loss: (cls_sum + amp_sum) / n,
        classification: cls_sum / n,
        amplitude: amp_sum / n,
        examples: seen,
        lr,
        alpha_steps,
    })
}

/// Top-1 accuracy in eval mode.
pub fn evaluate(
    net: &mut Network,
    data: &Dataset,
    indices: &[usize],
    selection: ArchSelection<'_>,
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(invalid!("evaluation split is empty"));
    }
    let mut correct = 0usize;
    for idx in indices.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(idx)?;
        let logits = net.forward(&x, Mode::Eval, selection)?;
        correct += predictions(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub phase: String,
    pub epoch: usize,
    pub lr: f32,
    pub loss: f64,
    pub acc: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub loss: LossKind,
    pub augment: AugmentSpec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            optim: OptimConfig::evaluation(),
            loss: LossKind::CrossEntropy,
            augment: AugmentSpec::default(),
        }
    }
}

/// Trains a stand-alone network for `cfg.epochs`, logging one progress record per epoch.
#[allow(clippy::too_many_arguments)]
pub fn fit<R: Rng>(
    net: &mut Network,
    data: &Dataset,
    train: &[usize],
    val: Option<(&Dataset, &[usize])>,
    cfg: &FitConfig,
    log: &mut JsonlWriter,
    rng: &mut R,
) -> Result<Vec<ProgressRecord>> {
    let mut state = OptimState::new(cfg.optim, cfg.epochs);
    let opts = EpochOptions {
        batch_size: cfg.batch_size,
        loss: cfg.loss,
        augment: cfg.augment,
        alpha: None,
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let stats = train_epoch(net, data, train, ArchSelection::Mixture, &mut state, &opts, rng)?;
        let acc = val
            .map(|(d, idx)| evaluate(net, d, idx, ArchSelection::Mixture, cfg.batch_size.max(100)))
            .transpose()?;
        let record = ProgressRecord {
            phase: "train".into(),
            epoch,
            lr: stats.lr,
            loss: stats.loss,
            acc,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log.write(&record)?;
        records.push(record);
    }
    Ok(records)
}
