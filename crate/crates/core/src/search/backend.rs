use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{planned_evaluations, ReportRecord, SearchBackend, SearchConfig};
use crate::data::{Dataset, Splits};
use crate::error::{invalid, Result};
use crate::ops::OpKind;
use crate::report::JsonlWriter;
use crate::supernet::{ArchSelection, Network, SampledArch};
use crate::trainer::{evaluate, train_epoch, AlphaPhase, EpochOptions, OptimState};

/// Searches a weight-sharing supernet. Sampled architectures train in place
/// on the gradient split and are scored on the performance-validation split;
/// α updates use the architecture-validation split.
pub struct SupernetBackend<'a> {
    pub net: Network,
    data: &'a Dataset,
    splits: &'a Splits,
    cfg: SearchConfig,
    rng: ChaCha8Rng,
    search_state: OptimState,
}

impl<'a> SupernetBackend<'a> {
    pub fn new(net: Network, data: &'a Dataset, splits: &'a Splits, cfg: &SearchConfig) -> Result<Self> {
        if net.config.precision != cfg.mode {
            return Err(invalid!(
                "network precision {} does not match search mode {}",
                net.config.precision.name(),
                cfg.mode.name()
            ));
        }
        if splits.gradient.is_empty() || splits.perf_val.is_empty() || splits.arch_val.is_empty() {
            return Err(invalid!("search needs non-empty gradient, performance and architecture splits"));
        }
        let k0 = net.arch.normal.first().map_or(0, |e| e.ops.len());
        let updates = if cfg.runs_update() {
            cfg.update_epochs * k0.saturating_sub(2)
        } else {
            0
        };
        let epochs = planned_evaluations(k0, cfg.repeats, cfg.one_bit()) + updates;
        Ok(Self {
            net,
            data,
            splits,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            search_state: OptimState::new(cfg.optim, epochs),
        })
    }

    fn sampled(&self, arch: &[usize]) -> Result<SampledArch> {
        if arch.len() != self.net.arch.len() {
            return Err(invalid!("architecture covers {} of {} edges", arch.len(), self.net.arch.len()));
        }
        let mut s = SampledArch::first(&self.net.arch);
        for (e, &i) in arch.iter().enumerate() {
            let ops = &self.net.arch.edge(e).ops;
            let op = *ops
                .get(i)
                .ok_or_else(|| invalid!("edge {e} has no candidate {i}"))?;
            s.set(e, op);
        }
        Ok(s)
    }

    fn joint_epoch(&mut self, state: &mut OptimState, batch_size: usize, alpha: bool) -> Result<(f32, f64)> {
        let opts = EpochOptions {
            batch_size,
            loss: self.cfg.loss,
            augment: self.cfg.augment,
            alpha: alpha.then_some(AlphaPhase {
                data: self.data,
                indices: &self.splits.arch_val,
                optimizer: self.cfg.alpha,
            }),
        };
        let stats = train_epoch(
            &mut self.net,
            self.data,
            &self.splits.gradient,
            ArchSelection::Mixture,
            state,
            &opts,
            &mut self.rng,
        )?;
        Ok((stats.lr, stats.loss))
    }
}

impl SearchBackend for SupernetBackend<'_> {
    fn edges(&self) -> usize {
        self.net.arch.len()
    }

    fn ops(&self, edge: usize) -> Vec<OpKind> {
        self.net.arch.edge(edge).ops.clone()
    }

    fn alphas(&self, edge: usize) -> Vec<f32> {
        self.net.arch.edge(edge).alpha.clone()
    }

    fn edge_name(&self, edge: usize) -> String {
        let (kind, e) = self.net.arch.locate(edge);
        format!("{}.{e}", kind.name())
    }

    fn warmup(&mut self, cfg: &SearchConfig, report: &mut JsonlWriter) -> Result<()> {
        let mut state = OptimState::new(cfg.optim, cfg.warmup_epochs);
        for epoch in 0..cfg.warmup_epochs {
            let start = Instant::now();
            let alpha_updates = epoch >= cfg.freeze_epochs;
            let (lr, loss) = self.joint_epoch(&mut state, cfg.warmup_batch, alpha_updates)?;
            report.write(&ReportRecord::Warmup {
                epoch,
                alpha_updates,
                lr,
                loss,
                wall_ms: start.elapsed().as_millis() as u64,
            })?;
        }
        Ok(())
    }

    fn evaluate(&mut self, arch: &[usize]) -> Result<f64> {
        let sampled = self.sampled(arch)?;
        let opts = EpochOptions {
            batch_size: self.cfg.search_batch,
            loss: self.cfg.loss,
            augment: self.cfg.augment,
            alpha: None,
        };
        train_epoch(
            &mut self.net,
            self.data,
            &self.splits.gradient,
            ArchSelection::Sampled(&sampled),
            &mut self.search_state,
            &opts,
            &mut self.rng,
        )?;
        evaluate(
            &mut self.net,
            self.data,
            &self.splits.perf_val,
            ArchSelection::Sampled(&sampled),
            self.cfg.search_batch,
        )
    }

    fn prune(&mut self, edge: usize, index: usize) -> Result<()> {
        let (kind, e) = self.net.arch.locate(edge);
        self.net.prune(kind, e, index).map(|_| ())
    }

    fn inter_round_update(&mut self, round: usize, cfg: &SearchConfig, report: &mut JsonlWriter) -> Result<()> {
        let mut state = std::mem::replace(&mut self.search_state, OptimState::new(cfg.optim, 0));
        let result = (|| {
            for epoch in 0..cfg.update_epochs {
                let start = Instant::now();
                let (lr, loss) = self.joint_epoch(&mut state, cfg.search_batch, true)?;
                report.write(&ReportRecord::Update {
                    round,
                    epoch,
                    lr,
                    loss,
                    wall_ms: start.elapsed().as_millis() as u64,
                })?;
            }
            Ok(())
        })();
        self.search_state = state;
        result
    }
}
