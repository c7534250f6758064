//! Performance-based search: warm-up, repeated sampling of architectures
//! without replacement, likelihood updates and one pruning step per edge per
//! round until a single candidate is left on every edge.

mod backend;
mod bandit;
mod selection;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backend::SupernetBackend;
pub use bandit::BanditEnv;
pub use selection::{
    planned_evaluations, prune_index, s_larger, s_smaller, select_smaller, ucb_bonus, update_s, EdgeRoundUpdate,
    EdgeSelection, SelectionState,
};

use crate::binarized::LossKind;
use crate::data::AugmentSpec;
use crate::error::{invalid, Result};
use crate::ops::{OpKind, Precision};
use crate::report::JsonlWriter;
use crate::supernet::AlphaOptimizer;
use crate::trainer::OptimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub mode: Precision,
    /// Warm-up epochs `L`.
    pub warmup_epochs: usize,
    /// Leading warm-up epochs that train weights only.
    pub freeze_epochs: usize,
    /// Repeats per round `T`.
    pub repeats: usize,
    /// Joint weight/α epochs after each pruning step `V`.
    pub update_epochs: usize,
    /// Exploration weight `δ`.
    pub delta: f64,
    /// Run the post-pruning update in 1-bit mode as well.
    pub one_bit_update: bool,
    pub warmup_batch: usize,
    pub search_batch: usize,
    pub optim: OptimConfig,
    pub alpha: AlphaOptimizer,
    pub loss: LossKind,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mode: Precision::Bnn,
            warmup_epochs: 5,
            freeze_epochs: 3,
            repeats: 3,
            update_epochs: 1,
            delta: 2.0,
            one_bit_update: true,
            warmup_batch: 128,
            search_batch: 400,
            optim: OptimConfig::default(),
            alpha: AlphaOptimizer::default(),
            loss: LossKind::SquaredError,
            augment: AugmentSpec::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn one_bit(&self) -> bool {
        self.mode == Precision::OneBit
    }

    pub fn validate(&self) -> Result<()> {
        if self.freeze_epochs > self.warmup_epochs {
            return Err(invalid!(
                "freeze epochs ({}) exceed warm-up epochs ({})",
                self.freeze_epochs,
                self.warmup_epochs
            ));
        }
        if self.repeats == 0 {
            return Err(invalid!("repeats must be positive"));
        }
        if self.warmup_batch == 0 || self.search_batch == 0 {
            return Err(invalid!("batch sizes must be positive"));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(invalid!("delta must be finite and non-negative"));
        }
        Ok(())
    }

    /// Whether the post-pruning update runs in this mode.
    pub fn runs_update(&self) -> bool {
        self.update_epochs > 0 && (!self.one_bit() || self.one_bit_update)
    }
}

/// What the search loop needs from the thing being searched.
pub trait SearchBackend {
    fn edges(&self) -> usize;
    /// Surviving candidates of `edge`, in list order.
    fn ops(&self, edge: usize) -> Vec<OpKind>;
    fn alphas(&self, edge: usize) -> Vec<f32>;
    fn edge_name(&self, edge: usize) -> String {
        format!("edge{edge}")
    }
    fn warmup(&mut self, cfg: &SearchConfig, report: &mut JsonlWriter) -> Result<()>;
    /// Trains the architecture picking candidate `arch[e]` on every edge, then returns its validation accuracy.
    fn evaluate(&mut self, arch: &[usize]) -> Result<f64>;
    fn prune(&mut self, edge: usize, index: usize) -> Result<()>;
    fn inter_round_update(&mut self, round: usize, cfg: &SearchConfig, report: &mut JsonlWriter) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSample {
    pub edge: usize,
    pub op: OpKind,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRound {
    pub edge: usize,
    pub name: String,
    pub ops: Vec<OpKind>,
    pub smaller: Vec<bool>,
    pub mean_accuracy: Vec<Option<f64>>,
    pub s_after: Vec<f64>,
    pub n: Vec<u64>,
    pub s_larger: Option<f64>,
    /// `None` entries are infinite bonuses.
    pub ucb_bonus: Option<Vec<Option<f64>>>,
    pub pruned: OpKind,
}

/// One line of the search report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Start {
        mode: Precision,
        k0: usize,
        edges: usize,
        repeats: usize,
        planned_evaluations: usize,
        seed: u64,
    },
    Warmup {
        epoch: usize,
        alpha_updates: bool,
        lr: f32,
        loss: f64,
        wall_ms: u64,
    },
    Eval {
        round: usize,
        repeat: usize,
        step: usize,
        accuracy: f64,
        #[serde(rename = "N")]
        total: u64,
        wall_ms: u64,
        arch: Vec<EdgeSample>,
    },
    Round {
        round: usize,
        k: usize,
        evaluations: usize,
        #[serde(rename = "N")]
        total: u64,
        wall_ms: u64,
        edges: Vec<EdgeRound>,
    },
    Update {
        round: usize,
        epoch: usize,
        lr: f32,
        loss: f64,
        wall_ms: u64,
    },
    Done {
        rounds: usize,
        evaluations: u64,
        survivors: Vec<OpKind>,
        wall_ms: u64,
    },
}

impl ReportRecord {
    pub fn parse_report(text: &str) -> Result<Vec<Self>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub rounds: usize,
    pub evaluations: u64,
    pub survivors: Vec<OpKind>,
    pub selection: SelectionState,
    pub wall_ms: u64,
}

fn ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Runs the search to completion on `backend`.
pub fn run_search<B: SearchBackend>(backend: &mut B, cfg: &SearchConfig, report: &mut JsonlWriter) -> Result<SearchOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let edges = backend.edges();
    if edges == 0 {
        return Err(invalid!("nothing to search: no edges"));
    }
    let k0 = backend.ops(0).len();
    if (0..edges).any(|e| backend.ops(e).len() != k0) {
        return Err(invalid!("every edge must start with the same number of candidates"));
    }
    if k0 < 2 {
        return Err(invalid!("need at least 2 candidates per edge, got {k0}"));
    }
    let one_bit = cfg.one_bit();
    report.write(&ReportRecord::Start {
        mode: cfg.mode,
        k0,
        edges,
        repeats: cfg.repeats,
        planned_evaluations: planned_evaluations(k0, cfg.repeats, one_bit),
        seed: cfg.seed,
    })?;
    if !one_bit {
        backend.warmup(cfg, report)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a3b_1e55);
    let mut state = SelectionState::new(edges, k0, cfg.delta);
    let mut k = k0;
    let mut round = 0;
    while k > 1 {
        let round_start = Instant::now();
        let smaller = (0..edges)
            .map(|e| select_smaller(&backend.alphas(e), one_bit))
            .collect::<Result<Vec<_>>>()?;
        let width = smaller[0].len();
        if smaller.iter().any(|s| s.len() != width) {
            return Err(invalid!("smaller sets differ in size across edges"));
        }
        state.begin_round(&smaller);
        let mut evaluations = 0;
        for repeat in 0..cfg.repeats {
            let mut pools = smaller.clone();
            for step in 0..width {
                let eval_start = Instant::now();
                let arch: Vec<usize> = pools
                    .iter_mut()
                    .map(|p| p.swap_remove(rng.gen_range(0..p.len())))
                    .collect();
                let accuracy = backend.evaluate(&arch)?;
                state.record(&arch, accuracy)?;
                evaluations += 1;
                let samples = arch
                    .iter()
                    .enumerate()
                    .map(|(e, &i)| EdgeSample {
                        edge: e,
                        op: backend.ops(e)[i],
                        n: state.edges[e].n[i],
                    })
                    .collect();
                report.write(&ReportRecord::Eval {
                    round,
                    repeat,
                    step,
                    accuracy,
                    total: state.total,
                    wall_ms: ms(eval_start),
                    arch: samples,
                })?;
            }
        }
        let mut rows = Vec::with_capacity(edges);
        let mut prunes = Vec::with_capacity(edges);
        for e in 0..edges {
            let up = state.close_edge(e, one_bit)?;
            let ops = backend.ops(e);
            let sel = &state.edges[e];
            rows.push(EdgeRound {
                edge: e,
                name: backend.edge_name(e),
                pruned: ops[up.prune],
                ops,
                smaller: sel.q.clone(),
                mean_accuracy: up.mean_accuracy,
                s_after: sel.s.clone(),
                n: sel.n.clone(),
                s_larger: up.s_larger,
                ucb_bonus: up
                    .bonus
                    .map(|b| b.into_iter().map(|v| v.is_finite().then_some(v)).collect()),
            });
            prunes.push(up.prune);
        }
        for (e, &i) in prunes.iter().enumerate() {
            backend.prune(e, i)?;
            state.edges[e].remove(i);
        }
        report.write(&ReportRecord::Round {
            round,
            k,
            evaluations,
            total: state.total,
            wall_ms: ms(round_start),
            edges: rows,
        })?;
        k -= 1;
        if k > 1 && cfg.runs_update() {
            backend.inter_round_update(round, cfg, report)?;
        }
        round += 1;
    }
    let survivors: Vec<OpKind> = (0..edges).map(|e| backend.ops(e)[0]).collect();
    let wall_ms = ms(start);
    report.write(&ReportRecord::Done {
        rounds: round,
        evaluations: state.total,
        survivors: survivors.clone(),
        wall_ms,
    })?;
    Ok(SearchOutcome {
        rounds: round,
        evaluations: state.total,
        survivors,
        selection: state,
        wall_ms,
    })
}
