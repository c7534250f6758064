//! The cell-based supernet: partially-connected mixed edges, shared
//! architecture weights α, sampled-architecture execution and genotype
//! derivation.

mod cell;
mod edge;
mod genotype;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use cell::{Cell, CellKind, CellRoutes, Topology};
pub use edge::{EdgeRoute, MixedEdge};
pub use genotype::{select_inputs, Genotype, GenotypeEntry, GenotypeMeta, Survivor, GENOTYPE_VERSION};

use crate::binarized::{loss_and_grad, BinarizeMode, LossKind};
use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::{
    build_op, conv_layer, factorized_reduce, relu_conv_bn, Block, Layer, NamedSlot, NormLayer, OpConfig, OpKind,
    Param, Precision, Slot,
};
use crate::tensor::{
    global_avg_pool, global_avg_pool_backward, linear, linear_backward, softmax, ConvSpec, Mode, Tensor,
};

fn default_in_channels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub num_classes: usize,
    /// Channels of the first cell's nodes.
    pub channels: usize,
    pub cells: usize,
    pub nodes: usize,
    pub stem_multiplier: usize,
    /// Only `channels / channel_divisor` channels of each edge input go through the candidates.
    pub channel_divisor: usize,
    pub candidates: Vec<OpKind>,
    pub precision: Precision,
    pub binarize_mode: BinarizeMode,
    pub theta: f64,
    pub keep_pointwise_full: bool,
    /// Binarize the 1×1 input adapters of each cell as well.
    pub binarize_preprocess: bool,
    /// Zero-based reduction cell positions; defaults to the cells at one and two thirds of the depth.
    pub reduction_cells: Option<Vec<usize>>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 10,
            channels: 16,
            cells: 6,
            nodes: 4,
            stem_multiplier: 3,
            channel_divisor: 2,
            candidates: OpKind::ALL.to_vec(),
            precision: Precision::Bnn,
            binarize_mode: BinarizeMode::Xnor,
            theta: 1e-4,
            keep_pointwise_full: false,
            binarize_preprocess: false,
            reduction_cells: None,
        }
    }
}

impl NetworkConfig {
    pub fn op_config(&self) -> OpConfig {
        OpConfig {
            precision: self.precision,
            binarize_mode: self.binarize_mode,
            theta: self.theta,
            keep_pointwise_full: self.keep_pointwise_full,
        }
    }

    pub fn reductions(&self) -> Vec<usize> {
        if let Some(r) = &self.reduction_cells {
            return r.clone();
        }
        let n = self.cells as f64;
        let mut out: Vec<usize> = [n / 3.0, 2.0 * n / 3.0]
            .iter()
            .map(|p| (p.round() as usize).max(1) - 1)
            .filter(|&i| i < self.cells)
            .collect();
        out.dedup();
        out
    }

    pub fn cell_kinds(&self) -> Vec<CellKind> {
        let r = self.reductions();
        (0..self.cells)
            .map(|i| if r.contains(&i) { CellKind::Reduce } else { CellKind::Normal })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.nodes == 0 || self.channels == 0 || self.num_classes == 0 {
            return Err(invalid!("cells, nodes, channels and classes must be positive"));
        }
        if self.candidates.is_empty() {
            return Err(invalid!("candidate list is empty"));
        }
        let mut seen = self.candidates.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.candidates.len() {
            return Err(invalid!("candidate list has duplicates"));
        }
        if self.channel_divisor == 0 || self.channels % self.channel_divisor != 0 {
            return Err(invalid!(
                "channel divisor {} must divide {} channels",
                self.channel_divisor,
                self.channels
            ));
        }
        if self.reductions().iter().any(|&i| i >= self.cells) {
            return Err(invalid!("reduction cell index out of range"));
        }
        Ok(())
    }
}

/// α and its optimizer state for one edge. Equality looks at the ops and α only.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeArch {
    pub ops: Vec<OpKind>,
    pub alpha: Vec<f32>,
    #[serde(skip)]
    pub grad: Vec<f32>,
    #[serde(skip)]
    moment1: Vec<f32>,
    #[serde(skip)]
    moment2: Vec<f32>,
}

impl PartialEq for EdgeArch {
    fn eq(&self, other: &Self) -> bool {
        self.ops == other.ops && self.alpha == other.alpha
    }
}

impl EdgeArch {
    pub fn new(ops: Vec<OpKind>, alpha: Vec<f32>) -> Self {
        let n = ops.len();
        Self {
            ops,
            alpha,
            grad: vec![0.0; n],
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
        }
    }

    pub fn weights(&self) -> Result<Vec<f32>> {
        softmax(&self.alpha)
    }

    pub fn position(&self, op: OpKind) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }

    fn remove(&mut self, index: usize) {
        self.ops.remove(index);
        self.alpha.remove(index);
        self.grad.remove(index);
        self.moment1.remove(index);
        self.moment2.remove(index);
    }
}

/// Architecture weights shared by all cells of the same kind. Edges are
/// addressed either per kind or by a flat index (normal edges first).
#[derive(Debug, Clone, Serialize)]
pub struct ArchTable {
    pub normal: Vec<EdgeArch>,
    pub reduce: Vec<EdgeArch>,
    #[serde(skip)]
    steps: u64,
}

impl PartialEq for ArchTable {
    fn eq(&self, other: &Self) -> bool {
        self.normal == other.normal && self.reduce == other.reduce
    }
}

impl ArchTable {
    pub fn new<R: Rng>(edges: usize, candidates: &[OpKind], rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1e-3).expect("positive std");
        let mut make = || {
            (0..edges)
                .map(|_| {
                    let alpha = candidates.iter().map(|_| normal.sample(rng) as f32).collect();
                    EdgeArch::new(candidates.to_vec(), alpha)
                })
                .collect::<Vec<_>>()
        };
        let n = make();
        let r = make();
        Self {
            normal: n,
            reduce: r,
            steps: 0,
        }
    }

    pub fn kind(&self, kind: CellKind) -> &[EdgeArch] {
        match kind {
            CellKind::Normal => &self.normal,
            CellKind::Reduce => &self.reduce,
        }
    }

    fn kind_mut(&mut self, kind: CellKind) -> &mut Vec<EdgeArch> {
        match kind {
            CellKind::Normal => &mut self.normal,
            CellKind::Reduce => &mut self.reduce,
        }
    }

    pub fn len(&self) -> usize {
        self.normal.len() + self.reduce.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, flat: usize) -> (CellKind, usize) {
        if flat < self.normal.len() {
            (CellKind::Normal, flat)
        } else {
            (CellKind::Reduce, flat - self.normal.len())
        }
    }

    pub fn edge(&self, flat: usize) -> &EdgeArch {
        let (kind, e) = self.locate(flat);
        &self.kind(kind)[e]
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeArch> {
        self.normal.iter().chain(&self.reduce)
    }

    pub fn edges_mut(&mut self) -> impl Iterator<Item = &mut EdgeArch> {
        self.normal.iter_mut().chain(self.reduce.iter_mut())
    }

    pub fn weights(&self, kind: CellKind) -> Result<Vec<Vec<f32>>> {
        self.kind(kind).iter().map(EdgeArch::weights).collect()
    }

    /// `Σ ln |ops|` over the edges of one kind: the log-size of that cell's search space.
    pub fn log_size(&self, kind: CellKind) -> f64 {
        self.kind(kind).iter().map(|e| (e.ops.len() as f64).ln()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in self.edges_mut() {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn step(&mut self, opt: &AlphaOptimizer) {
        self.steps += 1;
        let t = self.steps as i32;
        for e in self.normal.iter_mut().chain(self.reduce.iter_mut()) {
            match *opt {
                AlphaOptimizer::Sgd { lr } => {
                    for (a, g) in e.alpha.iter_mut().zip(&e.grad) {
                        *a -= lr * g;
                    }
                }
                AlphaOptimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..e.alpha.len() {
                        let g = e.grad[i] + weight_decay * e.alpha[i];
                        e.moment1[i] = beta1 * e.moment1[i] + (1.0 - beta1) * g;
                        e.moment2[i] = beta2 * e.moment2[i] + (1.0 - beta2) * g * g;
                        let m = e.moment1[i] / c1;
                        let v = e.moment2[i] / c2;
                        e.alpha[i] -= lr * m / (v.sqrt() + eps);
                    }
                }
            }
        }
    }

    fn accumulate(&mut self, kind: CellKind, e: usize, weight_grads: &[f32]) -> Result<()> {
        let arch = &mut self.kind_mut(kind)[e];
        let w = arch.weights()?;
        // ∂L/∂α_k = w_k (g_k − Σ_j w_j g_j)
        let mean: f32 = w.iter().zip(weight_grads).map(|(a, b)| a * b).sum();
        for (k, g) in arch.grad.iter_mut().enumerate() {
            *g += w[k] * (weight_grads[k] - mean);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaOptimizer {
    Sgd {
        lr: f32,
    },
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        weight_decay: f32,
    },
}

impl Default for AlphaOptimizer {
    fn default() -> Self {
        AlphaOptimizer::Sgd { lr: 0.01 }
    }
}

impl AlphaOptimizer {
    pub fn adam(lr: f32) -> Self {
        AlphaOptimizer::Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// One op per edge, named by kind so it stays valid across pruning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledArch {
    pub normal: Vec<OpKind>,
    pub reduce: Vec<OpKind>,
}

impl SampledArch {
    /// Every edge set to `op`.
    pub fn uniform(arch: &ArchTable, op: OpKind) -> Self {
        Self {
            normal: vec![op; arch.normal.len()],
            reduce: vec![op; arch.reduce.len()],
        }
    }

    /// The first surviving op of every edge.
    pub fn first(arch: &ArchTable) -> Self {
        Self {
            normal: arch.normal.iter().map(|e| e.ops[0]).collect(),
            reduce: arch.reduce.iter().map(|e| e.ops[0]).collect(),
        }
    }

    /// The highest-α op of every edge.
    pub fn argmax(arch: &ArchTable) -> Self {
        let best = |e: &EdgeArch| {
            let mut k = 0;
            for (i, a) in e.alpha.iter().enumerate() {
                if *a > e.alpha[k] {
                    k = i;
                }
            }
            e.ops[k]
        };
        Self {
            normal: arch.normal.iter().map(best).collect(),
            reduce: arch.reduce.iter().map(best).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.normal.len() + self.reduce.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, flat: usize) -> OpKind {
        if flat < self.normal.len() {
            self.normal[flat]
        } else {
            self.reduce[flat - self.normal.len()]
        }
    }

    pub fn set(&mut self, flat: usize, op: OpKind) {
        if flat < self.normal.len() {
            self.normal[flat] = op;
        } else {
            let n = self.normal.len();
            self.reduce[flat - n] = op;
        }
    }

    pub fn kind(&self, kind: CellKind) -> &[OpKind] {
        match kind {
            CellKind::Normal => &self.normal,
            CellKind::Reduce => &self.reduce,
        }
    }

    fn indices(&self, arch: &ArchTable, kind: CellKind) -> Result<Vec<usize>> {
        let ops = self.kind(kind);
        let edges = arch.kind(kind);
        if ops.len() != edges.len() {
            return Err(shape_err!(
                "sampled {} arch has {} edges, network has {}",
                kind.name(),
                ops.len(),
                edges.len()
            ));
        }
        ops.iter()
            .zip(edges)
            .enumerate()
            .map(|(e, (&op, edge))| {
                edge.position(op)
                    .ok_or_else(|| invalid!("{} edge {e}: {op} is not among the surviving ops", kind.name()))
            })
            .collect()
    }
}

/// Which architecture a forward pass runs.
#[derive(Debug, Clone, Copy)]
pub enum ArchSelection<'a> {
    /// Softmax(α)-weighted mixture over all surviving ops.
    Mixture,
    Sampled(&'a SampledArch),
}

#[derive(Debug, Clone)]
struct NetCache {
    state_shapes: Vec<[usize; 4]>,
    features: Tensor,
    gap_shape: [usize; 4],
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub stem: Block,
    pub cells: Vec<Cell>,
    pub classifier: Param,
    pub bias: Param,
    pub arch: ArchTable,
    cache: Option<NetCache>,
}

impl Network {
    /// A supernet with every candidate on every edge of the dense cell DAG.
    pub fn supernet<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dense = Topology::dense(config.nodes);
        let candidates = config.candidates.clone();
        let arch = ArchTable::new(dense.len(), &candidates, rng);
        let ops = |_: CellKind, _: usize| candidates.clone();
        Self::build(config, |_| dense.clone(), ops, arch, rng)
    }

    /// A stand-alone network with the connections and ops of `genotype`.
    pub fn from_genotype<R: Rng>(genotype: &Genotype, mut config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.channel_divisor = 1;
        config.validate()?;
        genotype.validate(config.nodes)?;
        let (tn, on) = genotype.topology(CellKind::Normal, config.nodes)?;
        let (tr, or) = genotype.topology(CellKind::Reduce, config.nodes)?;
        let arch = ArchTable {
            normal: on.iter().map(|&o| EdgeArch::new(vec![o], vec![0.0])).collect(),
            reduce: or.iter().map(|&o| EdgeArch::new(vec![o], vec![0.0])).collect(),
            steps: 0,
        };
        let topo = |k: CellKind| match k {
            CellKind::Normal => tn.clone(),
            CellKind::Reduce => tr.clone(),
        };
        let ops = |k: CellKind, e: usize| match k {
            CellKind::Normal => vec![on[e]],
            CellKind::Reduce => vec![or[e]],
        };
        Self::build(config, topo, ops, arch, rng)
    }

    fn build<R: Rng>(
        config: NetworkConfig,
        topology: impl Fn(CellKind) -> Topology,
        ops: impl Fn(CellKind, usize) -> Vec<OpKind>,
        arch: ArchTable,
        rng: &mut R,
    ) -> Result<Self> {
        let cfg = config.op_config();
        let adapter_cfg = if config.binarize_preprocess {
            cfg
        } else {
            OpConfig::full_precision()
        };
        let c_stem = config.stem_multiplier * config.channels;
        let stem = Block::Sequence(vec![
            Layer::Conv(conv_layer(
                [c_stem, config.in_channels, 3, 3],
                ConvSpec::new(1, 1),
                false,
                false,
                &adapter_cfg,
                rng,
            )?),
            Layer::Norm(NormLayer::new(c_stem)),
        ]);
        let (mut c_pp, mut c_p, mut c) = (c_stem, c_stem, config.channels);
        let mut reduction_prev = false;
        let bin = config.binarize_preprocess;
        let mut cells = Vec::with_capacity(config.cells);
        for kind in config.cell_kinds() {
            if kind == CellKind::Reduce {
                c *= 2;
            }
            if c % config.channel_divisor != 0 {
                return Err(invalid!("{c} channels not divisible by {}", config.channel_divisor));
            }
            let pre0 = if reduction_prev {
                Block::Reduce(factorized_reduce(c_pp, c, bin, &adapter_cfg, rng)?)
            } else {
                relu_conv_bn(c_pp, c, bin, &adapter_cfg, rng)?
            };
            let pre1 = relu_conv_bn(c_p, c, bin, &adapter_cfg, rng)?;
            let topo = topology(kind);
            let width = c / config.channel_divisor;
            let mut edges = Vec::with_capacity(topo.len());
            for (e, &(from, _)) in topo.edges.iter().enumerate() {
                let stride = Topology::stride(kind, from);
                let instances = ops(kind, e)
                    .into_iter()
                    .map(|k| build_op(k, width, stride, &cfg, rng))
                    .collect::<Result<Vec<_>>>()?;
                edges.push(MixedEdge::new(instances, c, stride, config.channel_divisor)?);
            }
            let cell = Cell::new(kind, c, pre0, pre1, edges, topo)?;
            c_pp = c_p;
            c_p = cell.output_channels();
            reduction_prev = kind == CellKind::Reduce;
            cells.push(cell);
        }
        let std = (1.0 / c_p as f64).sqrt();
        let uniform = rand_distr::Uniform::new_inclusive(-std, std);
        let w: Vec<f32> = (0..config.num_classes * c_p).map(|_| uniform.sample(rng) as f32).collect();
        let classifier = Param::new(Tensor::from_vec([config.num_classes, c_p, 1, 1], w)?, true);
        let bias = Param::vector(vec![0.0; config.num_classes], true);
        Ok(Self {
            config,
            stem,
            cells,
            classifier,
            bias,
            arch,
            cache: None,
        })
    }

    pub fn is_supernet(&self) -> bool {
        self.arch.edges().any(|e| e.ops.len() > 1)
    }

    /// Per-cell route indices for a sampled architecture.
    fn resolve(&self, sampled: &SampledArch) -> Result<(Vec<usize>, Vec<usize>)> {
        Ok((
            sampled.indices(&self.arch, CellKind::Normal)?,
            sampled.indices(&self.arch, CellKind::Reduce)?,
        ))
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode, selection: ArchSelection<'_>) -> Result<Tensor> {
        if input.channels() != self.config.in_channels {
            return Err(shape_err!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                input.channels()
            ));
        }
        enum Routes {
            Mixture(Vec<Vec<f32>>, Vec<Vec<f32>>),
            Single(Vec<usize>, Vec<usize>),
        }
        let routes = match selection {
            ArchSelection::Mixture => Routes::Mixture(
                self.arch.weights(CellKind::Normal)?,
                self.arch.weights(CellKind::Reduce)?,
            ),
            ArchSelection::Sampled(s) => {
                let (n, r) = self.resolve(s)?;
                Routes::Single(n, r)
            }
        };
        let stem = self.stem.forward(input, mode)?;
        let mut shapes = vec![stem.shape()];
        let mut s0 = stem.clone();
        let mut s1 = stem;
        for cell in self.cells.iter_mut() {
            let r = match (&routes, cell.kind) {
                (Routes::Mixture(n, _), CellKind::Normal) => CellRoutes::Mixture(n),
                (Routes::Mixture(_, r), CellKind::Reduce) => CellRoutes::Mixture(r),
                (Routes::Single(n, _), CellKind::Normal) => CellRoutes::Single(n),
                (Routes::Single(_, r), CellKind::Reduce) => CellRoutes::Single(r),
            };
            let out = cell.forward(&s0, &s1, r, mode)?;
            shapes.push(out.shape());
            s0 = std::mem::replace(&mut s1, out);
        }
        let features = global_avg_pool(&s1);
        let logits = linear(&features, &self.classifier.value, self.bias.value.data())?;
        self.cache = Some(NetCache {
            state_shapes: shapes,
            gap_shape: s1.shape(),
            features,
        });
        Ok(logits)
    }

    /// Accumulates parameter gradients and, after a mixture forward, `∂L/∂α`.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward("network"))?;
        let (g_feat, g_w, g_b) = linear_backward(
            &cache.features,
            &self.classifier.value,
            self.bias.value.data(),
            grad_logits,
        )?;
        add_into(&mut self.classifier.grad, &g_w);
        for (g, v) in self.bias.grad.data_mut().iter_mut().zip(&g_b) {
            *g += v;
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; cache.state_shapes.len()];
        let last = grads.len() - 1;
        grads[last] = Some(global_avg_pool_backward(cache.gap_shape, &g_feat)?);
        for i in (0..self.cells.len()).rev() {
            let g = grads[i + 1]
                .take()
                .unwrap_or_else(|| Tensor::zeros(cache.state_shapes[i + 1]));
            let (g0, g1, wgrads) = self.cells[i].backward(&g)?;
            let kind = self.cells[i].kind;
            for (e, wg) in wgrads.iter().enumerate() {
                if let Some(wg) = wg {
                    self.arch.accumulate(kind, e, wg)?;
                }
            }
            accumulate(&mut grads[i.saturating_sub(1)], g0)?;
            accumulate(&mut grads[i], g1)?;
        }
        let g_stem = grads[0].take().unwrap_or_else(|| Tensor::zeros(cache.state_shapes[0]));
        self.stem.backward(&g_stem)?;
        Ok(())
    }

    /// Model state in a stable order. With `only`, ops outside the sampled
    /// architecture are skipped.
    pub fn collect_state(&mut self, only: Option<&SampledArch>) -> Result<Vec<NamedSlot<'_, f32>>> {
        let resolved = only.map(|s| self.resolve(s)).transpose()?;
        let mut out = Vec::new();
        self.stem.collect("stem", &mut out);
        for (i, cell) in self.cells.iter_mut().enumerate() {
            let sel = resolved.as_ref().map(|(n, r)| match cell.kind {
                CellKind::Normal => n.as_slice(),
                CellKind::Reduce => r.as_slice(),
            });
            cell.collect_state(&format!("cells.{i}"), sel, &mut out);
        }
        out.push(NamedSlot {
            name: "classifier.weight".into(),
            slot: Slot::Dense(&mut self.classifier),
        });
        out.push(NamedSlot {
            name: "classifier.bias".into(),
            slot: Slot::Dense(&mut self.bias),
        });
        Ok(out)
    }

    pub fn zero_grad(&mut self) {
        if let Ok(slots) = self.collect_state(None) {
            for s in slots {
                match s.slot {
                    Slot::Dense(p) => p.grad.fill(0.0),
                    Slot::Binarized(b) => b.grad_xhat.fill(0.0),
                    Slot::Buffer(_) => {}
                }
            }
        }
    }

    fn selection_indices(&self, only: Option<&SampledArch>) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
        only.map(|s| self.resolve(s)).transpose()
    }

    pub fn param_count(&self, only: Option<&SampledArch>) -> Result<usize> {
        let sel = self.selection_indices(only)?;
        let cells: usize = self
            .cells
            .iter()
            .map(|c| c.param_count(pick(&sel, c.kind)))
            .sum();
        Ok(self.stem.param_count() + cells + self.classifier.value.len() + self.bias.value.len())
    }

    /// `L_Â` over every binarized kernel in the (selected part of the) network.
    pub fn amplitude_loss(&self, only: Option<&SampledArch>) -> Result<f64> {
        let sel = self.selection_indices(only)?;
        Ok(self.stem.amplitude_loss()
            + self
                .cells
                .iter()
                .map(|c| c.amplitude_loss(pick(&sel, c.kind)))
                .sum::<f64>())
    }

    /// Removes op `index` of edge `e` from every cell of `kind` and from the α table.
    pub fn prune(&mut self, kind: CellKind, e: usize, index: usize) -> Result<OpKind> {
        let edge = self
            .arch
            .kind(kind)
            .get(e)
            .ok_or_else(|| invalid!("{} edge {e} does not exist", kind.name()))?;
        if edge.ops.len() < 2 {
            return Err(invalid!("cannot prune the last operation on {} edge {e}", kind.name()));
        }
        if index >= edge.ops.len() {
            return Err(invalid!("{} edge {e} has no op {index}", kind.name()));
        }
        let op = edge.ops[index];
        for cell in self.cells.iter_mut().filter(|c| c.kind == kind) {
            cell.edges[e].remove(index)?;
        }
        self.arch.kind_mut(kind)[e].remove(index);
        self.cache = None;
        Ok(op)
    }

    /// One first-order architecture step on a validation batch. Network
    /// weights are left untouched (their gradients are cleared afterwards).
    pub fn alpha_step(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        loss: LossKind,
        opt: &AlphaOptimizer,
    ) -> Result<f32> {
        self.arch.zero_grad();
        let logits = self.forward(images, Mode::Train, ArchSelection::Mixture)?;
        let (value, grad) = loss_and_grad(loss, &logits, labels)?;
        self.backward(&grad)?;
        self.zero_grad();
        self.arch.step(opt);
        Ok(value)
    }

    /// Final genotype from a fully pruned network.
    pub fn derive_genotype(&self, seed: u64) -> Result<(Genotype, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut per_kind = Vec::new();
        for kind in [CellKind::Normal, CellKind::Reduce] {
            let edges = self.arch.kind(kind);
            let survivors = edges
                .iter()
                .enumerate()
                .map(|(e, a)| match a.ops.len() {
                    1 => Ok(Survivor {
                        op: a.ops[0],
                        alpha: a.alpha[0],
                    }),
                    n => Err(invalid!("{} edge {e} still has {n} candidate ops", kind.name())),
                })
                .collect::<Result<Vec<_>>>()?;
            let topo = self
                .cells
                .iter()
                .find(|c| c.kind == kind)
                .map(|c| c.topology.clone())
                .unwrap_or_else(|| Topology::dense(self.config.nodes));
            let (entries, w) = select_inputs(kind, &topo, &survivors)?;
            warnings.extend(w);
            per_kind.push(entries);
        }
        let reduce = per_kind.pop().unwrap_or_default();
        let normal = per_kind.pop().unwrap_or_default();
        Ok((
            Genotype {
                version: GENOTYPE_VERSION,
                normal,
                reduce,
                meta: GenotypeMeta {
                    precision: self.config.precision,
                    channels: self.config.channels,
                    cells: self.config.cells,
                    channel_divisor: self.config.channel_divisor,
                    seed,
                },
            },
            warnings,
        ))
    }
}

fn pick(sel: &Option<(Vec<usize>, Vec<usize>)>, kind: CellKind) -> Option<&[usize]> {
    sel.as_ref().map(|(n, r)| match kind {
        CellKind::Normal => n.as_slice(),
        CellKind::Reduce => r.as_slice(),
    })
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => crate::tensor::add_assign(acc, &g)?,
    }
    Ok(())
}
