use super::edge::{EdgeRoute, MixedEdge};
use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::{Block, NamedSlot};
use crate::tensor::{add_assign, concat_channels, slice_channels, Mode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Normal,
    Reduce,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Normal => "normal",
            CellKind::Reduce => "reduce",
        }
    }
}

/// Source and target state index of every edge. States 0 and 1 are the two
/// cell inputs, states `2..2+nodes` the intermediate nodes. Edges are kept
/// sorted by target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Every `i < j` connection: 2 + 3 + ... + (nodes + 1) edges.
    pub fn dense(nodes: usize) -> Self {
        let mut edges = Vec::new();
        for j in 0..nodes {
            for i in 0..2 + j {
                edges.push((i, j + 2));
            }
        }
        Self { nodes, edges }
    }

    pub fn new(nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        edges.sort_by_key(|&(from, to)| (to, from));
        for &(from, to) in &edges {
            if from >= to || to < 2 || to >= nodes + 2 {
                return Err(invalid!("edge {from} -> {to} violates the cell DAG"));
            }
        }
        for j in 2..nodes + 2 {
            if !edges.iter().any(|&(_, to)| to == j) {
                return Err(invalid!("node {} has no incoming edge", j - 1));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edge stride: 2 when a reduction cell reads one of its inputs.
    pub fn stride(kind: CellKind, from: usize) -> usize {
        if kind == CellKind::Reduce && from < 2 {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CellRoutes<'a> {
    Mixture(&'a [Vec<f32>]),
    Single(&'a [usize]),
}

impl CellRoutes<'_> {
    fn edge(&self, e: usize) -> EdgeRoute<'_> {
        match self {
            CellRoutes::Mixture(w) => EdgeRoute::Mixture(&w[e]),
            CellRoutes::Single(idx) => EdgeRoute::Single(idx[e]),
        }
    }

    fn len(&self) -> usize {
        match self {
            CellRoutes::Mixture(w) => w.len(),
            CellRoutes::Single(idx) => idx.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub kind: CellKind,
    pub channels: usize,
    pub pre0: Block,
    pub pre1: Block,
    pub edges: Vec<MixedEdge>,
    pub topology: Topology,
    state_shapes: Option<Vec<[usize; 4]>>,
}

impl Cell {
    pub fn new(kind: CellKind, channels: usize, pre0: Block, pre1: Block, edges: Vec<MixedEdge>, topology: Topology) -> Result<Self> {
        if edges.len() != topology.len() {
            return Err(invalid!("{} edges for a topology of {}", edges.len(), topology.len()));
        }
        Ok(Self {
            kind,
            channels,
            pre0,
            pre1,
            edges,
            topology,
            state_shapes: None,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.channels * self.topology.nodes
    }

    pub fn forward(&mut self, s0: &Tensor, s1: &Tensor, routes: CellRoutes<'_>, mode: Mode) -> Result<Tensor> {
        if routes.len() != self.edges.len() {
            return Err(shape_err!("{} routes for {} edges", routes.len(), self.edges.len()));
        }
        let mut states: Vec<Option<Tensor>> = vec![None; 2 + self.topology.nodes];
        states[0] = Some(self.pre0.forward(s0, mode)?);
        states[1] = Some(self.pre1.forward(s1, mode)?);
        for (e, &(from, to)) in self.topology.edges.iter().enumerate() {
            let input = states[from]
                .as_ref()
                .ok_or_else(|| invalid!("node {} read before it was computed", from as isize - 1))?;
            let out = self.edges[e].forward(input, routes.edge(e), mode)?;
            match &mut states[to] {
                None => states[to] = Some(out),
                Some(acc) => add_assign(acc, &out)?,
            }
        }
        let states = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| invalid!("node {} has no incoming edge", i as isize - 1)))
            .collect::<Result<Vec<_>>>()?;
        self.state_shapes = Some(states.iter().map(Tensor::shape).collect());
        concat_channels(&states[2..].iter().collect::<Vec<_>>())
    }

    /// Returns the gradients for both cell inputs and, in mixture mode, the
    /// per-edge mixture-weight gradients.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<(Tensor, Tensor, Vec<Option<Vec<f32>>>)> {
        let shapes = self.state_shapes.take().ok_or(Error::BackwardBeforeForward("cell"))?;
        let mut grads: Vec<Option<Tensor>> = vec![None; shapes.len()];
        for j in 0..self.topology.nodes {
            grads[j + 2] = Some(slice_channels(grad_out, j * self.channels, self.channels)?);
        }
        let mut weight_grads = vec![None; self.edges.len()];
        for e in (0..self.edges.len()).rev() {
            let (from, to) = self.topology.edges[e];
            let g = grads[to].clone().unwrap_or_else(|| Tensor::zeros(shapes[to]));
            let (gx, wg) = self.edges[e].backward(&g)?;
            weight_grads[e] = wg;
            match &mut grads[from] {
                None => grads[from] = Some(gx),
                Some(acc) => add_assign(acc, &gx)?,
            }
        }
        let g0 = grads[0].take().unwrap_or_else(|| Tensor::zeros(shapes[0]));
        let g1 = grads[1].take().unwrap_or_else(|| Tensor::zeros(shapes[1]));
        Ok((self.pre0.backward(&g0)?, self.pre1.backward(&g1)?, weight_grads))
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, only: Option<&[usize]>, out: &mut Vec<NamedSlot<'a, f32>>) {
        self.pre0.collect(&format!("{prefix}.pre0"), out);
        self.pre1.collect(&format!("{prefix}.pre1"), out);
        for (e, edge) in self.edges.iter_mut().enumerate() {
            edge.collect_state(&format!("{prefix}.edges.{e}"), only.map(|o| o[e]), out);
        }
    }

    pub fn param_count(&self, only: Option<&[usize]>) -> usize {
        let edges: usize = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(e, edge)| {
                edge.ops
                    .iter()
                    .enumerate()
                    .filter(move |(i, _)| only.is_none_or(|o| o[e] == *i))
                    .map(|(_, op)| op.param_count())
            })
            .sum();
        self.pre0.param_count() + self.pre1.param_count() + edges
    }

    pub fn amplitude_loss(&self, only: Option<&[usize]>) -> f64 {
        let edges: f64 = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(e, edge)| {
                edge.ops
                    .iter()
                    .enumerate()
                    .filter(move |(i, _)| only.is_none_or(|o| o[e] == *i))
                    .map(|(_, op)| op.amplitude_loss())
            })
            .sum();
        self.pre0.amplitude_loss() + self.pre1.amplitude_loss() + edges
    }
}
