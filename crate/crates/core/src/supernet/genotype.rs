use serde::{Deserialize, Serialize};

use super::cell::{CellKind, Topology};
use crate::error::{invalid, Result};
use crate::ops::{OpKind, Precision};

pub const GENOTYPE_VERSION: u32 = 1;

/// One kept connection. Node ids follow the cell convention: −1 and 0 are the
/// cell inputs, 1.. the intermediate nodes. Serialized as `[op, from, to]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "(OpKind, i32, i32)", from = "(OpKind, i32, i32)")]
pub struct GenotypeEntry {
    pub op: OpKind,
    pub from: i32,
    pub to: i32,
}

impl From<GenotypeEntry> for (OpKind, i32, i32) {
    fn from(e: GenotypeEntry) -> Self {
        (e.op, e.from, e.to)
    }
}

impl From<(OpKind, i32, i32)> for GenotypeEntry {
    fn from((op, from, to): (OpKind, i32, i32)) -> Self {
        Self { op, from, to }
    }
}

impl GenotypeEntry {
    /// Index into the cell state list (inputs at 0 and 1).
    pub fn from_state(&self) -> usize {
        (self.from + 1) as usize
    }

    pub fn to_state(&self) -> usize {
        (self.to + 1) as usize
    }

    pub fn stride(&self, kind: CellKind) -> usize {
        Topology::stride(kind, self.from_state())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeMeta {
    pub precision: Precision,
    pub channels: usize,
    pub cells: usize,
    pub channel_divisor: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype {
    pub version: u32,
    pub normal: Vec<GenotypeEntry>,
    pub reduce: Vec<GenotypeEntry>,
    pub meta: GenotypeMeta,
}

impl Genotype {
    pub fn entries(&self, kind: CellKind) -> &[GenotypeEntry] {
        match kind {
            CellKind::Normal => &self.normal,
            CellKind::Reduce => &self.reduce,
        }
    }

    /// Topology and per-edge op for one cell kind.
    pub fn topology(&self, kind: CellKind, nodes: usize) -> Result<(Topology, Vec<OpKind>)> {
        let mut entries = self.entries(kind).to_vec();
        for e in &entries {
            if e.op == OpKind::None {
                return Err(invalid!("genotype contains a 'none' connection into node {}", e.to));
            }
            if e.from < -1 || e.to < 1 {
                return Err(invalid!("bad node ids {} -> {}", e.from, e.to));
            }
        }
        entries.sort_by_key(|e| (e.to, e.from));
        let topo = Topology::new(nodes, entries.iter().map(|e| (e.from_state(), e.to_state())).collect())?;
        Ok((topo, entries.iter().map(|e| e.op).collect()))
    }

    pub fn validate(&self, nodes: usize) -> Result<()> {
        for kind in [CellKind::Normal, CellKind::Reduce] {
            self.topology(kind, nodes)?;
            for j in 1..=nodes as i32 {
                let arity = self.entries(kind).iter().filter(|e| e.to == j).count();
                if arity != 2 {
                    return Err(invalid!("{} node {j} has {arity} inputs, expected 2", kind.name()));
                }
            }
        }
        Ok(())
    }
}

/// Surviving op and its final α for each edge of one cell kind.
#[derive(Debug, Clone, Copy)]
pub struct Survivor {
    pub op: OpKind,
    pub alpha: f32,
}

/// Keeps, for each intermediate node, the two incoming edges with the largest
/// α among non-`none` survivors (ties by edge order). When fewer than two are
/// available the remaining slots become `skip_connect` on the best `none`
/// edges and a warning is returned.
pub fn select_inputs(kind: CellKind, topology: &Topology, survivors: &[Survivor]) -> Result<(Vec<GenotypeEntry>, Vec<String>)> {
    if survivors.len() != topology.len() {
        return Err(invalid!("{} survivors for {} edges", survivors.len(), topology.len()));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for j in 2..topology.nodes + 2 {
        let mut incoming: Vec<(usize, usize)> = topology
            .edges
            .iter()
            .enumerate()
            .filter(|(_, &(_, to))| to == j)
            .map(|(e, &(from, _))| (e, from))
            .collect();
        incoming.sort_by(|a, b| survivors[b.0].alpha.total_cmp(&survivors[a.0].alpha));
        let (real, none): (Vec<_>, Vec<_>) = incoming.into_iter().partition(|(e, _)| survivors[*e].op != OpKind::None);
        let mut kept: Vec<(usize, OpKind)> = real.iter().take(2).map(|&(e, from)| (from, survivors[e].op)).collect();
        if kept.len() < 2 {
            let missing = 2 - kept.len();
            let fill: Vec<_> = none.iter().take(missing).map(|&(_, from)| (from, OpKind::SkipConnect)).collect();
            warnings.push(format!(
                "{} node {} has {} non-none inputs; substituting skip_connect",
                kind.name(),
                j - 1,
                kept.len()
            ));
            kept.extend(fill);
        }
        if kept.is_empty() {
            return Err(invalid!("{} node {} has no incoming edges", kind.name(), j - 1));
        }
        kept.sort_by_key(|&(from, _)| from);
        entries.extend(kept.into_iter().map(|(from, op)| GenotypeEntry {
            op,
            from: from as i32 - 1,
            to: j as i32 - 1,
        }));
    }
    Ok((entries, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> GenotypeMeta {
        GenotypeMeta {
            precision: Precision::Bnn,
            channels: 16,
            cells: 6,
            channel_divisor: 2,
            seed: 1,
        }
    }

    #[test]
    fn distinct_survivors_give_two_inputs_per_node() {
        let topo = Topology::dense(4);
        let survivors: Vec<_> = (0..14)
            .map(|e| Survivor {
                op: OpKind::ALL[1 + e % 7],
                alpha: e as f32,
            })
            .collect();
        let (entries, warnings) = select_inputs(CellKind::Normal, &topo, &survivors).unwrap();
        assert_eq!(entries.len(), 8);
        assert!(warnings.is_empty());
    }

    #[test]
    fn top_two_by_alpha() {
        // Node 1 has 2 inputs, node 2 has 3: alphas 0.5, 0.2, 0.9 on edges 2, 3, 4.
        let topo = Topology::dense(4);
        let mut survivors = vec![
            Survivor {
                op: OpKind::SepConv3x3,
                alpha: 0.0
            };
            14
        ];
        for (e, a) in [(2, 0.5), (3, 0.2), (4, 0.9)] {
            survivors[e].alpha = a;
        }
        let (entries, _) = select_inputs(CellKind::Normal, &topo, &survivors).unwrap();
        let node2: Vec<i32> = entries.iter().filter(|e| e.to == 2).map(|e| e.from).collect();
        // Edges 2 and 4 read from states 0 and 2, i.e. node ids −1 and 1.
        assert_eq!(node2, vec![-1, 1]);
    }

    #[test]
    fn none_survivors_fall_back_to_skip() {
        let topo = Topology::dense(4);
        let mut survivors = vec![
            Survivor {
                op: OpKind::MaxPool3x3,
                alpha: 0.0
            };
            14
        ];
        survivors[0].op = OpKind::None;
        let (entries, warnings) = select_inputs(CellKind::Reduce, &topo, &survivors).unwrap();
        assert_eq!(warnings.len(), 1);
        let node1: Vec<_> = entries.iter().filter(|e| e.to == 1).collect();
        assert_eq!(node1.len(), 2);
        assert!(node1.iter().any(|e| e.op == OpKind::SkipConnect && e.from == -1));
    }

    #[test]
    fn json_round_trip() {
        let g = Genotype {
            version: GENOTYPE_VERSION,
            normal: vec![(OpKind::SepConv3x3, -1, 1).into(), (OpKind::SkipConnect, 0, 1).into()],
            reduce: vec![(OpKind::MaxPool3x3, 0, 1).into(), (OpKind::DilConv5x5, -1, 1).into()],
            meta: meta(),
        };
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains(r#"["sep_conv_3x3",-1,1]"#));
        let back: Genotype = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn strides_follow_cell_kind() {
        let e: GenotypeEntry = (OpKind::SepConv3x3, 0, 2).into();
        assert_eq!(e.stride(CellKind::Reduce), 2);
        assert_eq!(e.stride(CellKind::Normal), 1);
        let inner: GenotypeEntry = (OpKind::SepConv3x3, 1, 2).into();
        assert_eq!(inner.stride(CellKind::Reduce), 1);
    }
}
