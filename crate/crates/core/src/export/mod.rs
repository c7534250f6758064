//! Artifacts: genotype JSON, DOT renderings and `.bnas` checkpoints.

mod checkpoint;

use std::fmt::Write;

pub use checkpoint::{
    checkpoint_of, load_checkpoint, pack_signs, restore_checkpoint, save_checkpoint, size_forecast, unpack_signs,
    Checkpoint, CheckpointMode, Payload, SizeBreakdown, TensorRecord, CHECKPOINT_VERSION, MAGIC,
};

use crate::error::{Error, Result};
use crate::supernet::{CellKind, Genotype, Network, GENOTYPE_VERSION};

/// Pretty-printed JSON with a fixed key order and a trailing newline.
pub fn export_genotype_json(genotype: &Genotype) -> Result<String> {
    let mut text = serde_json::to_string_pretty(genotype)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_genotype_json(text: &str) -> Result<Genotype> {
    let g: Genotype = serde_json::from_str(text)?;
    if g.version != GENOTYPE_VERSION {
        return Err(Error::Format(format!(
            "genotype version {} (expected {GENOTYPE_VERSION})",
            g.version
        )));
    }
    Ok(g)
}

fn node_name(id: i32) -> String {
    format!("\"B_{id}\"")
}

fn digraph_header(out: &mut String, kind: CellKind, nodes: usize) {
    let _ = writeln!(out, "digraph {} {{", kind.name());
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=box, style=rounded];\n");
    for id in -1..=nodes as i32 {
        let _ = writeln!(out, "  {};", node_name(id));
    }
    out.push_str("  \"output\";\n");
}

fn digraph_footer(out: &mut String, nodes: usize) {
    for id in 1..=nodes as i32 {
        let _ = writeln!(out, "  {} -> \"output\";", node_name(id));
    }
    out.push_str("}\n");
}

/// One digraph per cell kind; edges are labelled with their op.
pub fn export_dot(genotype: &Genotype) -> String {
    let mut out = String::new();
    for kind in [CellKind::Normal, CellKind::Reduce] {
        let entries = genotype.entries(kind);
        let nodes = entries.iter().map(|e| e.to).max().unwrap_or(0).max(0) as usize;
        digraph_header(&mut out, kind, nodes);
        for e in entries {
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{}\"];",
                node_name(e.from),
                node_name(e.to),
                e.op.name()
            );
        }
        digraph_footer(&mut out, nodes);
    }
    out
}

/// Like [`export_dot`] for a live (possibly unpruned) network: each edge is
/// labelled with every surviving op and its current softmax(α) weight.
pub fn export_dot_live(net: &Network) -> Result<String> {
    let mut out = String::new();
    for kind in [CellKind::Normal, CellKind::Reduce] {
        let Some(cell) = net.cells.iter().find(|c| c.kind == kind) else {
            continue;
        };
        let nodes = cell.topology.nodes;
        digraph_header(&mut out, kind, nodes);
        for (&(from, to), arch) in cell.topology.edges.iter().zip(net.arch.kind(kind)) {
            let label = arch
                .ops
                .iter()
                .zip(arch.weights()?)
                .map(|(op, w)| format!("{} {w}", op.name()))
                .collect::<Vec<_>>()
                .join("\\n");
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{label}\"];",
                node_name(from as i32 - 1),
                node_name(to as i32 - 1)
            );
        }
        digraph_footer(&mut out, nodes);
    }
    Ok(out)
}
