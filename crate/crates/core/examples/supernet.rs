//! A partially connected supernet: one forward/backward pass over the
//! softmax mixture, a few α steps, a sampled single-path forward, and
//! pruning an op from every edge.
//!
//! cargo run --example supernet

use bnas::binarized::LossKind;
use bnas::export::export_dot_live;
use bnas::ops::{OpKind, Precision};
use bnas::supernet::{AlphaOptimizer, ArchSelection, CellKind, Network, NetworkConfig, SampledArch};
use bnas::tensor::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bnas::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = NetworkConfig {
        channels: 8,
        cells: 3,
        num_classes: 4,
        precision: Precision::Bnn,
        ..NetworkConfig::default()
    };
    let mut net = Network::supernet(cfg, &mut rng)?;
    println!(
        "{} cells, {} edges per kind, {} parameters",
        net.cells.len(),
        net.arch.normal.len(),
        net.param_count(None)?
    );

    let images = Tensor::from_vec([8, 3, 16, 16], (0..8 * 3 * 256).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
    let logits = net.forward(&images, Mode::Train, ArchSelection::Mixture)?;
    println!("mixture logits: {:?}", logits.shape());

    let opt = AlphaOptimizer::adam(3e-3);
    for step in 0..3 {
        let loss = net.alpha_step(&images, &labels, LossKind::CrossEntropy, &opt)?;
        println!("alpha step {step}: loss {loss:.4}");
    }
    let w = net.arch.normal[0].weights()?;
    println!("normal edge 0 weights: {w:.4?}");

    let sampled = SampledArch::uniform(&net.arch, OpKind::SepConv3x3);
    let y = net.forward(&images, Mode::Eval, ArchSelection::Sampled(&sampled))?;
    println!(
        "sampled sep_conv_3x3 path: {:?}, {} parameters",
        y.shape(),
        net.param_count(Some(&sampled))?
    );

    for kind in [CellKind::Normal, CellKind::Reduce] {
        for e in 0..net.arch.kind(kind).len() {
            net.prune(kind, e, 0)?;
        }
    }
    println!("after pruning 'none' everywhere: {} ops per edge", net.arch.normal[0].ops.len());
    let dot = export_dot_live(&net)?;
    println!("{}", dot.lines().take(12).collect::<Vec<_>>().join("\n"));
    Ok(())
}
