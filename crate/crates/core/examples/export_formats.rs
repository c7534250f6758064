//! Genotype JSON, DOT rendering and both checkpoint modes, with the byte
//! accounting of the bitpacked format.
//!
//! cargo run --example export_formats

use bnas::export::{
    checkpoint_of, export_dot, export_genotype_json, load_checkpoint, pack_signs, parse_genotype_json, save_checkpoint,
    CheckpointMode,
};
use bnas::ops::{OpKind, Precision};
use bnas::supernet::{ArchSelection, Genotype, GenotypeEntry, GenotypeMeta, Network, NetworkConfig, GENOTYPE_VERSION};
use bnas::tensor::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bnas::Result<()> {
    let e = |op, from, to| GenotypeEntry { op, from, to };
    let g = Genotype {
        version: GENOTYPE_VERSION,
        normal: vec![
            e(OpKind::SepConv3x3, -1, 1),
            e(OpKind::SkipConnect, 0, 1),
            e(OpKind::DilConv3x3, 0, 2),
            e(OpKind::SepConv3x3, 1, 2),
        ],
        reduce: vec![
            e(OpKind::MaxPool3x3, -1, 1),
            e(OpKind::SepConv5x5, 0, 1),
            e(OpKind::AvgPool3x3, 0, 2),
            e(OpKind::SkipConnect, 1, 2),
        ],
        meta: GenotypeMeta {
            precision: Precision::Bnn,
            channels: 16,
            cells: 3,
            channel_divisor: 1,
            seed: 0,
        },
    };
    let json = export_genotype_json(&g)?;
    assert_eq!(parse_genotype_json(&json)?, g);
    println!("{json}");
    println!("{}", export_dot(&g));

    let cfg = NetworkConfig {
        channels: 16,
        cells: 3,
        nodes: 2,
        precision: Precision::Bnn,
        ..NetworkConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::from_genotype(&g, cfg.clone(), &mut rng)?;
    let x = Tensor::from_vec([2, 3, 16, 16], (0..2 * 3 * 256).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let before = net.forward(&x, Mode::Eval, ArchSelection::Mixture)?;

    for mode in [CheckpointMode::Full, CheckpointMode::Bitpacked] {
        let bytes = save_checkpoint(&mut net, mode)?;
        let sizes = checkpoint_of(&mut net, mode)?.sizes();
        let mut copy = Network::from_genotype(&g, cfg.clone(), &mut ChaCha8Rng::seed_from_u64(9))?;
        load_checkpoint(&bytes, &mut copy)?;
        let after = copy.forward(&x, Mode::Eval, ArchSelection::Mixture)?;
        println!(
            "{mode:?}: {} bytes (header {}, signs {} for {} weights, reals {}); logits identical: {}",
            bytes.len(),
            sizes.header,
            sizes.sign_payload,
            sizes.sign_weights,
            sizes.real_payload,
            after == before
        );
    }
    let plane = pack_signs(&[true; 2304]);
    println!("a 16x16x3x3 kernel packs into {} sign bytes + 4 bytes for its scale", plane.len());
    Ok(())
}
