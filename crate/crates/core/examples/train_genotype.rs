//! Builds a stand-alone binarized network from a hand-written genotype,
//! trains it on synthetic data and compares parameter counts across depths.
//!
//! cargo run --release --example train_genotype

use bnas::data::AugmentSpec;
use bnas::ops::{OpKind, Precision};
use bnas::pipeline::{build_derived, load_data, train, DatasetSpec, RunConfig, SyntheticSource};
use bnas::report::JsonlWriter;
use bnas::supernet::{Genotype, GenotypeEntry, GenotypeMeta, NetworkConfig, GENOTYPE_VERSION};
use bnas::trainer::FitConfig;

fn genotype() -> Genotype {
    let e = |op, from, to| GenotypeEntry { op, from, to };
    let cell = |a, b| {
        (1..=4)
            .flat_map(|j| [e(a, j - 2, j), e(b, j - 1, j)])
            .collect::<Vec<_>>()
    };
    Genotype {
        version: GENOTYPE_VERSION,
        normal: cell(OpKind::SepConv3x3, OpKind::SkipConnect),
        reduce: cell(OpKind::MaxPool3x3, OpKind::DilConv3x3),
        meta: GenotypeMeta {
            precision: Precision::Bnn,
            channels: 8,
            cells: 3,
            channel_divisor: 1,
            seed: 0,
        },
    }
}

fn main() -> bnas::Result<()> {
    let mut cfg = RunConfig {
        seed: Some(1),
        dataset: DatasetSpec::Synthetic(SyntheticSource {
            classes: 4,
            count: 800,
            test_count: 400,
            noise: 0.5,
            ..SyntheticSource::default()
        }),
        network: NetworkConfig {
            channels: 8,
            cells: 3,
            precision: Precision::Bnn,
            ..NetworkConfig::default()
        },
        train: FitConfig {
            epochs: 8,
            augment: AugmentSpec::off(),
            ..FitConfig::default()
        },
        ..RunConfig::default()
    };
    let g = genotype();
    let data = load_data(&cfg.dataset)?;
    for cells in [2, 4, 6] {
        cfg.network.cells = cells;
        println!("{cells} cells: {} parameters", build_derived(&g, &cfg, &data)?.param_count(None)?);
    }
    cfg.network.cells = 3;
    let run = train(&g, &cfg, &data, &mut JsonlWriter::memory())?;
    for r in &run.history {
        println!("epoch {}  lr {:.4}  loss {:.4}  test acc {:.3}", r.epoch, r.lr, r.loss, r.acc.unwrap_or(0.0));
    }
    Ok(())
}
