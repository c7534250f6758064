//! Full pipeline at desk scale: BNN search over {none, skip, sep_conv_3x3,
//! avg_pool_3x3} on a 2-class synthetic task, then 20 epochs of training for
//! the derived genotype.
//!
//! cargo run --release --example desk_search

use std::time::Instant;

use bnas::binarized::LossKind;
use bnas::data::AugmentSpec;
use bnas::export::export_genotype_json;
use bnas::ops::{OpKind, Precision};
use bnas::pipeline::{load_data, search, train, DatasetSpec, RunConfig, SyntheticSource};
use bnas::report::JsonlWriter;
use bnas::search::SearchConfig;
use bnas::supernet::NetworkConfig;
use bnas::trainer::FitConfig;

fn main() -> bnas::Result<()> {
    let source = SyntheticSource {
        classes: 2,
        size: 16,
        count: 1000,
        test_count: 500,
        noise: 0.0,
        seed: 11,
        ..SyntheticSource::default()
    };
    let d_min = source.spec().min_mean_distance();
    let source = SyntheticSource {
        noise: d_min / 10.0,
        ..source
    };
    println!("class-mean distance {d_min:.3}, noise {:.3}", source.noise);
    let cfg = RunConfig {
        seed: Some(7),
        dataset: DatasetSpec::Synthetic(source),
        network: NetworkConfig {
            channels: 8,
            cells: 2,
            precision: Precision::Bnn,
            candidates: vec![OpKind::None, OpKind::SkipConnect, OpKind::SepConv3x3, OpKind::AvgPool3x3],
            ..NetworkConfig::default()
        },
        search: SearchConfig {
            warmup_batch: 64,
            search_batch: 64,
            augment: AugmentSpec::off(),
            ..SearchConfig::default()
        },
        train: FitConfig {
            epochs: 20,
            batch_size: 64,
            loss: LossKind::CrossEntropy,
            augment: AugmentSpec::off(),
            ..FitConfig::default()
        },
        perf_val: 200,
        ..RunConfig::default()
    };
    let data = load_data(&cfg.dataset)?;
    let start = Instant::now();
    let mut report = JsonlWriter::memory();
    let run = search(&cfg, &data, &mut report)?;
    println!(
        "search: {} rounds, {} evaluations, {:.1}s",
        run.outcome.rounds,
        run.outcome.evaluations,
        start.elapsed().as_secs_f64()
    );
    for w in &run.warnings {
        println!("warning: {w}");
    }
    print!("{}", export_genotype_json(&run.genotype)?);

    let start = Instant::now();
    let trained = train(&run.genotype, &cfg, &data, &mut JsonlWriter::memory())?;
    for r in &trained.history {
        println!("epoch {:2}  loss {:.4}  test acc {:.3}", r.epoch, r.loss, r.acc.unwrap_or(f64::NAN));
    }
    println!(
        "held-out accuracy {:.3} after {:.1}s",
        trained.test_accuracy,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
