//! The CIFAR-10 binary record format and the synthetic task generator,
//! with the three-way split used during search.
//!
//! cargo run --example datasets [-- /path/to/cifar-10-batches-bin]

use bnas::data::{load_cifar10, parse_cifar10, split, SyntheticSpec, CIFAR_RECORD};
use bnas::pipeline::{load_data, DatasetSpec, SyntheticSource};

fn main() -> bnas::Result<()> {
    // Two hand-made records: label 3 with every pixel 255, label 7 with every pixel 0.
    let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
    bytes[0] = 3;
    bytes[1..CIFAR_RECORD].fill(255);
    bytes[CIFAR_RECORD] = 7;
    let ds = parse_cifar10(&bytes)?;
    let first = &ds.images.data()[..3 * 1024];
    println!(
        "crafted records: labels {:?}, first image spans [{}, {}]",
        ds.labels,
        first.iter().cloned().fold(f32::INFINITY, f32::min),
        first.iter().cloned().fold(f32::NEG_INFINITY, f32::max)
    );

    let source = SyntheticSource {
        classes: 2,
        count: 1000,
        test_count: 200,
        ..SyntheticSource::default()
    };
    let spec: SyntheticSpec = source.spec();
    println!(
        "synthetic: nearest class means {:.3} apart, noise {} (separable while noise < {:.3})",
        spec.min_mean_distance(),
        spec.noise,
        spec.min_mean_distance() / 8.0
    );
    let data = load_data(&DatasetSpec::Synthetic(source))?;
    println!(
        "pool {} images of {:?}, class histogram {:?}; test {}",
        data.pool.len(),
        data.pool.image_shape(),
        data.pool.histogram(),
        data.test.len()
    );
    let s = split(data.pool.len(), 200, 0)?;
    println!(
        "splits: weight_train {}, arch_val {}, perf_val {}, gradient {}",
        s.weight_train.len(),
        s.arch_val.len(),
        s.perf_val.len(),
        s.gradient.len()
    );

    if let Some(dir) = std::env::args().nth(1) {
        let (train, test) = load_cifar10(dir.as_ref())?;
        println!("CIFAR-10: {} train / {} test, histogram {:?}", train.len(), test.len(), train.histogram());
    }
    Ok(())
}
