//! The selection loop on a synthetic multi-armed problem where the true
//! accuracy of every op is known, in both BNN and 1-bit (UCB) modes.
//!
//! cargo run --example bandit_search

use bnas::ops::Precision;
use bnas::report::JsonlWriter;
use bnas::search::{run_search, BanditEnv, ReportRecord, SearchBackend, SearchConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bnas::Result<()> {
    for mode in [Precision::Bnn, Precision::OneBit] {
        let cfg = SearchConfig {
            mode,
            seed: 1,
            ..SearchConfig::default()
        };
        let mut hits = 0;
        for seed in 0..50u64 {
            let mut means: Vec<f64> = (0..8).map(|i| 0.05 + 0.12 * i as f64).collect();
            means.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut env = BanditEnv::new(vec![means], 0.05, seed)?;
            let best = env.best();
            run_search(&mut env, &SearchConfig { seed, ..cfg.clone() }, &mut JsonlWriter::memory())?;
            hits += usize::from(env.ops(0) == best);
        }
        println!("{}: best op survives in {hits}/50 seeds", mode.name());
    }

    // One traced run: s after every round on a 1-bit search.
    let means = vec![vec![0.1, 0.7, 0.3, 0.5, 0.2, 0.6, 0.4, 0.8]];
    let mut env = BanditEnv::new(means, 0.05, 3)?;
    let mut log = JsonlWriter::memory();
    let cfg = SearchConfig {
        mode: Precision::OneBit,
        ..SearchConfig::default()
    };
    run_search(&mut env, &cfg, &mut log)?;
    for r in ReportRecord::parse_report(&log.lines.join("\n"))? {
        if let ReportRecord::Round { round, edges, .. } = r {
            let e = &edges[0];
            let s: Vec<String> = e.ops.iter().zip(&e.s_after).map(|(o, s)| format!("{}={s:.3}", o.name())).collect();
            println!("round {round}: {}  -> prune {}", s.join(" "), e.pruned.name());
        }
    }
    println!("survivor: {}", env.ops(0)[0].name());
    Ok(())
}
