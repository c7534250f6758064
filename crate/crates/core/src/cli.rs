//! Command implementations behind the `bnas` binary. Each command reads its
//! inputs, never modifies them, and writes into an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::export::{
    export_dot, export_dot_live, export_genotype_json, parse_genotype_json, restore_checkpoint, save_checkpoint,
    Checkpoint, CheckpointMode, Payload, MAGIC,
};
use crate::ops::{analytic_param_count, OpKind, Precision};
use crate::pipeline::{load_data, search, train, DataBundle, DatasetSpec, RunConfig};
use crate::plot::{accuracy_svg, s_trajectories_svg};
use crate::report::JsonlWriter;
use crate::search::ReportRecord;
use crate::supernet::{ArchSelection, CellKind, Genotype, Network};
use crate::trainer::evaluate;

/// Candidate order used by `--k0`: the first `k0` entries form the space.
pub const K0_ORDER: [OpKind; 8] = [
    OpKind::None,
    OpKind::SkipConnect,
    OpKind::SepConv3x3,
    OpKind::AvgPool3x3,
    OpKind::MaxPool3x3,
    OpKind::SepConv5x5,
    OpKind::DilConv3x3,
    OpKind::DilConv5x5,
];

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.jsonl";
pub const GENOTYPE_FILE: &str = "search.genotype.json";
pub const DOT_FILE: &str = "search.dot";
pub const SUPERNET_FILE: &str = "supernet.bnas";
pub const LIVE_DOT_FILE: &str = "supernet.dot";
pub const ACCURACY_PLOT: &str = "accuracy.svg";
pub const S_PLOT: &str = "s_trajectories.svg";
pub const TRAIN_LOG: &str = "train.jsonl";
pub const MODEL_FILE: &str = "model.bnas";
pub const METRICS_FILE: &str = "metrics.json";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Precision>,
    pub dataset: Option<DatasetSpec>,
    pub k0: Option<usize>,
    pub cells: Option<usize>,
    pub epochs: Option<usize>,
}

pub fn effective_config(file: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
    let mut cfg: RunConfig = match file {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = Some(s);
    }
    if let Some(m) = o.mode {
        cfg.network.precision = m;
    }
    if let Some(d) = &o.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(k) = o.k0 {
        if !(2..=K0_ORDER.len()).contains(&k) {
            return Err(invalid!("--k0 must be between 2 and {}", K0_ORDER.len()));
        }
        cfg.network.candidates = K0_ORDER[..k].to_vec();
    }
    if let Some(c) = o.cells {
        cfg.network.cells = c;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    cfg.search.mode = cfg.network.precision;
    if let Some(seed) = cfg.seed {
        cfg.search.seed = seed;
    }
    Ok(cfg)
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_genotype(path: &Path) -> Result<Genotype> {
    parse_genotype_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchSummary {
    pub rounds: usize,
    pub evaluations: u64,
    pub warnings: Vec<String>,
    pub genotype: PathBuf,
    pub wall_ms: u64,
}

/// Search, then write the genotype, its DOT rendering, the report, plots and
/// the pruned supernet checkpoint into `out`.
pub fn cmd_search(cfg: &RunConfig, out: &Path) -> Result<SearchSummary> {
    let cfg = cfg.clone().resolve()?;
    write_config(&cfg, out)?;
    let data = load_data(&cfg.dataset)?;
    let mut report = JsonlWriter::create(&out.join(REPORT_FILE))?;
    let mut run = search(&cfg, &data, &mut report)?;
    drop(report);
    let genotype = out.join(GENOTYPE_FILE);
    fs::write(&genotype, export_genotype_json(&run.genotype)?)?;
    fs::write(out.join(DOT_FILE), export_dot(&run.genotype))?;
    fs::write(out.join(LIVE_DOT_FILE), export_dot_live(&run.network)?)?;
    fs::write(out.join(SUPERNET_FILE), save_checkpoint(&mut run.network, CheckpointMode::Full)?)?;
    let records = ReportRecord::parse_report(&fs::read_to_string(out.join(REPORT_FILE))?)?;
    fs::write(out.join(ACCURACY_PLOT), accuracy_svg(&records))?;
    fs::write(out.join(S_PLOT), s_trajectories_svg(&records))?;
    Ok(SearchSummary {
        rounds: run.outcome.rounds,
        evaluations: run.outcome.evaluations,
        warnings: run.warnings,
        genotype,
        wall_ms: run.outcome.wall_ms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub parameters: usize,
    pub test_accuracy: f64,
    pub checkpoint: PathBuf,
}

/// Trains the stand-alone network of `genotype` and saves it with metrics.
pub fn cmd_train(genotype: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let cfg = cfg.clone().resolve()?;
    let g = read_genotype(genotype)?;
    write_config(&cfg, out)?;
    let data = load_data(&cfg.dataset)?;
    let mut log = JsonlWriter::create(&out.join(TRAIN_LOG))?;
    let mut run = train(&g, &cfg, &data, &mut log)?;
    let checkpoint = out.join(MODEL_FILE);
    fs::write(&checkpoint, save_checkpoint(&mut run.network, CheckpointMode::Full)?)?;
    let summary = TrainSummary {
        epochs: cfg.train.epochs,
        parameters: run.network.param_count(None)?,
        test_accuracy: run.test_accuracy,
        checkpoint,
    };
    write_json(&out.join(METRICS_FILE), &summary)?;
    Ok(summary)
}

fn first_dims(ck: &Checkpoint, prefix: &str, rank: usize) -> Option<Vec<u32>> {
    ck.tensors
        .iter()
        .find(|t| t.name.starts_with(prefix) && t.dims.len() == rank)
        .map(|t| t.dims.clone())
}

/// Rebuilds the network a checkpoint was saved from: the genotype's network
/// when one is given, otherwise a supernet of `cfg`. Input channels and class
/// count come from the checkpoint itself.
pub fn network_from_checkpoint(ck: &Checkpoint, genotype: Option<&Genotype>, cfg: &RunConfig) -> Result<Network> {
    let stem = first_dims(ck, "stem.", 4).ok_or_else(|| Error::Format("checkpoint has no stem kernel".into()))?;
    let classes = ck
        .get("classifier.bias")
        .map(|t| t.numel())
        .ok_or_else(|| Error::Format("checkpoint has no classifier.bias".into()))?;
    let mut network = cfg.network.clone();
    network.in_channels = stem[1] as usize;
    network.num_classes = classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let mut net = match genotype {
        Some(g) => Network::from_genotype(g, network, &mut rng)?,
        None => Network::supernet(network, &mut rng)?,
    };
    restore_checkpoint(&mut net, ck)?;
    Ok(net)
}

/// Test-set accuracy of a trained checkpoint.
pub fn cmd_eval(genotype: &Path, checkpoint: &Path, cfg: &RunConfig) -> Result<f64> {
    let g = read_genotype(genotype)?;
    let ck = Checkpoint::from_bytes(&fs::read(checkpoint)?)?;
    let mut net = network_from_checkpoint(&ck, Some(&g), cfg)?;
    let data: DataBundle = load_data(&cfg.dataset)?;
    let test: Vec<usize> = (0..data.test.len()).collect();
    evaluate(&mut net, &data.test, &test, ArchSelection::Mixture, cfg.eval_batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Full,
    Bitpacked,
}

/// Writes `format` to `out`. DOT needs a genotype; checkpoint formats need a
/// checkpoint (plus its genotype for stand-alone networks).
pub fn cmd_export(
    genotype: Option<&Path>,
    checkpoint: Option<&Path>,
    format: ExportFormat,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let g = genotype.map(read_genotype).transpose()?;
    let bytes = match format {
        ExportFormat::Dot => match (&g, checkpoint) {
            (Some(g), _) => export_dot(g).into_bytes(),
            (None, Some(c)) => {
                let ck = Checkpoint::from_bytes(&fs::read(c)?)?;
                export_dot_live(&network_from_checkpoint(&ck, None, cfg)?)?.into_bytes()
            }
            (None, None) => return Err(invalid!("DOT export needs a genotype or a supernet checkpoint")),
        },
        ExportFormat::Full | ExportFormat::Bitpacked => {
            let c = checkpoint.ok_or_else(|| invalid!("checkpoint export needs --checkpoint"))?;
            let ck = Checkpoint::from_bytes(&fs::read(c)?)?;
            let mut net = network_from_checkpoint(&ck, g.as_ref(), cfg)?;
            let mode = if format == ExportFormat::Full {
                CheckpointMode::Full
            } else {
                CheckpointMode::Bitpacked
            };
            save_checkpoint(&mut net, mode)?
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, bytes)?;
    Ok(())
}

fn is_parameter(name: &str) -> bool {
    !(name.starts_with("arch.")
        || name.ends_with(".running_mean")
        || name.ends_with(".running_var")
        || name.ends_with(".amplitude")
        || name.ends_with(".a_hat"))
}

fn inspect_checkpoint(ck: &Checkpoint, file_size: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint: {} tensors", ck.tensors.len());
    let mut params = 0;
    let mut kernel_weights = 0;
    for t in &ck.tensors {
        let (dtype, kind) = match t.payload {
            Payload::F32(_) => ("f32", ""),
            Payload::Signs(_) => ("signs", " (binarized)"),
        };
        let _ = writeln!(
            s,
            "  {:<48} {:<16} {:<5} {:>8} B{kind}",
            t.name,
            format!("{:?}", t.dims),
            dtype,
            t.payload_bytes()
        );
        if is_parameter(&t.name) {
            params += t.numel();
        }
        if matches!(t.payload, Payload::Signs(_)) || ck.get(&format!("{}.amplitude", t.name)).is_some() {
            kernel_weights += t.numel();
        }
    }
    let sizes = ck.sizes();
    let forecast = ck.bitpacked_sizes();
    let _ = writeln!(s, "parameters: {params} ({kernel_weights} in binarized kernels)");
    let _ = writeln!(
        s,
        "bytes: header {}, sign payload {}, real payload {}, total {} (file size {file_size})",
        sizes.header, sizes.sign_payload, sizes.real_payload, sizes.total
    );
    let _ = writeln!(
        s,
        "bitpacked forecast: total {} bytes, kernel sign payload {} bytes for {} weights",
        forecast.total, forecast.sign_payload, forecast.sign_weights
    );
    s
}

fn inspect_report(records: &[ReportRecord]) -> String {
    let mut s = String::new();
    let rounds = records.iter().filter(|r| matches!(r, ReportRecord::Round { .. })).count();
    let evals = records.iter().filter(|r| matches!(r, ReportRecord::Eval { .. })).count();
    if let Some(ReportRecord::Start { mode, k0, edges, repeats, .. }) = records.first() {
        let _ = writeln!(s, "report: mode {}, K0 {k0}, {edges} edges, T {repeats}", mode.name());
    }
    let _ = writeln!(s, "rounds: {rounds}");
    let _ = writeln!(s, "evaluations: {evals}");
    for r in records {
        if let ReportRecord::Round {
            round,
            k,
            evaluations,
            total,
            edges,
            ..
        } = r
        {
            let _ = writeln!(s, "round {round}: k={k}, {evaluations} evaluations, N={total}");
            for e in edges {
                let cells: Vec<String> = e
                    .ops
                    .iter()
                    .enumerate()
                    .map(|(i, op)| {
                        let bonus = match &e.ucb_bonus {
                            Some(b) => match b[i] {
                                Some(v) => format!(" +{v:.3}"),
                                None => " +inf".into(),
                            },
                            None => String::new(),
                        };
                        format!("{}={:.4}{bonus}", op.name(), e.s_after[i])
                    })
                    .collect();
                let _ = writeln!(s, "  {:<10} {}  pruned {}", e.name, cells.join(" "), e.pruned.name());
            }
        }
    }
    s
}

fn inspect_genotype(g: &Genotype) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "genotype v{}: precision {}, {} channels, {} cells",
        g.version,
        g.meta.precision.name(),
        g.meta.channels,
        g.meta.cells
    );
    for kind in [CellKind::Normal, CellKind::Reduce] {
        let c = match kind {
            CellKind::Normal => g.meta.channels,
            CellKind::Reduce => 2 * g.meta.channels,
        };
        let mut total = 0;
        let _ = writeln!(s, "{} cell ({c} channels):", kind.name());
        for e in g.entries(kind) {
            let p = analytic_param_count(e.op, c, e.stride(kind), g.meta.precision);
            total += p;
            let _ = writeln!(s, "  B_{:<2} -> B_{:<2} {:<14} {p:>7} params", e.from, e.to, e.op.name());
        }
        let _ = writeln!(s, "  op parameters: {total}");
    }
    s
}

/// Human-readable summary of a checkpoint, search report or genotype.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        return Ok(inspect_checkpoint(&Checkpoint::from_bytes(&bytes)?, bytes.len()));
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format(format!("{}: unknown file type", path.display())))?;
    if let Ok(g) = parse_genotype_json(text) {
        return Ok(inspect_genotype(&g));
    }
    match ReportRecord::parse_report(text) {
        Ok(records) if !records.is_empty() => Ok(inspect_report(&records)),
        _ => Err(Error::Format(format!("{}: unknown file type", path.display()))),
    }
}
