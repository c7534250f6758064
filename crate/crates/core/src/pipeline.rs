//! End-to-end runs shared by the command-line tool, the examples and the
//! acceptance tests: dataset selection, search, and stand-alone training of
//! a derived genotype.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{load_cifar10, make_synthetic, sample_synthetic, split, Dataset, Splits, SyntheticSpec};
use crate::error::{invalid, Error, Result};
use crate::report::JsonlWriter;
use crate::search::{run_search, SearchConfig, SearchOutcome, SupernetBackend};
use crate::supernet::{ArchSelection, Genotype, Network, NetworkConfig};
use crate::trainer::{evaluate, fit, FitConfig, ProgressRecord};

/// Synthetic training pool plus an independent held-out set drawn from the
/// same class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    pub count: usize,
    pub test_count: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            classes: s.classes,
            channels: s.channels,
            size: s.size,
            count: s.count,
            test_count: 500,
            noise: s.noise,
            seed: s.seed,
        }
    }
}

impl SyntheticSource {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            channels: self.channels,
            size: self.size,
            count: self.count,
            noise: self.noise,
            seed: self.seed,
        }
    }
}

/// `synthetic`, `synthetic:{json}` or `cifar10:PATH`.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic(SyntheticSource),
    Cifar10(PathBuf),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Synthetic(SyntheticSource::default())
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            return Ok(Self::default());
        }
        if let Some(json) = s.strip_prefix("synthetic:") {
            return Ok(Self::Synthetic(serde_json::from_str(json)?));
        }
        if let Some(path) = s.strip_prefix("cifar10:") {
            return Ok(Self::Cifar10(PathBuf::from(path)));
        }
        Err(invalid!("unknown dataset '{s}' (expected synthetic[:JSON] or cifar10:PATH)"))
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synthetic(s) => write!(f, "synthetic:{}", serde_json::to_string(s).map_err(|_| fmt::Error)?),
            Self::Cifar10(p) => write!(f, "cifar10:{}", p.display()),
        }
    }
}

impl Serialize for DatasetSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Training pool and held-out test set.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub pool: Dataset,
    pub test: Dataset,
}

pub fn load_data(spec: &DatasetSpec) -> Result<DataBundle> {
    match spec {
        DatasetSpec::Synthetic(s) => Ok(DataBundle {
            pool: make_synthetic(&s.spec())?,
            test: sample_synthetic(&s.spec(), s.test_count, 1)?,
        }),
        DatasetSpec::Cifar10(dir) => {
            let (pool, test) = load_cifar10(dir)?;
            Ok(DataBundle { pool, test })
        }
    }
}

/// Everything a run needs. Read from JSON; command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub search: SearchConfig,
    /// Stand-alone training of the derived genotype.
    pub train: FitConfig,
    /// Size of the performance-validation split used to score sampled architectures.
    pub perf_val: usize,
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            dataset: DatasetSpec::default(),
            network: NetworkConfig::default(),
            search: SearchConfig::default(),
            train: FitConfig::default(),
            perf_val: 200,
            eval_batch: 200,
        }
    }
}

impl RunConfig {
    /// Propagates the run seed and the mode into the nested configs and checks them.
    pub fn resolve(mut self) -> Result<Self> {
        let seed = self.seed.ok_or_else(|| invalid!("a seed is required"))?;
        self.search.seed = seed;
        self.search.mode = self.network.precision;
        if self.eval_batch == 0 {
            return Err(invalid!("eval_batch must be positive"));
        }
        self.network.validate()?;
        self.search.validate()?;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Result of a search run. `network` is the fully pruned supernet.
#[derive(Debug)]
pub struct SearchRun {
    pub network: Network,
    pub genotype: Genotype,
    pub warnings: Vec<String>,
    pub outcome: SearchOutcome,
    pub splits: Splits,
}

pub fn search(cfg: &RunConfig, data: &DataBundle, report: &mut JsonlWriter) -> Result<SearchRun> {
    let cfg = cfg.clone().resolve()?;
    let seed = cfg.seed();
    let mut network_cfg = cfg.network.clone();
    network_cfg.in_channels = data.pool.image_shape()[0];
    network_cfg.num_classes = data.pool.classes;
    let net = Network::supernet(network_cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let splits = split(data.pool.len(), cfg.perf_val, seed ^ 0x5b11_7500)?;
    let mut backend = SupernetBackend::new(net, &data.pool, &splits, &cfg.search)?;
    let outcome = run_search(&mut backend, &cfg.search, report)?;
    let network = backend.net;
    let (genotype, warnings) = network.derive_genotype(seed)?;
    Ok(SearchRun {
        network,
        genotype,
        warnings,
        outcome,
        splits,
    })
}

/// A trained stand-alone network and its history.
#[derive(Debug)]
pub struct TrainRun {
    pub network: Network,
    pub history: Vec<ProgressRecord>,
    pub test_accuracy: f64,
}

/// Builds `genotype` with `cfg.network` (cells, channels, precision) and
/// trains it on the whole pool, reporting test accuracy after every epoch.
pub fn train(genotype: &Genotype, cfg: &RunConfig, data: &DataBundle, log: &mut JsonlWriter) -> Result<TrainRun> {
    let seed = cfg.seed();
    let mut network = build_derived(genotype, cfg, data)?;
    let all: Vec<usize> = (0..data.pool.len()).collect();
    let test: Vec<usize> = (0..data.test.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a41_0000);
    let history = fit(&mut network, &data.pool, &all, Some((&data.test, &test)), &cfg.train, log, &mut rng)?;
    let test_accuracy = match history.last().and_then(|r| r.acc) {
        Some(a) => a,
        None => evaluate(&mut network, &data.test, &test, ArchSelection::Mixture, cfg.eval_batch)?,
    };
    Ok(TrainRun {
        network,
        history,
        test_accuracy,
    })
}

/// The untrained stand-alone network for `genotype`, shaped for `data`.
pub fn build_derived(genotype: &Genotype, cfg: &RunConfig, data: &DataBundle) -> Result<Network> {
    let mut network_cfg = cfg.network.clone();
    network_cfg.in_channels = data.pool.image_shape()[0];
    network_cfg.num_classes = data.pool.classes;
    Network::from_genotype(genotype, network_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed() ^ 0xde71_7ed0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_spec_parses_and_prints() {
        assert_eq!("synthetic".parse::<DatasetSpec>().unwrap(), DatasetSpec::default());
        let s: DatasetSpec = "synthetic:{\"classes\":2,\"size\":8}".parse().unwrap();
        let DatasetSpec::Synthetic(src) = &s else { panic!() };
        assert_eq!((src.classes, src.size, src.count), (2, 8, 1000));
        assert_eq!(s.to_string().parse::<DatasetSpec>().unwrap(), s);
        assert_eq!(
            "cifar10:/data/c".parse::<DatasetSpec>().unwrap(),
            DatasetSpec::Cifar10("/data/c".into())
        );
        assert!("mnist".parse::<DatasetSpec>().is_err());
        assert!("synthetic:{\"colour\":1}".parse::<DatasetSpec>().is_err());
    }

    #[test]
    fn run_config_json_round_trip() {
        let cfg = RunConfig {
            seed: Some(3),
            ..RunConfig::default()
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str("{\"seed\": 5, \"perf_val\": 10}").unwrap();
        assert_eq!((partial.seed, partial.perf_val), (Some(5), 10));
        assert!(serde_json::from_str::<RunConfig>("{\"sed\": 5}").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::default().resolve().is_err());
    }

    #[test]
    fn test_set_is_independent_but_same_task() {
        let src = SyntheticSource {
            classes: 2,
            count: 20,
            test_count: 10,
            ..SyntheticSource::default()
        };
        let data = load_data(&DatasetSpec::Synthetic(src.clone())).unwrap();
        assert_eq!((data.pool.len(), data.test.len()), (20, 10));
        assert_ne!(data.pool.images.data()[..10], data.test.images.data()[..10]);
    }
}
