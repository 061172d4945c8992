use std::fmt;
use std::time::Duration;

use super::stats::{mean, paired_t_test, standard_error};
use super::workload::{generate_dataset, run_scan, DatasetInfo, ScanResult, Workload};
use crate::device::{
    open_device, Backing, DeviceGeometry, LatencyModel, DEFAULT_LBA_SIZE, DEFAULT_MDTS, KERNEL_PATH_OVERHEAD,
    PASSTHROUGH_OVERHEAD,
};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layout::{data_region_base, BLOCK_SIZE};
use crate::strategy::{HostCosts, StrategyConfig, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub passthrough: bool,
}

impl RunConfig {
    pub const fn new(strategy: StrategyKind, passthrough: bool) -> Self {
        RunConfig { strategy, passthrough }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.strategy, if self.passthrough { "+passthrough" } else { "" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Passthrough,
    Compare,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Passthrough => "passthrough",
            ExperimentKind::Compare => "compare",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scale_factors: Vec<f64>,
    pub repetitions: usize,
    pub workers: usize,
    /// Repetition `r` seeds every configuration's latency model with `seed + r`.
    pub seed: u64,
    /// Seed of the generated table.
    pub data_seed: u64,
    pub base_latency: Duration,
    pub jitter: Duration,
    pub kernel_overhead: Duration,
    pub passthrough_overhead: Duration,
    pub queue_depth: usize,
    pub costs: HostCosts,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let latency = LatencyModel::default();
        ExperimentConfig {
            scale_factors: vec![0.01, 0.1, 1.0],
            repetitions: 10,
            workers: 8,
            seed: 42,
            data_seed: 7,
            base_latency: latency.base_latency,
            jitter: latency.jitter_range,
            kernel_overhead: KERNEL_PATH_OVERHEAD,
            passthrough_overhead: PASSTHROUGH_OVERHEAD,
            queue_depth: crate::device::DEFAULT_QUEUE_DEPTH,
            costs: HostCosts::default(),
        }
    }
}

impl ExperimentConfig {
    fn latency(&self, passthrough: bool, seed: u64) -> LatencyModel {
        LatencyModel {
            base_latency: self.base_latency,
            jitter_range: self.jitter,
            per_command_overhead: if passthrough {
                self.passthrough_overhead
            } else {
                self.kernel_overhead
            },
            rng_seed: seed,
        }
    }

    fn strategy(&self, kind: StrategyKind) -> StrategyConfig {
        StrategyConfig {
            pool_size: Some(self.workers),
            queue_depth: self.queue_depth,
            costs: self.costs,
            ..StrategyConfig::new(kind)
        }
    }
}

/// Samples of one configuration at one scale factor, in microseconds of
/// simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    pub scale_factor: f64,
    pub samples: Vec<f64>,
    pub host_seconds: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub checksum: u64,
}

/// One-sided paired test of "candidate is faster than baseline".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub scale_factor: f64,
    pub baseline: RunConfig,
    pub candidate: RunConfig,
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

impl Comparison {
    pub fn rejects_null(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: ExperimentKind,
    pub runs: Vec<RunResult>,
    pub comparisons: Vec<Comparison>,
}

impl Report {
    pub fn run(&self, config: RunConfig, scale_factor: f64) -> Option<&RunResult> {
        self.runs
            .iter()
            .find(|r| r.config == config && r.scale_factor == scale_factor)
    }

    pub fn comparison(&self, candidate: RunConfig, scale_factor: f64) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.candidate == candidate && c.scale_factor == scale_factor)
    }
}

/// Paired comparison where identical samples count as "no evidence either
/// way": `t = 0`, `p = 0.5`.
pub fn compare_runs(baseline: &RunResult, candidate: &RunResult) -> Result<Comparison> {
    if baseline.samples.len() != candidate.samples.len() {
        return Err(Error::LengthMismatch(baseline.samples.len(), candidate.samples.len()));
    }
    let (t, df, p) = match paired_t_test(&baseline.samples, &candidate.samples) {
        Ok(r) => (r.t_statistic, r.degrees_of_freedom, r.p_value),
        Err(Error::UndefinedT) => (0.0, baseline.samples.len() - 1, 0.5),
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        scale_factor: baseline.scale_factor,
        baseline: baseline.config,
        candidate: candidate.config,
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
    })
}

/// A formatted in-memory image holding the dataset for `workload`, sized to fit.
pub fn prepare_image(workload: &Workload) -> Result<(DeviceGeometry, Vec<u8>, DatasetInfo)> {
    let probe = DeviceGeometry::for_capacity(DEFAULT_MDTS, DEFAULT_LBA_SIZE, DEFAULT_MDTS)?;
    let capacity = data_region_base(&probe) + (workload.block_count() + 1) * BLOCK_SIZE;
    let geometry = DeviceGeometry::for_capacity(capacity, DEFAULT_LBA_SIZE, DEFAULT_MDTS)?;
    let device = open_device(geometry, LatencyModel::default(), Backing::Memory)?;
    let engine = Engine::format(device, StrategyConfig::new(StrategyKind::SyncDirect))?;
    let info = generate_dataset(&engine, workload.scale_factor, workload.seed)?;
    Ok((geometry, engine.device().image_bytes()?, info))
}

/// Scans a copy of `image` once under `strategy` and `latency`.
pub fn scan_image(
    geometry: DeviceGeometry,
    image: &[u8],
    latency: LatencyModel,
    strategy: StrategyConfig,
    workers: usize,
) -> Result<ScanResult> {
    let device = open_device(geometry, latency, Backing::MemoryImage(image.to_vec()))?;
    let engine = Engine::open(device, strategy)?;
    run_scan(&engine, workers)
}

/// Runs every configuration at every scale factor, pairing repetitions by
/// seed, and tests each candidate against `baseline`.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    configs: &[RunConfig],
    baseline: RunConfig,
) -> Result<Report> {
    if cfg.repetitions < 2 {
        return Err(Error::NotEnoughSamples(cfg.repetitions));
    }
    let mut report = Report {
        kind,
        runs: Vec::new(),
        comparisons: Vec::new(),
    };
    for &sf in &cfg.scale_factors {
        let workload = Workload::new(sf, cfg.data_seed)?;
        let (geometry, image, info) = prepare_image(&workload)?;
        let mut runs: Vec<RunResult> = configs
            .iter()
            .map(|&config| RunResult {
                config,
                scale_factor: sf,
                samples: Vec::with_capacity(cfg.repetitions),
                host_seconds: Vec::with_capacity(cfg.repetitions),
                mean: f64::NAN,
                stderr: f64::NAN,
                checksum: info.checksum,
            })
            .collect();
        for rep in 0..cfg.repetitions {
            let seed = cfg.seed.wrapping_add(rep as u64);
            for run in runs.iter_mut() {
                let scan = scan_image(
                    geometry,
                    &image,
                    cfg.latency(run.config.passthrough, seed),
                    cfg.strategy(run.config.strategy),
                    cfg.workers,
                )?;
                run.samples.push(scan.duration.as_nanos() as f64 / 1_000.0);
                run.host_seconds.push(scan.host_time.as_secs_f64());
            }
        }
        for run in runs.iter_mut() {
            run.mean = mean(&run.samples);
            run.stderr = standard_error(&run.samples)?;
        }
        let base = runs
            .iter()
            .find(|r| r.config == baseline)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("baseline {baseline} not among configurations")))?;
        for run in runs.iter().filter(|r| r.config != baseline) {
            report.comparisons.push(compare_runs(&base, run)?);
        }
        report.runs.extend(runs);
    }
    Ok(report)
}

pub const PASSTHROUGH_CONFIGS: [RunConfig; 2] = [
    RunConfig::new(StrategyKind::AsyncThreadQueues, false),
    RunConfig::new(StrategyKind::AsyncThreadQueues, true),
];

pub const COMPARE_CONFIGS: [RunConfig; 6] = [
    RunConfig::new(StrategyKind::FileBaseline, false),
    RunConfig::new(StrategyKind::SyncDirect, true),
    RunConfig::new(StrategyKind::AsyncSingleQueue, true),
    RunConfig::new(StrategyKind::AsyncQueuePool, true),
    RunConfig::new(StrategyKind::AsyncThreadQueues, true),
    RunConfig::new(StrategyKind::AsyncThreadQueues, false),
];

/// Thread-owned queues with and without passthrough; the null hypothesis is
/// that the kernel path is at least as fast.
pub fn experiment_passthrough(cfg: &ExperimentConfig) -> Result<Report> {
    run_experiment(ExperimentKind::Passthrough, cfg, &PASSTHROUGH_CONFIGS, PASSTHROUGH_CONFIGS[0])
}

/// Every strategy against the buffered-file baseline.
pub fn experiment_compare(cfg: &ExperimentConfig) -> Result<Report> {
    run_experiment(ExperimentKind::Compare, cfg, &COMPARE_CONFIGS, COMPARE_CONFIGS[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            scale_factors: vec![0.01],
            repetitions: 3,
            workers: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_repetition_is_rejected() {
        let cfg = ExperimentConfig {
            repetitions: 1,
            ..small()
        };
        assert!(matches!(experiment_passthrough(&cfg), Err(Error::NotEnoughSamples(1))));
    }

    #[test]
    fn equal_overheads_do_not_reject() {
        let cfg = ExperimentConfig {
            passthrough_overhead: KERNEL_PATH_OVERHEAD,
            ..small()
        };
        let r = experiment_passthrough(&cfg).unwrap();
        let c = r.comparison(PASSTHROUGH_CONFIGS[1], 0.01).unwrap();
        assert!(c.p_value > 0.01);
    }

    #[test]
    fn compare_covers_all_configs_with_one_checksum() {
        let r = experiment_compare(&small()).unwrap();
        assert_eq!(r.runs.len(), 6);
        assert_eq!(r.comparisons.len(), 5);
        assert!(r.runs.iter().all(|x| x.checksum == r.runs[0].checksum && x.samples.len() == 3));
    }
}
