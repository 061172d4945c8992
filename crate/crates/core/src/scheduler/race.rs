//! Two dependent tasks writing the same block through the queue pool.
//!
//! Task 2 depends on task 1 and both overwrite block 0. Without a drain after
//! each block, task 1 is "done" as soon as its commands are submitted, so
//! task 2's commands can complete first when jitter reorders completions.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use super::Scheduler;
use crate::device::{open_device, Backing, DeviceGeometry, LatencyModel, DEFAULT_LBA_SIZE, DEFAULT_MDTS};
use crate::error::Result;
use crate::layout::{data_region_base, format_device, BlockId, BLOCK_SIZE};
use crate::strategy::{build_strategy, IoStrategy, StrategyConfig, StrategyKind, SyncDirect};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaceOutcome {
    Consistent,
    InversionDetected,
}

impl fmt::Display for RaceOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RaceOutcome::Consistent => "Consistent",
            RaceOutcome::InversionDetected => "InversionDetected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaceConfig {
    pub jitter: Duration,
    pub drain: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RaceSummary {
    pub consistent: usize,
    pub inversions: usize,
}

impl RaceSummary {
    pub fn trials(&self) -> usize {
        self.consistent + self.inversions
    }
}

fn stamp(version: u8) -> Vec<u8> {
    (0..BLOCK_SIZE as usize)
        .map(|i| version.wrapping_mul(0x5b) ^ (i as u8))
        .collect()
}

pub fn race_demo(config: RaceConfig) -> Result<RaceOutcome> {
    let probe = DeviceGeometry::for_capacity(DEFAULT_MDTS, DEFAULT_LBA_SIZE, DEFAULT_MDTS)?;
    let capacity = data_region_base(&probe) + BLOCK_SIZE;
    let geometry = DeviceGeometry::for_capacity(capacity, DEFAULT_LBA_SIZE, DEFAULT_MDTS)?;
    let latency = LatencyModel::default()
        .passthrough(true)
        .with_jitter(config.jitter)
        .with_seed(config.seed);
    let device = open_device(geometry, latency, Backing::Memory)?;
    format_device(&device)?;

    let workers = 2;
    let strategy = build_strategy(
        &device,
        &StrategyConfig::new(StrategyKind::AsyncQueuePool)
            .with_pool_size(workers)
            .with_drain(config.drain),
    )?;
    let expected = stamp(2);
    let scheduler = Scheduler::with_clock(Arc::clone(device.clock()));
    let mut prev = None;
    for version in [1u8, 2] {
        let buf = device.alloc_dma_buffer(BLOCK_SIZE as usize)?;
        buf.fill_from(&stamp(version))?;
        let s = Arc::clone(&strategy);
        let deps: Vec<_> = prev.into_iter().collect();
        prev = Some(scheduler.submit_task(&deps, Box::new(move || s.write_block(BlockId(0), &buf)))?);
    }
    scheduler.run_to_completion(workers, strategy.worker_hooks())?;
    strategy.flush()?;

    let check = device.alloc_dma_buffer(BLOCK_SIZE as usize)?;
    SyncDirect::new(Arc::clone(&device)).read_block(BlockId(0), &check)?;
    Ok(if check.to_vec() == expected {
        RaceOutcome::Consistent
    } else {
        RaceOutcome::InversionDetected
    })
}

/// Runs `trials` demos with seeds `base_seed..base_seed + trials`.
pub fn race_trials(jitter: Duration, drain: bool, trials: usize, base_seed: u64) -> Result<RaceSummary> {
    let mut summary = RaceSummary::default();
    for i in 0..trials as u64 {
        match race_demo(RaceConfig {
            jitter,
            drain,
            seed: base_seed.wrapping_add(i),
        })? {
            RaceOutcome::Consistent => summary.consistent += 1,
            RaceOutcome::InversionDetected => summary.inversions += 1,
        }
    }
    Ok(summary)
}
