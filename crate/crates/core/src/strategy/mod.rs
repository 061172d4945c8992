//! I/O strategies: the disciplines that turn block reads and writes into
//! device commands.
//!
//! Every strategy presents a blocking block-level contract: when
//! [`IoStrategy::read_block`] or [`IoStrategy::write_block`] returns, the
//! transfer is complete. The async strategies can be switched into a hazard
//! mode with [`IoStrategy::set_drain_after_block`]`(false)`, where block calls
//! return right after submission.

mod direct;
mod shared;
mod thread;
mod wrapper;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use crate::device::{Device, DmaBuffer, NvmeCommand, Opcode, QueueId, DEFAULT_QUEUE_DEPTH};
use crate::error::{Error, Result};
use crate::layout::{block_offset, map_range_to_commands, BlockId, BLOCK_SIZE};

pub use direct::{FileBaseline, SyncDirect};
pub use shared::{AsyncQueuePool, AsyncSingleQueue, QueuePool};
pub use thread::AsyncThreadQueues;
pub use wrapper::{QueueWrapper, WrapperGuard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    FileBaseline,
    SyncDirect,
    AsyncSingleQueue,
    AsyncQueuePool,
    AsyncThreadQueues,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::FileBaseline,
        StrategyKind::SyncDirect,
        StrategyKind::AsyncSingleQueue,
        StrategyKind::AsyncQueuePool,
        StrategyKind::AsyncThreadQueues,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FileBaseline => "file",
            StrategyKind::SyncDirect => "sync",
            StrategyKind::AsyncSingleQueue => "async-single",
            StrategyKind::AsyncQueuePool => "async-pool",
            StrategyKind::AsyncThreadQueues => "async-thread",
        }
    }

    pub fn is_async(self) -> bool {
        matches!(
            self,
            StrategyKind::AsyncSingleQueue | StrategyKind::AsyncQueuePool | StrategyKind::AsyncThreadQueues
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Simulated host-side costs that are not device commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostCosts {
    /// Charged to the holder each time a queue wrapper lock is acquired.
    pub lock_acquire: Duration,
    /// One failed probe of a pool wrapper (busy lock or full queue).
    pub pool_probe: Duration,
    /// Pause after a pool scan found no usable wrapper.
    pub pool_backoff: Duration,
    /// Buffered file read/write syscall, on top of its device commands.
    pub file_syscall: Duration,
}

impl Default for HostCosts {
    fn default() -> Self {
        HostCosts {
            lock_acquire: Duration::from_nanos(1_500),
            pool_probe: Duration::from_nanos(250),
            pool_backoff: Duration::from_micros(1),
            file_syscall: Duration::from_micros(12),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Queue-pool size; defaults to the host's logical core count.
    pub pool_size: Option<usize>,
    pub queue_depth: usize,
    pub drain_after_block: bool,
    pub costs: HostCosts,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            pool_size: None,
            queue_depth: DEFAULT_QUEUE_DEPTH,
            drain_after_block: true,
            costs: HostCosts::default(),
        }
    }

    pub fn with_pool_size(mut self, n: usize) -> Self {
        self.pool_size = Some(n);
        self
    }

    pub fn with_queue_depth(mut self, depth: usize) -> Self {
        self.queue_depth = depth;
        self
    }

    pub fn with_drain(mut self, drain: bool) -> Self {
        self.drain_after_block = drain;
        self
    }
}

pub fn default_worker_count() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn build_strategy(device: &Arc<Device>, config: &StrategyConfig) -> Result<Arc<dyn IoStrategy>> {
    if config.queue_depth == 0 {
        return Err(Error::InvalidQueueDepth);
    }
    if !config.kind.is_async() && !config.drain_after_block {
        return Err(Error::NotApplicable(config.kind.name()));
    }
    Ok(match config.kind {
        StrategyKind::FileBaseline => Arc::new(FileBaseline::new(Arc::clone(device), config.costs)),
        StrategyKind::SyncDirect => Arc::new(SyncDirect::new(Arc::clone(device))),
        StrategyKind::AsyncSingleQueue => Arc::new(AsyncSingleQueue::new(device, config)?),
        StrategyKind::AsyncQueuePool => Arc::new(AsyncQueuePool::new(device, config)?),
        StrategyKind::AsyncThreadQueues => Arc::new(AsyncThreadQueues::new(device, config)),
    })
}

/// Per-worker setup and teardown run on the worker thread around its task loop.
pub trait WorkerHooks: Send + Sync {
    /// Returns the id of a queue created for the calling thread, or `None` if
    /// the thread already had one.
    fn on_worker_start(&self) -> Result<Option<QueueId>>;
    /// Drains and terminates the calling thread's queue, returning its id and
    /// outstanding count at termination.
    fn on_worker_stop(&self) -> Result<Option<(QueueId, usize)>>;
}

pub trait IoStrategy: Send + Sync {
    fn kind(&self) -> StrategyKind;

    fn device(&self) -> &Arc<Device>;

    /// Reads `buf.len()` bytes starting at `offset`.
    fn read_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()>;

    fn write_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()>;

    /// Waits for every command this strategy has in flight and reports any
    /// failure among them.
    fn flush(&self) -> Result<()>;

    fn drain_after_block(&self) -> bool {
        true
    }

    fn set_drain_after_block(&self, _enabled: bool) -> Result<()> {
        Err(Error::NotApplicable(self.kind().name()))
    }

    fn worker_hooks(&self) -> Option<Arc<dyn WorkerHooks>> {
        None
    }

    fn read_block(&self, block: BlockId, buf: &DmaBuffer) -> Result<()> {
        check_block_buffer(buf)?;
        self.read_at(block_offset(block, &self.device().geometry())?, buf)
    }

    fn write_block(&self, block: BlockId, buf: &DmaBuffer) -> Result<()> {
        check_block_buffer(buf)?;
        self.write_at(block_offset(block, &self.device().geometry())?, buf)
    }
}

fn check_block_buffer(buf: &DmaBuffer) -> Result<()> {
    if buf.len() != BLOCK_SIZE as usize {
        return Err(Error::BufferLength {
            expected: BLOCK_SIZE as usize,
            actual: buf.len(),
        });
    }
    Ok(())
}

/// MDTS-sized commands covering `[offset, offset + buf.len())`, each pointing
/// at its slice of `buf`.
pub(crate) fn plan_commands(device: &Device, opcode: Opcode, offset: u64, buf: &DmaBuffer, tag: u64) -> Result<Vec<NvmeCommand>> {
    let g = device.geometry();
    let plan = map_range_to_commands(offset, buf.len() as u64, &g)?;
    Ok(plan
        .iter()
        .map(|c| {
            let cmd = match opcode {
                Opcode::Read => NvmeCommand::read(c.start_lba, c.lba_count, buf.clone()),
                Opcode::Write => NvmeCommand::write(c.start_lba, c.lba_count, buf.clone()),
            };
            cmd.at_buffer_offset((c.start_lba * g.lba_size() - offset) as usize)
                .tagged(tag)
        })
        .collect())
}

/// Keeps a worker's per-thread setup alive; runs the stop hook on drop.
pub struct WorkerScope {
    hooks: Option<Arc<dyn WorkerHooks>>,
    queue: Option<QueueId>,
}

impl WorkerScope {
    pub fn queue(&self) -> Option<QueueId> {
        self.queue
    }

    /// Runs the stop hook now and reports its result.
    pub fn finish(mut self) -> Result<Option<(QueueId, usize)>> {
        self.stop()
    }

    fn stop(&mut self) -> Result<Option<(QueueId, usize)>> {
        match (self.hooks.take(), self.queue.take()) {
            (Some(h), Some(_)) => h.on_worker_stop(),
            _ => Ok(None),
        }
    }
}

impl Drop for WorkerScope {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Prepares the calling thread to issue I/O through `strategy` outside the
/// scheduler (e.g. a main thread under [`AsyncThreadQueues`]).
pub fn enter_worker(strategy: &dyn IoStrategy) -> Result<WorkerScope> {
    let hooks = strategy.worker_hooks();
    let queue = match &hooks {
        Some(h) => h.on_worker_start()?,
        None => None,
    };
    Ok(WorkerScope { hooks, queue })
}
