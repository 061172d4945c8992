use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::wrapper::{CompletionTracker, QueueWrapper};
use super::{default_worker_count, plan_commands, HostCosts, IoStrategy, StrategyConfig, StrategyKind};
use crate::device::{Device, DmaBuffer, NvmeCommand, Opcode};
use crate::error::{Error, Result};

/// Every thread shares one locked queue. The lock is held for a whole block:
/// all of its MDTS submissions and, in drain mode, the drain.
pub struct AsyncSingleQueue {
    device: Arc<Device>,
    wrapper: QueueWrapper,
    tracker: Arc<CompletionTracker>,
    drain: AtomicBool,
}

impl AsyncSingleQueue {
    pub fn new(device: &Arc<Device>, config: &StrategyConfig) -> Result<Self> {
        let tracker = CompletionTracker::new();
        Ok(AsyncSingleQueue {
            device: Arc::clone(device),
            wrapper: QueueWrapper::new(device, config.queue_depth, config.costs.lock_acquire, &tracker)?,
            tracker,
            drain: AtomicBool::new(config.drain_after_block),
        })
    }

    pub fn wrapper(&self) -> &QueueWrapper {
        &self.wrapper
    }

    fn transfer(&self, opcode: Opcode, offset: u64, buf: &DmaBuffer) -> Result<()> {
        let tag = self.tracker.next_tag();
        let commands = plan_commands(&self.device, opcode, offset, buf, tag)?;
        let mut q = self.wrapper.lock();
        for cmd in commands {
            q.submit_accepted(cmd)?;
        }
        if self.drain.load(Ordering::Relaxed) {
            q.drain();
            drop(q);
            self.tracker.take(tag)?;
        }
        Ok(())
    }
}

impl IoStrategy for AsyncSingleQueue {
    fn kind(&self) -> StrategyKind {
        StrategyKind::AsyncSingleQueue
    }

    fn device(&self) -> &Arc<Device> {
        &self.device
    }

    fn read_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Read, offset, buf)
    }

    fn write_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Write, offset, buf)
    }

    fn flush(&self) -> Result<()> {
        self.wrapper.drain();
        self.tracker.take_any()
    }

    fn drain_after_block(&self) -> bool {
        self.drain.load(Ordering::Relaxed)
    }

    fn set_drain_after_block(&self, enabled: bool) -> Result<()> {
        self.drain.store(enabled, Ordering::Relaxed);
        Ok(())
    }
}

/// Ordered wrappers; a submission takes the first one that is unlocked and
/// not full, scanning from index 0 every time.
pub struct QueuePool {
    wrappers: Vec<QueueWrapper>,
    device: Arc<Device>,
    costs: HostCosts,
}

impl QueuePool {
    pub(crate) fn new(device: &Arc<Device>, size: usize, depth: usize, costs: HostCosts, tracker: &Arc<CompletionTracker>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("queue pool needs at least one queue".into()));
        }
        let wrappers = (0..size)
            .map(|_| QueueWrapper::new(device, depth, costs.lock_acquire, tracker))
            .collect::<Result<_>>()?;
        Ok(QueuePool {
            wrappers,
            device: Arc::clone(device),
            costs,
        })
    }

    pub fn create(device: &Arc<Device>, size: usize, depth: usize, costs: HostCosts) -> Result<Self> {
        Self::new(device, size, depth, costs, &CompletionTracker::new())
    }

    pub fn len(&self) -> usize {
        self.wrappers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wrappers.is_empty()
    }

    pub fn wrapper(&self, index: usize) -> &QueueWrapper {
        &self.wrappers[index]
    }

    /// Submits on the first available wrapper and returns its index.
    pub fn submit(&self, command: NvmeCommand) -> Result<usize> {
        let clock = self.device.clock();
        loop {
            for (i, w) in self.wrappers.iter().enumerate() {
                if let Some(mut q) = w.try_lock() {
                    if q.is_full() {
                        q.poke(usize::MAX);
                    }
                    if !q.is_full() {
                        q.submit_accepted(command)?;
                        return Ok(i);
                    }
                }
                clock.advance_by(self.costs.pool_probe);
            }
            clock.advance_by(self.costs.pool_backoff);
        }
    }

    pub fn drain_all(&self) {
        for w in &self.wrappers {
            w.drain();
        }
    }
}

/// Block transfers spread over a [`QueuePool`]; in drain mode each wrapper the
/// block touched is drained before returning.
pub struct AsyncQueuePool {
    device: Arc<Device>,
    pool: QueuePool,
    tracker: Arc<CompletionTracker>,
    drain: AtomicBool,
}

impl AsyncQueuePool {
    pub fn new(device: &Arc<Device>, config: &StrategyConfig) -> Result<Self> {
        let tracker = CompletionTracker::new();
        let size = config.pool_size.unwrap_or_else(default_worker_count);
        Ok(AsyncQueuePool {
            device: Arc::clone(device),
            pool: QueuePool::new(device, size, config.queue_depth, config.costs, &tracker)?,
            tracker,
            drain: AtomicBool::new(config.drain_after_block),
        })
    }

    pub fn pool(&self) -> &QueuePool {
        &self.pool
    }

    fn transfer(&self, opcode: Opcode, offset: u64, buf: &DmaBuffer) -> Result<()> {
        let tag = self.tracker.next_tag();
        let mut used: Vec<usize> = Vec::with_capacity(2);
        for cmd in plan_commands(&self.device, opcode, offset, buf, tag)? {
            let i = self.pool.submit(cmd)?;
            if !used.contains(&i) {
                used.push(i);
            }
        }
        if self.drain.load(Ordering::Relaxed) {
            for i in used {
                self.pool.wrapper(i).drain();
            }
            self.tracker.take(tag)?;
        }
        Ok(())
    }
}

impl IoStrategy for AsyncQueuePool {
    fn kind(&self) -> StrategyKind {
        StrategyKind::AsyncQueuePool
    }

    fn device(&self) -> &Arc<Device> {
        &self.device
    }

    fn read_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Read, offset, buf)
    }

    fn write_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Write, offset, buf)
    }

    fn flush(&self) -> Result<()> {
        self.pool.drain_all();
        self.tracker.take_any()
    }

    fn drain_after_block(&self) -> bool {
        self.drain.load(Ordering::Relaxed)
    }

    fn set_drain_after_block(&self, enabled: bool) -> Result<()> {
        self.drain.store(enabled, Ordering::Relaxed);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{open_device, Backing, DeviceGeometry, LatencyModel, DEFAULT_MDTS};
    use crate::sim::SimTime;
    use std::sync::mpsc;

    fn dev() -> Arc<Device> {
        let g = DeviceGeometry::for_capacity(4 << 20, 512, DEFAULT_MDTS).unwrap();
        open_device(g, LatencyModel::default(), Backing::Memory).unwrap()
    }

    fn read(d: &Device, lba: u64) -> NvmeCommand {
        NvmeCommand::read(lba, 1, d.alloc_dma_buffer(512).unwrap())
    }

    #[test]
    fn idle_pool_picks_first_queue() {
        let d = dev();
        let pool = QueuePool::create(&d, 4, 8, HostCosts::default()).unwrap();
        assert_eq!(pool.submit(read(&d, 0)).unwrap(), 0);
        assert_eq!(pool.submit(read(&d, 1)).unwrap(), 0);
        pool.drain_all();
    }

    #[test]
    fn locked_first_queue_is_skipped() {
        let d = dev();
        let pool = Arc::new(QueuePool::create(&d, 4, 8, HostCosts::default()).unwrap());
        let (locked_tx, locked_rx) = mpsc::channel();
        let (release_tx, release_rx) = mpsc::channel::<()>();
        let holder = {
            let pool = Arc::clone(&pool);
            std::thread::spawn(move || {
                let _g = pool.wrapper(0).lock();
                locked_tx.send(()).unwrap();
                release_rx.recv().unwrap();
            })
        };
        locked_rx.recv().unwrap();
        assert_eq!(pool.submit(read(&d, 0)).unwrap(), 1);
        release_tx.send(()).unwrap();
        holder.join().unwrap();
        pool.drain_all();
    }

    #[test]
    fn saturated_pool_waits_for_capacity() {
        let d = dev();
        let pool = QueuePool::create(&d, 2, 1, HostCosts::default()).unwrap();
        pool.submit(read(&d, 0)).unwrap();
        pool.submit(read(&d, 1)).unwrap();
        let before = d.clock().now();
        let i = pool.submit(read(&d, 2)).unwrap();
        assert!(i < 2);
        assert!(d.clock().now() > before);
        pool.drain_all();
        assert_eq!(pool.wrapper(0).completed() + pool.wrapper(1).completed(), 3);
    }

    #[test]
    fn pool_spreads_under_actor_contention() {
        let d = dev();
        let pool = Arc::new(QueuePool::create(&d, 4, 64, HostCosts::default()).unwrap());
        let clock = Arc::clone(d.clock());
        let actors = clock.spawn_actors(4, SimTime::ZERO);
        let picks: Vec<Vec<usize>> = actors
            .into_iter()
            .map(|a| {
                let pool = Arc::clone(&pool);
                let clock = Arc::clone(&clock);
                let cmds: Vec<_> = (0..20).map(|i| read(&d, i)).collect();
                std::thread::spawn(move || {
                    let _b = clock.bind(a);
                    cmds.into_iter().map(|c| pool.submit(c).unwrap()).collect()
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect();
        let used: std::collections::BTreeSet<usize> = picks.into_iter().flatten().collect();
        assert!(used.len() > 1);
        pool.drain_all();
    }
}
