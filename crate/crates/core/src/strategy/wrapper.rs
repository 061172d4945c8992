use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::device::{Completion, CommandQueue, CompletionCallback, CompletionStatus, Device, NvmeCommand, SubmitStatus};
use crate::error::{Error, Result};
use crate::sim::{SimMutex, SimMutexGuard};

/// Remembers failed completions by user tag so the block call that issued
/// them (or a later flush) can report the error.
#[derive(Default)]
pub(crate) struct CompletionTracker {
    next_tag: AtomicU64,
    failures: Mutex<HashMap<u64, (u64, CompletionStatus)>>,
}

impl CompletionTracker {
    pub(crate) fn new() -> Arc<Self> {
        Arc::new(CompletionTracker {
            next_tag: AtomicU64::new(1),
            failures: Mutex::default(),
        })
    }

    pub(crate) fn next_tag(&self) -> u64 {
        self.next_tag.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn record(&self, c: &Completion) {
        if !c.status.is_success() {
            self.failures
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .entry(c.user_tag)
                .or_insert((c.command_id, c.status));
        }
    }

    fn to_error((command_id, status): (u64, CompletionStatus)) -> Error {
        Error::CommandFailed { command_id, status }
    }

    /// Error for any failed command carrying `tag`.
    pub(crate) fn take(&self, tag: u64) -> Result<()> {
        let hit = self.failures.lock().unwrap_or_else(|e| e.into_inner()).remove(&tag);
        hit.map_or(Ok(()), |f| Err(Self::to_error(f)))
    }

    /// Error for the oldest recorded failure, clearing all of them.
    pub(crate) fn take_any(&self) -> Result<()> {
        let mut failures = self.failures.lock().unwrap_or_else(|e| e.into_inner());
        let first = failures.iter().min_by_key(|(tag, _)| **tag).map(|(_, f)| *f);
        failures.clear();
        first.map_or(Ok(()), |f| Err(Self::to_error(f)))
    }

    pub(crate) fn callback(self: &Arc<Self>, completed: Option<Arc<AtomicU64>>) -> CompletionCallback {
        let tracker = Arc::clone(self);
        Box::new(move |c: &Completion| {
            tracker.record(c);
            if let Some(n) = &completed {
                n.fetch_add(1, Ordering::Relaxed);
            }
        })
    }
}

/// A command queue behind an exclusive lock, for queues shared between threads.
pub struct QueueWrapper {
    queue: SimMutex<CommandQueue>,
    submitted: AtomicU64,
    completed: Arc<AtomicU64>,
    lock_cost: Duration,
}

impl QueueWrapper {
    pub(crate) fn new(device: &Arc<Device>, depth: usize, lock_cost: Duration, tracker: &Arc<CompletionTracker>) -> Result<Self> {
        let completed = Arc::new(AtomicU64::new(0));
        let queue = device.create_queue(depth, tracker.callback(Some(Arc::clone(&completed))))?;
        Ok(QueueWrapper {
            queue: SimMutex::new(Arc::clone(device.clock()), queue),
            submitted: AtomicU64::new(0),
            completed,
            lock_cost,
        })
    }

    /// Standalone wrapper with its own failure tracking.
    pub fn create(device: &Arc<Device>, depth: usize, lock_cost: Duration) -> Result<Self> {
        Self::new(device, depth, lock_cost, &CompletionTracker::new())
    }

    pub fn lock(&self) -> WrapperGuard<'_> {
        let guard = self.queue.lock();
        self.queue.clock().advance_by(self.lock_cost);
        WrapperGuard { guard, wrapper: self }
    }

    pub fn try_lock(&self) -> Option<WrapperGuard<'_>> {
        let guard = self.queue.try_lock()?;
        self.queue.clock().advance_by(self.lock_cost);
        Some(WrapperGuard { guard, wrapper: self })
    }

    /// Locks, submits (poking a full queue until it has room), unlocks.
    pub fn submit(&self, command: NvmeCommand) -> Result<u64> {
        self.lock().submit_accepted(command)
    }

    pub fn drain(&self) {
        self.lock().drain();
    }

    /// Commands submitted through this wrapper and not yet delivered to the
    /// completion callback.
    pub fn inflight(&self) -> u64 {
        self.submitted.load(Ordering::Relaxed) - self.completed.load(Ordering::Relaxed)
    }

    pub fn submitted(&self) -> u64 {
        self.submitted.load(Ordering::Relaxed)
    }

    pub fn completed(&self) -> u64 {
        self.completed.load(Ordering::Relaxed)
    }
}

pub struct WrapperGuard<'a> {
    guard: SimMutexGuard<'a, CommandQueue>,
    wrapper: &'a QueueWrapper,
}

impl WrapperGuard<'_> {
    pub fn submit_accepted(&mut self, command: NvmeCommand) -> Result<u64> {
        let id = submit_with_retry(&mut self.guard, command)?;
        self.wrapper.submitted.fetch_add(1, Ordering::Relaxed);
        Ok(id)
    }

    pub fn inflight(&self) -> u64 {
        self.wrapper.inflight()
    }
}

impl std::ops::Deref for WrapperGuard<'_> {
    type Target = CommandQueue;

    fn deref(&self) -> &CommandQueue {
        &self.guard
    }
}

impl std::ops::DerefMut for WrapperGuard<'_> {
    fn deref_mut(&mut self) -> &mut CommandQueue {
        &mut self.guard
    }
}

/// Submits `command`, reaping completions while the queue is full.
pub(crate) fn submit_with_retry(queue: &mut CommandQueue, command: NvmeCommand) -> Result<u64> {
    loop {
        match queue.submit(command.clone())? {
            SubmitStatus::Accepted(id) => return Ok(id),
            SubmitStatus::QueueFull => {
                if queue.poke(usize::MAX) == 0 {
                    queue.wait_for_completion();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{open_device, Backing, DeviceGeometry, LatencyModel, DEFAULT_MDTS};
    use crate::sim::SimTime;

    fn dev() -> Arc<Device> {
        let g = DeviceGeometry::for_capacity(4 << 20, 512, DEFAULT_MDTS).unwrap();
        open_device(g, LatencyModel::default(), Backing::Memory).unwrap()
    }

    #[test]
    fn inflight_goes_up_and_back_down() {
        let d = dev();
        let w = QueueWrapper::create(&d, 4, Duration::ZERO).unwrap();
        let buf = d.alloc_dma_buffer(512).unwrap();
        assert_eq!(w.inflight(), 0);
        w.submit(NvmeCommand::write(0, 1, buf)).unwrap();
        assert_eq!(w.inflight(), 1);
        w.drain();
        assert_eq!(w.inflight(), 0);
    }

    #[test]
    fn full_queue_is_poked_and_retried() {
        let d = dev();
        let w = QueueWrapper::create(&d, 2, Duration::ZERO).unwrap();
        let buf = d.alloc_dma_buffer(512).unwrap();
        for lba in 0..3 {
            w.submit(NvmeCommand::write(lba, 1, buf.clone())).unwrap();
        }
        assert_eq!(w.submitted(), 3);
        assert!(w.completed() >= 1);
        w.drain();
        assert_eq!(w.completed(), 3);
    }

    #[test]
    fn lock_is_held_across_submit_and_inflight_matches_outstanding() {
        let d = dev();
        let w = QueueWrapper::create(&d, 8, Duration::ZERO).unwrap();
        let buf = d.alloc_dma_buffer(512).unwrap();
        let mut g = w.lock();
        g.submit_accepted(NvmeCommand::read(0, 1, buf.clone())).unwrap();
        g.submit_accepted(NvmeCommand::read(1, 1, buf)).unwrap();
        assert_eq!(g.inflight(), g.outstanding() as u64);
        assert!(w.try_lock().is_none());
        g.drain();
        assert_eq!(g.inflight(), 0);
    }

    #[test]
    fn concurrent_submitters_lose_no_completion() {
        let d = dev();
        let w = Arc::new(QueueWrapper::create(&d, 16, Duration::from_nanos(100)).unwrap());
        let clock = Arc::clone(d.clock());
        let actors = clock.spawn_actors(2, SimTime::ZERO);
        let handles: Vec<_> = actors
            .into_iter()
            .map(|a| {
                let w = Arc::clone(&w);
                let clock = Arc::clone(&clock);
                let buf = d.alloc_dma_buffer(512).unwrap();
                std::thread::spawn(move || {
                    let _bind = clock.bind(a);
                    for i in 0..1000u64 {
                        w.submit(NvmeCommand::read(i % 64, 1, buf.clone())).unwrap();
                    }
                    w.drain();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(w.submitted(), 2000);
        assert_eq!(w.completed(), 2000);
        assert_eq!(d.stats().completed.load(Ordering::Relaxed), 2000);
    }

    #[test]
    fn tracker_reports_failures_by_tag() {
        let t = CompletionTracker::new();
        let ok = Completion {
            command_id: 1,
            status: CompletionStatus::Success,
            user_tag: 5,
            completed_at: SimTime::ZERO,
        };
        t.record(&ok);
        assert!(t.take(5).is_ok());
        t.record(&Completion {
            status: CompletionStatus::DeviceError,
            ..ok
        });
        assert!(t.take(4).is_ok());
        assert!(matches!(t.take(5), Err(Error::CommandFailed { command_id: 1, .. })));
        assert!(t.take_any().is_ok());
    }
}
