use std::cell::RefCell;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use super::wrapper::{submit_with_retry, CompletionTracker};
use super::{plan_commands, IoStrategy, StrategyConfig, StrategyKind, WorkerHooks};
use crate::device::{CommandQueue, Device, DmaBuffer, Opcode, QueueId};
use crate::error::{Error, Result};

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

thread_local! {
    /// Queues owned by this thread, keyed by strategy instance.
    static THREAD_QUEUES: RefCell<Vec<(u64, CommandQueue)>> = const { RefCell::new(Vec::new()) };
}

struct Inner {
    instance: u64,
    device: Arc<Device>,
    depth: usize,
    tracker: Arc<CompletionTracker>,
    drain: AtomicBool,
}

impl Inner {
    fn with_queue<R>(&self, f: impl FnOnce(&mut CommandQueue) -> R) -> Result<R> {
        THREAD_QUEUES.with(|qs| {
            let mut qs = qs.borrow_mut();
            match qs.iter_mut().find(|(id, _)| *id == self.instance) {
                Some((_, q)) => Ok(f(q)),
                None => Err(Error::NotAWorker),
            }
        })
    }

    fn has_queue(&self) -> bool {
        THREAD_QUEUES.with(|qs| qs.borrow().iter().any(|(id, _)| *id == self.instance))
    }
}

impl WorkerHooks for Inner {
    fn on_worker_start(&self) -> Result<Option<QueueId>> {
        if self.has_queue() {
            return Ok(None);
        }
        let mut q = self.device.create_queue(self.depth, self.tracker.callback(None))?;
        q.claim_for_current_thread()?;
        let id = q.id();
        THREAD_QUEUES.with(|qs| qs.borrow_mut().push((self.instance, q)));
        Ok(Some(id))
    }

    fn on_worker_stop(&self) -> Result<Option<(QueueId, usize)>> {
        let taken = THREAD_QUEUES.with(|qs| {
            let mut qs = qs.borrow_mut();
            let pos = qs.iter().position(|(id, _)| *id == self.instance)?;
            Some(qs.remove(pos).1)
        });
        let Some(mut q) = taken else { return Ok(None) };
        q.drain();
        let outstanding = q.outstanding();
        q.terminate()?;
        Ok(Some((q.id(), outstanding)))
    }
}

/// Each worker thread creates and owns its queue; no locks on the I/O path.
/// Block calls from a thread without a queue fail with [`Error::NotAWorker`].
pub struct AsyncThreadQueues {
    inner: Arc<Inner>,
}

impl AsyncThreadQueues {
    pub fn new(device: &Arc<Device>, config: &StrategyConfig) -> Self {
        AsyncThreadQueues {
            inner: Arc::new(Inner {
                instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
                device: Arc::clone(device),
                depth: config.queue_depth,
                tracker: CompletionTracker::new(),
                drain: AtomicBool::new(config.drain_after_block),
            }),
        }
    }

    /// Runs `f` on the calling worker's own queue.
    pub fn with_thread_queue<R>(&self, f: impl FnOnce(&mut CommandQueue) -> R) -> Result<R> {
        self.inner.with_queue(f)
    }

    pub fn current_queue_id(&self) -> Result<QueueId> {
        self.with_thread_queue(|q| q.id())
    }

    fn transfer(&self, opcode: Opcode, offset: u64, buf: &DmaBuffer) -> Result<()> {
        let tag = self.inner.tracker.next_tag();
        let commands = plan_commands(&self.inner.device, opcode, offset, buf, tag)?;
        let drain = self.inner.drain.load(Ordering::Relaxed);
        self.with_thread_queue(|q| -> Result<()> {
            for cmd in commands {
                submit_with_retry(q, cmd)?;
            }
            if drain {
                q.drain();
            }
            Ok(())
        })??;
        if drain {
            self.inner.tracker.take(tag)?;
        }
        Ok(())
    }
}

impl IoStrategy for AsyncThreadQueues {
    fn kind(&self) -> StrategyKind {
        StrategyKind::AsyncThreadQueues
    }

    fn device(&self) -> &Arc<Device> {
        &self.inner.device
    }

    fn read_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Read, offset, buf)
    }

    fn write_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Write, offset, buf)
    }

    /// Drains the calling thread's queue, if it has one. Other workers drain
    /// their own queues when they stop.
    fn flush(&self) -> Result<()> {
        if self.inner.has_queue() {
            self.with_thread_queue(|q| q.drain())?;
        }
        self.inner.tracker.take_any()
    }

    fn drain_after_block(&self) -> bool {
        self.inner.drain.load(Ordering::Relaxed)
    }

    fn set_drain_after_block(&self, enabled: bool) -> Result<()> {
        self.inner.drain.store(enabled, Ordering::Relaxed);
        Ok(())
    }

    fn worker_hooks(&self) -> Option<Arc<dyn WorkerHooks>> {
        Some(self.inner.clone())
    }
}
