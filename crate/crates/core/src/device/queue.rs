use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::thread::{self, ThreadId};

use super::{Completion, Device, NvmeCommand};
use crate::error::{Error, Result};
use crate::sim::SimTime;

pub type QueueId = u64;

pub const DEFAULT_QUEUE_DEPTH: usize = 64;

/// Invoked once per delivered completion, from inside `poke`/`drain`.
pub type CompletionCallback = Box<dyn FnMut(&Completion) + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitStatus {
    Accepted(u64),
    QueueFull,
}

/// Completions the device has executed but the host has not reaped yet.
#[derive(Default)]
pub(crate) struct Mailbox(Mutex<VecDeque<Completion>>);

impl Mailbox {
    pub(crate) fn push(&self, c: Completion) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push_back(c);
    }

    fn pop(&self) -> Option<Completion> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).pop_front()
    }
}

/// Combined submission/completion queue.
///
/// A queue is single-accessor: `&mut self` on every operation enforces that
/// within one thread, and the owner token catches use from a thread other than
/// the one that claimed it. Violations are counted in
/// [`DeviceStats::ownership_violations`](super::DeviceStats).
pub struct CommandQueue {
    id: QueueId,
    device: Arc<Device>,
    depth: usize,
    outstanding: usize,
    inflight: BTreeSet<(SimTime, u64)>,
    mailbox: Arc<Mailbox>,
    callback: CompletionCallback,
    owner: Option<ThreadId>,
    terminated: bool,
    submitted: u64,
    delivered: u64,
}

impl std::fmt::Debug for CommandQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CommandQueue")
            .field("id", &self.id)
            .field("depth", &self.depth)
            .field("outstanding", &self.outstanding)
            .finish()
    }
}

impl CommandQueue {
    pub(super) fn new(device: Arc<Device>, id: QueueId, depth: usize, callback: CompletionCallback) -> Self {
        CommandQueue {
            id,
            device,
            depth,
            outstanding: 0,
            inflight: BTreeSet::new(),
            mailbox: Arc::new(Mailbox::default()),
            callback,
            owner: None,
            terminated: false,
            submitted: 0,
            delivered: 0,
        }
    }

    pub fn id(&self) -> QueueId {
        self.id
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn is_full(&self) -> bool {
        self.outstanding >= self.depth
    }

    pub fn submitted(&self) -> u64 {
        self.submitted
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn device(&self) -> &Arc<Device> {
        &self.device
    }

    pub fn owner(&self) -> Option<ThreadId> {
        self.owner
    }

    /// Restricts the queue to the calling thread. Only an idle queue may change
    /// hands.
    pub fn claim_for_current_thread(&mut self) -> Result<()> {
        if self.outstanding > 0 {
            return Err(Error::QueueBusy {
                outstanding: self.outstanding,
            });
        }
        self.owner = Some(thread::current().id());
        Ok(())
    }

    fn check_access(&self) {
        if let Some(owner) = self.owner {
            if owner != thread::current().id() {
                self.device
                    .stats()
                    .ownership_violations
                    .fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn submit(&mut self, command: NvmeCommand) -> Result<SubmitStatus> {
        self.check_access();
        if self.terminated {
            return Err(Error::QueueTerminated);
        }
        let clock = Arc::clone(self.device.clock());
        clock.sync();
        if self.outstanding >= self.depth {
            return Ok(SubmitStatus::QueueFull);
        }
        let now = clock.now();
        let (id, at, overhead) = self.device.enqueue(command, self.id, &self.mailbox, now)?;
        self.outstanding += 1;
        self.submitted += 1;
        self.inflight.insert((at, id));
        clock.advance_to(now + overhead);
        Ok(SubmitStatus::Accepted(id))
    }

    fn deliver(&mut self, max: usize) -> usize {
        let mut count = 0;
        while count < max {
            let Some(c) = self.mailbox.pop() else { break };
            self.inflight.remove(&(c.completed_at, c.command_id));
            self.outstanding -= 1;
            self.delivered += 1;
            (self.callback)(&c);
            count += 1;
        }
        count
    }

    /// Delivers up to `max_completions` completions that are due at the
    /// caller's current simulated time.
    pub fn poke(&mut self, max_completions: usize) -> usize {
        self.check_access();
        if max_completions == 0 || self.outstanding == 0 {
            return 0;
        }
        let clock = self.device.clock();
        clock.sync();
        self.device.apply_until(clock.now());
        self.deliver(max_completions)
    }

    /// Waits until the earliest outstanding command completes and delivers
    /// everything due by then.
    pub fn wait_for_completion(&mut self) -> usize {
        self.check_access();
        let Some(&(first, _)) = self.inflight.first() else {
            return 0;
        };
        let clock = Arc::clone(self.device.clock());
        clock.advance_to(first);
        self.device.apply_until(clock.now());
        self.deliver(usize::MAX)
    }

    /// Returns once every outstanding command has completed and its callback
    /// has run. Completions are delivered in completion-time order.
    pub fn drain(&mut self) {
        self.check_access();
        let clock = Arc::clone(self.device.clock());
        while self.outstanding > 0 {
            let target = self.inflight.last().map(|&(t, _)| t).unwrap_or(SimTime::ZERO);
            clock.advance_to(target);
            self.device.apply_until(clock.now());
            self.deliver(usize::MAX);
        }
    }

    pub fn terminate(&mut self) -> Result<()> {
        self.check_access();
        if self.outstanding > 0 {
            return Err(Error::QueueBusy {
                outstanding: self.outstanding,
            });
        }
        self.terminated = true;
        Ok(())
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }
}
