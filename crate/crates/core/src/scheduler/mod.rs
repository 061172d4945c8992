//! FIFO task scheduler with dependency tracking and a worker pool.
//!
//! A task is enqueued only once all of its dependencies are done, and a
//! worker marks a task done only after its action returns. With an I/O
//! strategy that drains after every block, "task done" therefore implies
//! "task I/O complete".
//!
//! A scheduler built with [`Scheduler::with_clock`] runs its workers as
//! simulation actors on that clock, so a run is deterministic in simulated
//! time. [`Scheduler::new`] uses plain threads and condition variables.

mod race;

use std::collections::{BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use crate::device::QueueId;
use crate::error::{Error, Result};
use crate::sim::{new_wait_key, SimClock, SimTime, WaitKey};
use crate::strategy::WorkerHooks;

pub use race::{race_demo, race_trials, RaceConfig, RaceOutcome, RaceSummary};

pub type TaskId = usize;
pub type TaskAction = Box<dyn FnOnce() -> Result<()> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskState {
    Blocked,
    Queued,
    Running,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Submitted,
    Queued,
    Started { worker: Option<usize> },
    Done,
    QueueCreated { worker: usize, queue: QueueId },
    QueueTerminated { worker: usize, queue: QueueId, outstanding: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub at: SimTime,
    pub task: Option<TaskId>,
    pub kind: EventKind,
}

/// A task popped by [`Scheduler::start_next`]; the caller runs the action
/// and then calls [`Scheduler::mark_done`].
pub struct StartedTask {
    pub id: TaskId,
    pub action: TaskAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub started_at: SimTime,
    pub finished_at: SimTime,
    pub tasks_run: usize,
}

impl RunSummary {
    pub fn duration(&self) -> Duration {
        self.finished_at - self.started_at
    }
}

struct Task {
    deps: BTreeSet<TaskId>,
    dependents: Vec<TaskId>,
    remaining: usize,
    state: TaskState,
    action: Option<TaskAction>,
}

#[derive(Default)]
struct Inner {
    tasks: Vec<Task>,
    ready: VecDeque<TaskId>,
    done: usize,
    events: Vec<Event>,
    failure: Option<Error>,
}

pub struct Scheduler {
    inner: Mutex<Inner>,
    clock: Option<Arc<SimClock>>,
    idle_key: WaitKey,
    idle: Condvar,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self::new()
    }
}

impl Scheduler {
    pub fn new() -> Self {
        Scheduler {
            inner: Mutex::default(),
            clock: None,
            idle_key: new_wait_key(),
            idle: Condvar::new(),
        }
    }

    pub fn with_clock(clock: Arc<SimClock>) -> Self {
        Scheduler {
            clock: Some(clock),
            ..Self::new()
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn now(&self) -> SimTime {
        self.clock.as_ref().map_or(SimTime::ZERO, |c| c.now())
    }

    fn log(&self, inner: &mut Inner, task: Option<TaskId>, kind: EventKind) {
        let seq = inner.events.len() as u64;
        let at = self.now();
        inner.events.push(Event { seq, at, task, kind });
    }

    fn enqueue(&self, inner: &mut Inner, id: TaskId) {
        inner.tasks[id].state = TaskState::Queued;
        inner.ready.push_back(id);
        self.log(inner, Some(id), EventKind::Queued);
    }

    pub fn submit_task(&self, deps: &[TaskId], action: TaskAction) -> Result<TaskId> {
        let mut inner = self.lock();
        let id = inner.tasks.len();
        let deps: BTreeSet<TaskId> = deps.iter().copied().collect();
        if let Some(&bad) = deps.iter().find(|&&d| d >= id) {
            return Err(Error::UnknownDependency(bad));
        }
        let remaining = deps.iter().filter(|&&d| inner.tasks[d].state != TaskState::Done).count();
        for &d in &deps {
            inner.tasks[d].dependents.push(id);
        }
        inner.tasks.push(Task {
            deps,
            dependents: Vec::new(),
            remaining,
            state: TaskState::Blocked,
            action: Some(action),
        });
        self.log(&mut inner, Some(id), EventKind::Submitted);
        if remaining == 0 {
            self.enqueue(&mut inner, id);
        }
        Ok(id)
    }

    /// Adds `dep` to a still-blocked `task`, rejecting edges that close a cycle.
    pub fn add_dependency(&self, task: TaskId, dep: TaskId) -> Result<()> {
        let mut inner = self.lock();
        let n = inner.tasks.len();
        if task >= n {
            return Err(Error::UnknownDependency(task));
        }
        if dep >= n {
            return Err(Error::UnknownDependency(dep));
        }
        let state = inner.tasks[task].state;
        if state != TaskState::Blocked {
            return Err(Error::InvalidTaskState {
                task,
                state,
                expected: "Blocked",
            });
        }
        if inner.tasks[task].deps.contains(&dep) {
            return Ok(());
        }
        // cycle iff task is reachable from dep along dependency edges
        let mut stack = vec![dep];
        let mut seen = BTreeSet::new();
        while let Some(t) = stack.pop() {
            if t == task {
                return Err(Error::DependencyCycle(task));
            }
            if seen.insert(t) {
                stack.extend(inner.tasks[t].deps.iter().copied());
            }
        }
        let dep_done = inner.tasks[dep].state == TaskState::Done;
        let t = &mut inner.tasks[task];
        t.deps.insert(dep);
        if !dep_done {
            t.remaining += 1;
        }
        inner.tasks[dep].dependents.push(task);
        Ok(())
    }

    pub fn state(&self, id: TaskId) -> Option<TaskState> {
        self.lock().tasks.get(id).map(|t| t.state)
    }

    pub fn task_count(&self) -> usize {
        self.lock().tasks.len()
    }

    pub fn ready_queue(&self) -> Vec<TaskId> {
        self.lock().ready.iter().copied().collect()
    }

    pub fn events(&self) -> Vec<Event> {
        self.lock().events.clone()
    }

    fn start_locked(&self, inner: &mut Inner, worker: Option<usize>) -> Option<StartedTask> {
        let id = inner.ready.pop_front()?;
        inner.tasks[id].state = TaskState::Running;
        self.log(inner, Some(id), EventKind::Started { worker });
        let action = inner.tasks[id].action.take().expect("queued task has an action");
        Some(StartedTask { id, action })
    }

    /// Pops the head of the ready queue and marks it running.
    pub fn start_next(&self) -> Option<StartedTask> {
        self.start_locked(&mut self.lock(), None)
    }

    fn mark_done_locked(&self, inner: &mut Inner, id: TaskId) -> Result<Vec<TaskId>> {
        let state = inner.tasks.get(id).map(|t| t.state).ok_or(Error::UnknownDependency(id))?;
        if state != TaskState::Running {
            return Err(Error::InvalidTaskState {
                task: id,
                state,
                expected: "Running",
            });
        }
        inner.tasks[id].state = TaskState::Done;
        inner.done += 1;
        self.log(inner, Some(id), EventKind::Done);
        let mut released = Vec::new();
        for d in std::mem::take(&mut inner.tasks[id].dependents) {
            let t = &mut inner.tasks[d];
            t.remaining -= 1;
            if t.remaining == 0 && t.state == TaskState::Blocked {
                self.enqueue(inner, d);
                released.push(d);
            }
        }
        Ok(released)
    }

    /// Marks a running task done and returns the tasks this released, in the
    /// order they were appended to the ready queue.
    pub fn mark_done(&self, id: TaskId) -> Result<Vec<TaskId>> {
        let released = self.mark_done_locked(&mut self.lock(), id)?;
        self.idle.notify_all();
        Ok(released)
    }

    fn sync(&self) {
        if let Some(c) = &self.clock {
            c.sync();
        }
    }

    fn wait_idle<'a>(&'a self, guard: MutexGuard<'a, Inner>) {
        match &self.clock {
            Some(c) => c.park(self.idle_key, guard),
            None => drop(self.idle.wait(guard).unwrap_or_else(|e| e.into_inner())),
        }
    }

    fn wake_idle(&self) {
        match &self.clock {
            Some(c) => {
                c.unpark_all(self.idle_key, c.now());
            }
            None => self.idle.notify_all(),
        }
    }

    fn fail(&self, inner: &mut Inner, err: Error) {
        if inner.failure.is_none() {
            inner.failure = Some(err);
        }
    }

    fn worker_loop(&self, worker: usize, hooks: Option<&Arc<dyn WorkerHooks>>) {
        if let Some(h) = hooks {
            let started = h.on_worker_start();
            self.sync();
            let mut inner = self.lock();
            match started {
                Ok(Some(queue)) => self.log(&mut inner, None, EventKind::QueueCreated { worker, queue }),
                Ok(None) => {}
                Err(e) => self.fail(&mut inner, e),
            }
        }
        loop {
            self.sync();
            let mut inner = self.lock();
            if inner.failure.is_some() || inner.done == inner.tasks.len() {
                break;
            }
            let Some(task) = self.start_locked(&mut inner, Some(worker)) else {
                self.wait_idle(inner);
                continue;
            };
            drop(inner);
            let outcome = catch_unwind(AssertUnwindSafe(task.action));
            self.sync();
            let mut inner = self.lock();
            let result = match outcome {
                Ok(Ok(())) => self.mark_done_locked(&mut inner, task.id).map(drop),
                Ok(Err(e)) => Err(Error::TaskFailed {
                    task: task.id,
                    reason: e.to_string(),
                }),
                Err(panic) => Err(Error::TaskFailed {
                    task: task.id,
                    reason: panic_message(panic.as_ref()),
                }),
            };
            if let Err(e) = result {
                self.fail(&mut inner, e);
            }
            drop(inner);
            self.wake_idle();
        }
        self.wake_idle();
        if let Some(h) = hooks {
            let stopped = h.on_worker_stop();
            self.sync();
            let mut inner = self.lock();
            match stopped {
                Ok(Some((queue, outstanding))) => self.log(
                    &mut inner,
                    None,
                    EventKind::QueueTerminated {
                        worker,
                        queue,
                        outstanding,
                    },
                ),
                Ok(None) => {}
                Err(e) => self.fail(&mut inner, e),
            }
        }
    }

    /// Runs every submitted task on `workers` threads. `hooks` run on each
    /// worker thread before and after its task loop. The first task failure
    /// or panic stops the run and is returned.
    pub fn run_to_completion(&self, workers: usize, hooks: Option<Arc<dyn WorkerHooks>>) -> Result<RunSummary> {
        if workers == 0 {
            return Err(Error::InvalidArgument("worker count must be positive".into()));
        }
        let started_at = self.now();
        let before = self.lock().done;
        let finished_at = match &self.clock {
            Some(clock) => {
                let actors = clock.spawn_actors(workers, started_at);
                let suspension = clock.suspend();
                let ends = std::thread::scope(|s| {
                    let handles: Vec<_> = actors
                        .into_iter()
                        .enumerate()
                        .map(|(w, actor)| {
                            let hooks = hooks.as_ref();
                            s.spawn(move || {
                                let binding = clock.bind(actor);
                                self.worker_loop(w, hooks);
                                binding.retire()
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join()).collect::<Vec<_>>()
                });
                let end = ends.iter().filter_map(|r| r.as_ref().ok()).copied().max().unwrap_or(started_at);
                clock.resume(suspension, end);
                if ends.iter().any(|r| r.is_err()) {
                    return Err(Error::InvalidArgument("scheduler worker thread panicked".into()));
                }
                end
            }
            None => {
                std::thread::scope(|s| {
                    for w in 0..workers {
                        let hooks = hooks.as_ref();
                        s.spawn(move || self.worker_loop(w, hooks));
                    }
                });
                started_at
            }
        };
        let mut inner = self.lock();
        if let Some(e) = inner.failure.take() {
            return Err(e);
        }
        Ok(RunSummary {
            started_at,
            finished_at,
            tasks_run: inner.done - before,
        })
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic payload".into());
    format!("panicked: {msg}")
}
