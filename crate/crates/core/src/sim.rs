//! Simulated time shared by a device and every thread that drives it.
//!
//! A thread either runs *free* (not registered; all free threads share one
//! monotone clock) or as an *actor*. Each actor carries its own simulated time
//! and may only perform an observable action while it holds the smallest
//! `(time, actor id)` among active actors. Multi-threaded runs are therefore a
//! conservative discrete-event simulation: the interleaving of device commands
//! and lock acquisitions is a function of simulated time and seeds only, not of
//! host thread scheduling.
//!
//! Only [`SimMutex`] may be held while an actor waits for its turn. Holding a
//! plain mutex across [`SimClock::advance_to`] can deadlock the simulation.

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, TryLockError};
use std::time::Duration;

/// A point in simulated time, in nanoseconds since the clock was created.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_since(self, earlier: SimTime) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.as_nanos() as u64))
    }
}

impl Sub for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        self.saturating_since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}us", self.as_micros_f64())
    }
}

pub type ActorId = usize;

/// Identifies a set of parked actors (a lock's waiters, a scheduler's idle workers).
pub type WaitKey = u64;

static NEXT_CLOCK_ID: AtomicU64 = AtomicU64::new(1);
static NEXT_WAIT_KEY: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static BOUND: Cell<Option<(u64, ActorId)>> = const { Cell::new(None) };
}

pub fn new_wait_key() -> WaitKey {
    NEXT_WAIT_KEY.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Active,
    Parked(WaitKey),
    Retired,
}

struct Slot {
    time: SimTime,
    status: Status,
    signal: Arc<Condvar>,
}

struct ClockState {
    free_now: SimTime,
    slots: Vec<Slot>,
}

impl ClockState {
    fn is_turn(&self, me: ActorId) -> bool {
        let mine = (self.slots[me].time, me);
        self.slots
            .iter()
            .enumerate()
            .all(|(id, s)| id == me || s.status != Status::Active || mine < (s.time, id))
    }

    fn wake_min(&self) {
        let min = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.status == Status::Active)
            .min_by_key(|(id, s)| (s.time, *id));
        if let Some((_, slot)) = min {
            slot.signal.notify_one();
        }
    }
}

pub struct SimClock {
    id: u64,
    state: Mutex<ClockState>,
}

impl fmt::Debug for SimClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimClock").field("id", &self.id).finish()
    }
}

/// Token returned by [`SimClock::suspend`]; pass it to [`SimClock::resume`].
#[must_use]
pub struct Suspension(Option<(ActorId, WaitKey)>);

impl SimClock {
    pub fn new() -> Arc<Self> {
        Arc::new(SimClock {
            id: NEXT_CLOCK_ID.fetch_add(1, Ordering::Relaxed),
            state: Mutex::new(ClockState {
                free_now: SimTime::ZERO,
                slots: Vec::new(),
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, ClockState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The actor bound to the calling thread for this clock, if any.
    pub fn actor(&self) -> Option<ActorId> {
        BOUND.with(|b| match b.get() {
            Some((clock, actor)) if clock == self.id => Some(actor),
            _ => None,
        })
    }

    pub fn now(&self) -> SimTime {
        let st = self.lock();
        match self.actor() {
            Some(me) => st.slots[me].time,
            None => st.free_now,
        }
    }

    /// Moves the caller's time forward to `t` (never backwards). An actor then
    /// waits until it is the earliest active actor.
    pub fn advance_to(&self, t: SimTime) {
        let mut st = self.lock();
        match self.actor() {
            Some(me) => {
                let slot = &mut st.slots[me];
                if t > slot.time {
                    slot.time = t;
                    st.wake_min();
                }
                self.wait_turn(st, me);
            }
            None => st.free_now = st.free_now.max(t),
        }
    }

    pub fn advance_by(&self, d: Duration) {
        let now = self.now();
        self.advance_to(now + d);
    }

    /// Waits for the caller's turn without moving time. No-op for free threads.
    pub fn sync(&self) {
        if let Some(me) = self.actor() {
            let st = self.lock();
            self.wait_turn(st, me);
        }
    }

    fn wait_turn(&self, mut st: MutexGuard<'_, ClockState>, me: ActorId) {
        loop {
            if st.slots[me].status == Status::Active && st.is_turn(me) {
                return;
            }
            let signal = st.slots[me].signal.clone();
            st = signal.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Registers `n` active actors starting at `start`. Register every actor of a
    /// run before any of them acts, or early actors may run ahead of late ones.
    pub fn spawn_actors(&self, n: usize, start: SimTime) -> Vec<ActorId> {
        let mut st = self.lock();
        let mut ids = Vec::with_capacity(n);
        for idx in 0..st.slots.len() {
            if ids.len() == n {
                break;
            }
            if st.slots[idx].status == Status::Retired {
                st.slots[idx].time = start;
                st.slots[idx].status = Status::Active;
                ids.push(idx);
            }
        }
        while ids.len() < n {
            ids.push(st.slots.len());
            st.slots.push(Slot {
                time: start,
                status: Status::Active,
                signal: Arc::new(Condvar::new()),
            });
        }
        ids
    }

    /// Binds `actor` to the calling thread until the returned guard is dropped or
    /// [`ActorBinding::retire`]d.
    pub fn bind(self: &Arc<Self>, actor: ActorId) -> ActorBinding {
        BOUND.with(|b| {
            assert!(b.get().is_none(), "thread is already bound to a simulation actor");
            b.set(Some((self.id, actor)));
        });
        ActorBinding {
            clock: Arc::clone(self),
            actor,
            done: false,
        }
    }

    fn retire(&self, actor: ActorId) -> SimTime {
        let mut st = self.lock();
        let t = st.slots[actor].time;
        st.slots[actor].status = Status::Retired;
        st.wake_min();
        t
    }

    /// Parks the calling actor on `key`, releasing `external` only after the
    /// actor is marked parked so an unpark issued under `external` is never lost.
    /// Returns once unparked and it is the caller's turn again.
    pub fn park<G>(&self, key: WaitKey, external: G) {
        let me = self.actor().expect("only simulation actors can park");
        let mut st = self.lock();
        st.slots[me].status = Status::Parked(key);
        drop(external);
        st.wake_min();
        let signal = st.slots[me].signal.clone();
        while st.slots[me].status != Status::Active {
            st = signal.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        self.wait_turn(st, me);
    }

    /// Makes every actor parked on `key` active again at no earlier than `at`.
    /// An actor caller then waits for its turn, since a woken actor may now
    /// precede it.
    pub fn unpark_all(&self, key: WaitKey, at: SimTime) -> usize {
        let mut st = self.lock();
        let mut woken = 0;
        for slot in st.slots.iter_mut() {
            if slot.status == Status::Parked(key) {
                slot.status = Status::Active;
                slot.time = slot.time.max(at);
                slot.signal.notify_one();
                woken += 1;
            }
        }
        if woken > 0 {
            st.wake_min();
        }
        if let Some(me) = self.actor() {
            if st.slots[me].status == Status::Active {
                self.wait_turn(st, me);
            }
        }
        woken
    }

    /// Takes the calling actor out of turn arbitration while it blocks on work
    /// done by other actors (e.g. joining worker threads).
    pub fn suspend(&self) -> Suspension {
        match self.actor() {
            Some(me) => {
                let key = new_wait_key();
                let mut st = self.lock();
                st.slots[me].status = Status::Parked(key);
                st.wake_min();
                Suspension(Some((me, key)))
            }
            None => Suspension(None),
        }
    }

    /// Undoes [`SimClock::suspend`], moving the caller's time to at least `at`.
    pub fn resume(&self, suspension: Suspension, at: SimTime) {
        match suspension.0 {
            Some((_, key)) => {
                self.unpark_all(key, at);
                self.sync();
            }
            None => self.advance_to(at),
        }
    }
}

pub struct ActorBinding {
    clock: Arc<SimClock>,
    actor: ActorId,
    done: bool,
}

impl ActorBinding {
    pub fn actor(&self) -> ActorId {
        self.actor
    }

    /// Unbinds the thread and removes the actor from arbitration, returning its
    /// final simulated time.
    pub fn retire(mut self) -> SimTime {
        self.done = true;
        self.clock.sync();
        BOUND.with(|b| b.set(None));
        self.clock.retire(self.actor)
    }
}

impl Drop for ActorBinding {
    fn drop(&mut self) {
        if !self.done {
            BOUND.with(|b| b.set(None));
            self.clock.retire(self.actor);
        }
    }
}

#[derive(Debug, Default)]
struct Holder {
    actor: Option<ActorId>,
}

/// A mutex that actors acquire in simulated-time order. Free threads fall back
/// to plain mutex semantics.
pub struct SimMutex<T> {
    clock: Arc<SimClock>,
    key: WaitKey,
    holder: Mutex<Holder>,
    data: Mutex<T>,
}

pub struct SimMutexGuard<'a, T> {
    lock: &'a SimMutex<T>,
    data: Option<MutexGuard<'a, T>>,
    actor: Option<ActorId>,
}

impl<T> SimMutex<T> {
    pub fn new(clock: Arc<SimClock>, value: T) -> Self {
        SimMutex {
            clock,
            key: new_wait_key(),
            holder: Mutex::new(Holder::default()),
            data: Mutex::new(value),
        }
    }

    fn holder(&self) -> MutexGuard<'_, Holder> {
        self.holder.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn lock(&self) -> SimMutexGuard<'_, T> {
        match self.clock.actor() {
            Some(me) => {
                self.clock.sync();
                loop {
                    let mut h = self.holder();
                    if h.actor.is_none() {
                        h.actor = Some(me);
                        break;
                    }
                    self.clock.park(self.key, h);
                }
                let data = self.data.lock().unwrap_or_else(|e| e.into_inner());
                SimMutexGuard {
                    lock: self,
                    data: Some(data),
                    actor: Some(me),
                }
            }
            None => SimMutexGuard {
                lock: self,
                data: Some(self.data.lock().unwrap_or_else(|e| e.into_inner())),
                actor: None,
            },
        }
    }

    pub fn try_lock(&self) -> Option<SimMutexGuard<'_, T>> {
        let actor = self.clock.actor();
        if let Some(me) = actor {
            self.clock.sync();
            let mut h = self.holder();
            if h.actor.is_some() {
                return None;
            }
            h.actor = Some(me);
        }
        match self.data.try_lock() {
            Ok(data) => Some(SimMutexGuard {
                lock: self,
                data: Some(data),
                actor,
            }),
            Err(TryLockError::Poisoned(p)) => Some(SimMutexGuard {
                lock: self,
                data: Some(p.into_inner()),
                actor,
            }),
            Err(TryLockError::WouldBlock) => {
                if actor.is_some() {
                    self.holder().actor = None;
                }
                None
            }
        }
    }

    pub fn clock(&self) -> &Arc<SimClock> {
        &self.clock
    }
}

impl<T> std::ops::Deref for SimMutexGuard<'_, T> {
    type Target = T;

    fn deref(&self) -> &T {
        self.data.as_ref().expect("guard released")
    }
}

impl<T> std::ops::DerefMut for SimMutexGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        self.data.as_mut().expect("guard released")
    }
}

impl<T> Drop for SimMutexGuard<'_, T> {
    fn drop(&mut self) {
        self.data.take();
        if self.actor.is_some() {
            let mut h = self.lock.holder();
            h.actor = None;
            let now = self.lock.clock.now();
            drop(h);
            self.lock.clock.unpark_all(self.lock.key, now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn free_threads_share_a_monotone_clock() {
        let clock = SimClock::new();
        clock.advance_to(SimTime::from_nanos(50));
        clock.advance_to(SimTime::from_nanos(10));
        assert_eq!(clock.now(), SimTime::from_nanos(50));
        clock.advance_by(Duration::from_nanos(5));
        assert_eq!(clock.now().as_nanos(), 55);
    }

    #[test]
    fn actors_act_in_time_order() {
        let clock = SimClock::new();
        let ids = clock.spawn_actors(3, SimTime::ZERO);
        let log = Arc::new(Mutex::new(Vec::new()));
        let handles: Vec<_> = ids
            .into_iter()
            .map(|id| {
                let clock = Arc::clone(&clock);
                let log = Arc::clone(&log);
                thread::spawn(move || {
                    let binding = clock.bind(id);
                    for step in 0..5u64 {
                        // actor k steps by k+1 ns
                        clock.advance_by(Duration::from_nanos(id as u64 + 1));
                        log.lock().unwrap().push((clock.now(), id, step));
                    }
                    binding.retire()
                })
            })
            .collect();
        let ends: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(ends[0].as_nanos(), 5);
        assert_eq!(ends[2].as_nanos(), 15);
        let log = log.lock().unwrap();
        let times: Vec<_> = log.iter().map(|(t, id, _)| (*t, *id)).collect();
        let mut sorted = times.clone();
        sorted.sort();
        assert_eq!(times, sorted);
    }

    #[test]
    fn sim_mutex_serializes_actors_in_simulated_time() {
        let clock = SimClock::new();
        let lock = Arc::new(SimMutex::new(Arc::clone(&clock), 0u64));
        let ids = clock.spawn_actors(4, SimTime::ZERO);
        let handles: Vec<_> = ids
            .into_iter()
            .map(|id| {
                let clock = Arc::clone(&clock);
                let lock = Arc::clone(&lock);
                thread::spawn(move || {
                    let binding = clock.bind(id);
                    for _ in 0..3 {
                        let mut g = lock.lock();
                        *g += 1;
                        clock.advance_by(Duration::from_nanos(10));
                    }
                    binding.retire()
                })
            })
            .collect();
        let ends: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(*lock.lock(), 12);
        // 12 critical sections of 10ns each, fully serialized
        assert_eq!(ends.iter().max().unwrap().as_nanos(), 120);
    }

    #[test]
    fn try_lock_fails_while_held_by_another_actor() {
        let clock = SimClock::new();
        let lock = Arc::new(SimMutex::new(Arc::clone(&clock), ()));
        let ids = clock.spawn_actors(2, SimTime::ZERO);
        let seen = Arc::new(Mutex::new(None));
        let h0 = {
            let (clock, lock) = (Arc::clone(&clock), Arc::clone(&lock));
            let id = ids[0];
            thread::spawn(move || {
                let b = clock.bind(id);
                let _g = lock.lock();
                clock.advance_by(Duration::from_nanos(100));
                b.retire()
            })
        };
        let h1 = {
            let (clock, lock, seen) = (Arc::clone(&clock), Arc::clone(&lock), Arc::clone(&seen));
            let id = ids[1];
            thread::spawn(move || {
                let b = clock.bind(id);
                clock.advance_by(Duration::from_nanos(50));
                *seen.lock().unwrap() = Some(lock.try_lock().is_some());
                b.retire()
            })
        };
        h0.join().unwrap();
        h1.join().unwrap();
        assert_eq!(*seen.lock().unwrap(), Some(false));
    }
}
