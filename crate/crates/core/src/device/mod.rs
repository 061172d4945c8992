//! Deterministic simulated NVMe device.
//!
//! The device owns a byte store (memory or a raw image file) and a
//! [`SimClock`]. Synchronous commands block the caller for the command's
//! simulated service time. Asynchronous commands go through a
//! [`CommandQueue`]: submission schedules a completion instant, and the
//! command's effect on the store and on the host buffer happens at that
//! instant. Pending commands are applied in global `(completion time, command
//! id)` order no matter which queue they came from, so two writes to the same
//! LBA can land in the opposite order to their submission when jitter reorders
//! their completions.

mod buffer;
mod command;
mod geometry;
mod queue;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use buffer::DmaBuffer;
pub use command::{Completion, CompletionStatus, NvmeCommand, Opcode};
pub use geometry::{
    DeviceGeometry, LatencyModel, DEFAULT_BASE_LATENCY, DEFAULT_JITTER, DEFAULT_LBA_SIZE,
    DEFAULT_MDTS, KERNEL_PATH_OVERHEAD, PASSTHROUGH_OVERHEAD,
};
pub use queue::{CommandQueue, CompletionCallback, QueueId, SubmitStatus, DEFAULT_QUEUE_DEPTH};

use crate::error::{Error, Result};
use crate::sim::{SimClock, SimTime};
use queue::Mailbox;

/// Where the device keeps its bytes.
#[derive(Debug, Clone)]
pub enum Backing {
    /// Zero-filled memory.
    Memory,
    /// Memory initialised from an existing image (length must equal capacity).
    MemoryImage(Vec<u8>),
    /// Raw little-endian LBA image on the host file system. Created sparse if
    /// missing; persists across open/close.
    ImageFile(PathBuf),
}

enum Store {
    Memory(Vec<u8>),
    File(File),
}

impl Store {
    fn read(&mut self, offset: u64, dst: &mut [u8]) -> std::io::Result<()> {
        match self {
            Store::Memory(bytes) => {
                let start = offset as usize;
                dst.copy_from_slice(&bytes[start..start + dst.len()]);
                Ok(())
            }
            Store::File(f) => f.read_exact_at(dst, offset),
        }
    }

    fn write(&mut self, offset: u64, src: &[u8]) -> std::io::Result<()> {
        match self {
            Store::Memory(bytes) => {
                let start = offset as usize;
                bytes[start..start + src.len()].copy_from_slice(src);
                Ok(())
            }
            Store::File(f) => f.write_all_at(src, offset),
        }
    }
}

/// One entry of the instrumentation log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEvent {
    Submitted {
        command_id: u64,
        queue: Option<QueueId>,
        opcode: Opcode,
        start_lba: u64,
        lba_count: u64,
        at: SimTime,
    },
    Completed {
        command_id: u64,
        status: CompletionStatus,
        at: SimTime,
    },
    /// Byte-range access that bypassed the command path (file baseline).
    HostIo {
        opcode: Opcode,
        offset: u64,
        length: u64,
        at: SimTime,
    },
}

struct Pending {
    at: SimTime,
    command_id: u64,
    command: NvmeCommand,
    status: Option<CompletionStatus>,
    mailbox: Arc<Mailbox>,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.command_id) == (other.at, other.command_id)
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.command_id).cmp(&(other.at, other.command_id))
    }
}

#[derive(Default)]
struct Fault {
    budget: Option<u64>,
    crashed: bool,
}

struct Engine {
    store: Store,
    pending: BinaryHeap<Reverse<Pending>>,
    applied_until: SimTime,
    fault: Fault,
}

#[derive(Debug, Default)]
pub struct DeviceStats {
    pub submitted: AtomicU64,
    pub completed: AtomicU64,
    pub sync_commands: AtomicU64,
    pub ownership_violations: AtomicU64,
}

pub struct Device {
    geometry: DeviceGeometry,
    clock: Arc<SimClock>,
    latency: Mutex<LatencyModel>,
    rng: Mutex<ChaCha8Rng>,
    engine: Mutex<Engine>,
    next_command_id: AtomicU64,
    next_queue_id: AtomicU64,
    log: Mutex<Option<Vec<LogEvent>>>,
    closed: AtomicBool,
    stats: DeviceStats,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device").field("geometry", &self.geometry).finish()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Opens a device of `geometry.capacity()` bytes.
pub fn open_device(
    geometry: DeviceGeometry,
    latency: LatencyModel,
    backing: Backing,
) -> Result<Arc<Device>> {
    let capacity = geometry.capacity();
    let store = match backing {
        Backing::Memory => Store::Memory(vec![0; capacity as usize]),
        Backing::MemoryImage(bytes) => {
            if bytes.len() as u64 != capacity {
                return Err(Error::ImageSizeMismatch {
                    expected: capacity,
                    actual: bytes.len() as u64,
                });
            }
            Store::Memory(bytes)
        }
        Backing::ImageFile(path) => {
            let exists = path.exists();
            let file = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(&path)?;
            let len = file.metadata()?.len();
            if !exists || len == 0 {
                file.set_len(capacity)?;
            } else if len != capacity {
                return Err(Error::ImageSizeMismatch {
                    expected: capacity,
                    actual: len,
                });
            }
            Store::File(file)
        }
    };
    Ok(Arc::new(Device {
        geometry,
        clock: SimClock::new(),
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(latency.rng_seed)),
        latency: Mutex::new(latency),
        engine: Mutex::new(Engine {
            store,
            pending: BinaryHeap::new(),
            applied_until: SimTime::ZERO,
            fault: Fault::default(),
        }),
        next_command_id: AtomicU64::new(1),
        next_queue_id: AtomicU64::new(1),
        log: Mutex::new(None),
        closed: AtomicBool::new(false),
        stats: DeviceStats::default(),
    }))
}

impl Device {
    /// In-memory device with default geometry and latency model.
    pub fn memory(capacity_bytes: u64) -> Result<Arc<Device>> {
        let geometry = DeviceGeometry::for_capacity(capacity_bytes, DEFAULT_LBA_SIZE, DEFAULT_MDTS)?;
        open_device(geometry, LatencyModel::default(), Backing::Memory)
    }

    /// Opens an existing raw image, taking the capacity from its length.
    pub fn open_image(
        path: impl Into<PathBuf>,
        lba_size: u64,
        mdts: u64,
        latency: LatencyModel,
    ) -> Result<Arc<Device>> {
        let path = path.into();
        let len = std::fs::metadata(&path)?.len();
        let geometry = DeviceGeometry::for_capacity(len, lba_size, mdts)?;
        open_device(geometry, latency, Backing::ImageFile(path))
    }

    pub fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    pub fn capacity(&self) -> u64 {
        self.geometry.capacity()
    }

    pub fn clock(&self) -> &Arc<SimClock> {
        &self.clock
    }

    pub fn stats(&self) -> &DeviceStats {
        &self.stats
    }

    pub fn latency_model(&self) -> LatencyModel {
        *lock(&self.latency)
    }

    /// Replaces the latency model and reseeds the jitter generator.
    pub fn set_latency_model(&self, model: LatencyModel) {
        *lock(&self.rng) = ChaCha8Rng::seed_from_u64(model.rng_seed);
        *lock(&self.latency) = model;
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn ensure_open(&self) -> Result<()> {
        if self.is_closed() {
            Err(Error::DeviceClosed)
        } else {
            Ok(())
        }
    }

    pub fn alloc_dma_buffer(&self, length_bytes: usize) -> Result<DmaBuffer> {
        DmaBuffer::new(length_bytes, self.geometry.lba_size() as usize)
    }

    pub fn enable_command_log(&self) {
        lock(&self.log).get_or_insert_with(Vec::new);
    }

    /// Returns the log collected so far and keeps logging.
    pub fn take_command_log(&self) -> Vec<LogEvent> {
        lock(&self.log).as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn record(&self, event: LogEvent) {
        if let Some(log) = lock(&self.log).as_mut() {
            log.push(event);
        }
    }

    /// Lets `commands` more commands execute, then fails every later command
    /// with [`CompletionStatus::DeviceError`] and drops its effect, as if power
    /// were cut at that command boundary.
    pub fn inject_crash_after(&self, commands: u64) {
        let mut e = lock(&self.engine);
        e.fault = Fault {
            budget: Some(commands),
            crashed: false,
        };
    }

    pub fn is_crashed(&self) -> bool {
        lock(&self.engine).fault.crashed
    }

    /// Clears a crash and discards commands that had not completed.
    pub fn power_cycle(&self) {
        let mut e = lock(&self.engine);
        e.fault = Fault::default();
        e.pending.clear();
    }

    /// Copy of the whole store with every command due so far applied.
    pub fn image_bytes(&self) -> Result<Vec<u8>> {
        let now = self.clock.now();
        self.apply_until(now);
        let mut out = vec![0; self.capacity() as usize];
        lock(&self.engine).store.read(0, &mut out)?;
        Ok(out)
    }

    fn sample_service(&self) -> (Duration, Duration) {
        let model = self.latency_model();
        let jitter = model.jitter_range.as_nanos() as i64;
        let offset = if jitter > 0 {
            lock(&self.rng).gen_range(-jitter..=jitter)
        } else {
            0
        };
        let device_time = (model.base_latency.as_nanos() as i64 + offset).max(0) as u64;
        (model.per_command_overhead, Duration::from_nanos(device_time))
    }

    fn validate(&self, cmd: &NvmeCommand) -> Option<CompletionStatus> {
        let g = &self.geometry;
        let in_range = cmd.lba_count > 0
            && cmd.lba_count <= g.mdts_lbas()
            && cmd
                .start_lba
                .checked_add(cmd.lba_count)
                .is_some_and(|end| end <= g.lba_count());
        if !in_range {
            return Some(CompletionStatus::OutOfRange);
        }
        let bytes = (cmd.lba_count * g.lba_size()) as usize;
        if cmd.buffer_offset.checked_add(bytes).is_none_or(|end| end > cmd.buffer.len()) {
            return Some(CompletionStatus::DeviceError);
        }
        None
    }

    fn execute(&self, e: &mut Engine, cmd: &NvmeCommand) -> CompletionStatus {
        if e.fault.crashed {
            return CompletionStatus::DeviceError;
        }
        if let Some(budget) = e.fault.budget.as_mut() {
            if *budget == 0 {
                e.fault.crashed = true;
                return CompletionStatus::DeviceError;
            }
            *budget -= 1;
        }
        let g = &self.geometry;
        let offset = cmd.start_lba * g.lba_size();
        let bytes = (cmd.lba_count * g.lba_size()) as usize;
        let range = cmd.buffer_offset..cmd.buffer_offset + bytes;
        let result = match cmd.opcode {
            Opcode::Read => cmd.buffer.with_mut(|b| e.store.read(offset, &mut b[range])),
            Opcode::Write => cmd.buffer.with(|b| e.store.write(offset, &b[range])),
        };
        match result {
            Ok(()) => CompletionStatus::Success,
            Err(_) => CompletionStatus::DeviceError,
        }
    }

    fn apply_locked(&self, e: &mut Engine, t: SimTime) {
        while e.pending.peek().is_some_and(|Reverse(p)| p.at <= t) {
            let Reverse(p) = e.pending.pop().expect("peeked");
            let status = match p.status {
                Some(s) => s,
                None => self.execute(e, &p.command),
            };
            self.record(LogEvent::Completed {
                command_id: p.command_id,
                status,
                at: p.at,
            });
            self.stats.completed.fetch_add(1, Ordering::Relaxed);
            p.mailbox.push(Completion {
                command_id: p.command_id,
                status,
                user_tag: p.command.user_tag,
                completed_at: p.at,
            });
        }
        e.applied_until = e.applied_until.max(t);
    }

    /// Executes every pending command whose completion instant is `<= t`.
    pub(crate) fn apply_until(&self, t: SimTime) {
        let mut e = lock(&self.engine);
        self.apply_locked(&mut e, t);
    }

    /// Schedules `cmd` and returns `(command id, completion instant, host overhead)`.
    fn enqueue(
        &self,
        cmd: NvmeCommand,
        queue: QueueId,
        mailbox: &Arc<Mailbox>,
        now: SimTime,
    ) -> Result<(u64, SimTime, Duration)> {
        self.ensure_open()?;
        let command_id = self.next_command_id.fetch_add(1, Ordering::Relaxed);
        let invalid = self.validate(&cmd);
        let (overhead, service) = self.sample_service();
        let at = match invalid {
            Some(_) => now,
            None => now + overhead + service,
        };
        self.record(LogEvent::Submitted {
            command_id,
            queue: Some(queue),
            opcode: cmd.opcode,
            start_lba: cmd.start_lba,
            lba_count: cmd.lba_count,
            at: now,
        });
        self.stats.submitted.fetch_add(1, Ordering::Relaxed);
        lock(&self.engine).pending.push(Reverse(Pending {
            at,
            command_id,
            command: cmd,
            status: invalid,
            mailbox: Arc::clone(mailbox),
        }));
        Ok((command_id, at, overhead))
    }

    /// Executes `cmd` and blocks the caller for its service time.
    ///
    /// Returns `Err` only when the device is closed; command failures are in
    /// the completion status.
    pub fn sync_command(&self, cmd: &NvmeCommand) -> Result<Completion> {
        self.ensure_open()?;
        self.clock.sync();
        let now = self.clock.now();
        let command_id = self.next_command_id.fetch_add(1, Ordering::Relaxed);
        self.record(LogEvent::Submitted {
            command_id,
            queue: None,
            opcode: cmd.opcode,
            start_lba: cmd.start_lba,
            lba_count: cmd.lba_count,
            at: now,
        });
        self.stats.sync_commands.fetch_add(1, Ordering::Relaxed);
        let invalid = self.validate(cmd);
        let at = match invalid {
            Some(_) => now,
            None => {
                let (overhead, service) = self.sample_service();
                now + overhead + service
            }
        };
        self.clock.advance_to(at);
        let status = {
            let mut e = lock(&self.engine);
            self.apply_locked(&mut e, at);
            match invalid {
                Some(s) => s,
                None => self.execute(&mut e, cmd),
            }
        };
        self.record(LogEvent::Completed {
            command_id,
            status,
            at,
        });
        Ok(Completion {
            command_id,
            status,
            user_tag: cmd.user_tag,
            completed_at: at,
        })
    }

    /// Byte-range access to the store outside the command path, applied at the
    /// caller's current simulated time. Used by the buffered-file baseline.
    pub fn host_io(&self, opcode: Opcode, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.ensure_open()?;
        let len = buf.len() as u64;
        if offset.checked_add(len).is_none_or(|end| end > self.capacity()) {
            return Err(Error::RangeExceedsDevice {
                offset,
                length: len,
                capacity: self.capacity(),
            });
        }
        self.clock.sync();
        let now = self.clock.now();
        let mut e = lock(&self.engine);
        self.apply_locked(&mut e, now);
        if e.fault.crashed {
            return Err(Error::CommandFailed {
                command_id: 0,
                status: CompletionStatus::DeviceError,
            });
        }
        match opcode {
            Opcode::Read => e.store.read(offset, buf)?,
            Opcode::Write => e.store.write(offset, buf)?,
        }
        drop(e);
        self.record(LogEvent::HostIo {
            opcode,
            offset,
            length: len,
            at: now,
        });
        Ok(())
    }

    /// Draws a service time from the latency model, for host paths that model
    /// their own I/O cost.
    pub fn sample_latency(&self) -> (Duration, Duration) {
        self.sample_service()
    }

    /// Creates a combined submission/completion queue of `depth` entries.
    pub fn create_queue(
        self: &Arc<Self>,
        depth: usize,
        callback: CompletionCallback,
    ) -> Result<CommandQueue> {
        self.ensure_open()?;
        if depth == 0 {
            return Err(Error::InvalidQueueDepth);
        }
        let id = self.next_queue_id.fetch_add(1, Ordering::Relaxed);
        Ok(CommandQueue::new(Arc::clone(self), id, depth, callback))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(capacity: u64, latency: LatencyModel) -> Arc<Device> {
        let g = DeviceGeometry::for_capacity(capacity, 512, DEFAULT_MDTS).unwrap();
        open_device(g, latency, Backing::Memory).unwrap()
    }

    fn pattern(len: usize, seed: u8) -> Vec<u8> {
        (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect()
    }

    #[test]
    fn sync_read_after_write() {
        let d = dev(1 << 20, LatencyModel::default());
        let w = d.alloc_dma_buffer(8 * 512).unwrap();
        w.fill_from(&pattern(4096, 3)).unwrap();
        d.sync_command(&NvmeCommand::write(0, 8, w.clone()))
            .unwrap()
            .into_result()
            .unwrap();
        let r = d.alloc_dma_buffer(4096).unwrap();
        let c = d.sync_command(&NvmeCommand::read(0, 8, r.clone())).unwrap();
        assert_eq!(c.status, CompletionStatus::Success);
        assert_eq!(r.to_vec(), w.to_vec());
    }

    #[test]
    fn read_past_end_is_out_of_range() {
        let d = dev(1 << 20, LatencyModel::default());
        let r = d.alloc_dma_buffer(512).unwrap();
        let lbas = d.geometry().lba_count();
        let c = d.sync_command(&NvmeCommand::read(lbas, 1, r.clone())).unwrap();
        assert_eq!(c.status, CompletionStatus::OutOfRange);
        let c = d.sync_command(&NvmeCommand::read(lbas - 1, 1, r)).unwrap();
        assert_eq!(c.status, CompletionStatus::Success);
    }

    #[test]
    fn exactly_mdts_is_accepted_and_more_is_not() {
        let d = dev(1 << 20, LatencyModel::default());
        let b = d.alloc_dma_buffer(256 * 512 + 512).unwrap();
        let c = d.sync_command(&NvmeCommand::write(0, 256, b.clone())).unwrap();
        assert_eq!(c.status, CompletionStatus::Success);
        let c = d.sync_command(&NvmeCommand::write(0, 257, b)).unwrap();
        assert_eq!(c.status, CompletionStatus::OutOfRange);
    }

    #[test]
    fn short_buffer_is_a_device_error() {
        let d = dev(1 << 20, LatencyModel::default());
        let b = d.alloc_dma_buffer(512).unwrap();
        let c = d.sync_command(&NvmeCommand::read(0, 2, b)).unwrap();
        assert_eq!(c.status, CompletionStatus::DeviceError);
    }

    #[test]
    fn sync_command_advances_free_time_by_service_time() {
        let model = LatencyModel::default().with_jitter(Duration::ZERO);
        let d = dev(1 << 20, model);
        let b = d.alloc_dma_buffer(512).unwrap();
        let c = d.sync_command(&NvmeCommand::read(0, 1, b)).unwrap();
        let expected = model.base_latency + model.per_command_overhead;
        assert_eq!(c.completed_at, SimTime::ZERO + expected);
        assert_eq!(d.clock().now(), c.completed_at);
    }

    #[test]
    fn image_file_persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.img");
        let g = DeviceGeometry::for_capacity(1 << 20, 512, DEFAULT_MDTS).unwrap();
        let data = pattern(512, 9);
        {
            let d = open_device(g, LatencyModel::default(), Backing::ImageFile(path.clone())).unwrap();
            let b = d.alloc_dma_buffer(512).unwrap();
            b.fill_from(&data).unwrap();
            d.sync_command(&NvmeCommand::write(5, 1, b)).unwrap().into_result().unwrap();
        }
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 1 << 20);
        let d = Device::open_image(&path, 512, DEFAULT_MDTS, LatencyModel::default()).unwrap();
        let b = d.alloc_dma_buffer(512).unwrap();
        d.sync_command(&NvmeCommand::read(5, 1, b.clone())).unwrap();
        assert_eq!(b.to_vec(), data);
    }

    #[test]
    fn image_size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.img");
        std::fs::write(&path, vec![0u8; 4096]).unwrap();
        let g = DeviceGeometry::for_capacity(1 << 20, 512, DEFAULT_MDTS).unwrap();
        assert!(matches!(
            open_device(g, LatencyModel::default(), Backing::ImageFile(path)),
            Err(Error::ImageSizeMismatch { .. })
        ));
    }

    #[test]
    fn crash_budget_fails_later_commands() {
        let d = dev(1 << 20, LatencyModel::default());
        let b = d.alloc_dma_buffer(512).unwrap();
        b.fill_from(&[1; 512]).unwrap();
        d.inject_crash_after(1);
        assert!(d.sync_command(&NvmeCommand::write(0, 1, b.clone())).unwrap().status.is_success());
        let c = d.sync_command(&NvmeCommand::write(1, 1, b.clone())).unwrap();
        assert_eq!(c.status, CompletionStatus::DeviceError);
        assert!(d.is_crashed());
        d.power_cycle();
        let img = d.image_bytes().unwrap();
        assert_eq!(&img[..512], &[1; 512]);
        assert_eq!(&img[512..1024], &[0; 512]);
    }

    #[test]
    fn closed_device_rejects_commands() {
        let d = dev(1 << 20, LatencyModel::default());
        d.close();
        let b = d.alloc_dma_buffer(512).unwrap();
        assert!(matches!(d.sync_command(&NvmeCommand::read(0, 1, b)), Err(Error::DeviceClosed)));
        assert!(matches!(d.create_queue(4, Box::new(|_| {})), Err(Error::DeviceClosed)));
    }
}
