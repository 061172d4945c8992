//! C interface to quackstore.
//!
//! Every function returns a [`QsStatus`]. On failure the message of the most
//! recent error on the calling thread is available from
//! [`qs_last_error_message`]. Devices are opaque [`QsDevice`] handles released
//! with [`qs_device_free`]. Panics are caught at the boundary and reported as
//! [`QsStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use quackstore::bench::{generate_dataset, paired_t_test, run_scan, standard_error};
use quackstore::device::{open_device, Backing, Device, DeviceGeometry, LatencyModel, DEFAULT_LBA_SIZE, DEFAULT_MDTS};
use quackstore::scheduler::{race_demo, RaceConfig, RaceOutcome};
use quackstore::strategy::{StrategyConfig, StrategyKind};
use quackstore::{Engine, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    /// Header or data failed verification.
    Corruption = 3,
    /// The device holds no generated table.
    NoDataset = 4,
    DeviceFull = 5,
    /// The device rejected or failed a command.
    DeviceError = 6,
    /// Too few samples, or a statistic that is undefined for the input.
    Statistics = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsStrategy {
    File = 0,
    Sync = 1,
    AsyncSingle = 2,
    AsyncPool = 3,
    AsyncThread = 4,
}

impl From<QsStrategy> for StrategyKind {
    fn from(s: QsStrategy) -> Self {
        match s {
            QsStrategy::File => StrategyKind::FileBaseline,
            QsStrategy::Sync => StrategyKind::SyncDirect,
            QsStrategy::AsyncSingle => StrategyKind::AsyncSingleQueue,
            QsStrategy::AsyncPool => StrategyKind::AsyncQueuePool,
            QsStrategy::AsyncThread => StrategyKind::AsyncThreadQueues,
        }
    }
}

/// Opaque device handle.
pub struct QsDevice {
    device: Arc<Device>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QsScanOptions {
    pub strategy: QsStrategy,
    /// 0 selects the number of logical cores.
    pub workers: usize,
    /// 0 selects one queue per worker.
    pub pool_size: usize,
    pub queue_depth: usize,
    pub drain_after_block: bool,
    pub passthrough: bool,
    pub jitter_us: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QsScanResult {
    pub simulated_us: f64,
    pub host_us: f64,
    pub checksum: u64,
    pub blocks: u64,
    pub tasks: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QsTTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub mean_difference: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QsStatus {
    match e {
        _ if e.is_corruption() => QsStatus::Corruption,
        Error::BadMagic(_) | Error::UnsupportedVersion(_) | Error::HeaderOverflow(_) => QsStatus::Corruption,
        Error::Io(_) | Error::Csv(_) | Error::ImageSizeMismatch { .. } => QsStatus::Io,
        Error::NoDataset => QsStatus::NoDataset,
        Error::DeviceFull | Error::DeviceTooSmall { .. } => QsStatus::DeviceFull,
        Error::CommandFailed { .. } | Error::DeviceClosed => QsStatus::DeviceError,
        Error::NotEnoughSamples(_) | Error::LengthMismatch(..) | Error::UndefinedT => QsStatus::Statistics,
        _ => QsStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for [`qs_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), (QsStatus, String)>) -> QsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            QsStatus::Internal
        }
    }
}

fn lib(e: Error) -> (QsStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (QsStatus, String) {
    (QsStatus::InvalidArgument, msg.to_string())
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, (QsStatus, String)> {
    if path.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn device_arg<'a>(dev: *const QsDevice) -> Result<&'a QsDevice, (QsStatus, String)> {
    dev.as_ref().ok_or_else(|| invalid("device handle is null"))
}

unsafe fn samples<'a>(p: *const f64, n: usize) -> Result<&'a [f64], (QsStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid("sample pointer is null"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn micros(us: f64) -> Result<Duration, (QsStatus, String)> {
    Duration::try_from_secs_f64(us / 1e6).map_err(|_| invalid("jitter must be a finite non-negative number"))
}

fn boxed(device: Arc<Device>, out: *mut *mut QsDevice) {
    unsafe { *out = Box::into_raw(Box::new(QsDevice { device })) };
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn qs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a zero-filled in-memory device of `capacity` bytes with 512-byte
/// LBAs and a 128 KiB transfer limit.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn qs_device_open_memory(capacity: u64, out: *mut *mut QsDevice) -> QsStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        boxed(Device::memory(capacity).map_err(lib)?, out);
        Ok(())
    })
}

/// Opens the raw image at `path`, creating it with `capacity` bytes when it
/// does not exist. Pass `capacity = 0` to require an existing image.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle pointer.
#[no_mangle]
pub unsafe extern "C" fn qs_device_open_file(
    path: *const c_char,
    capacity: u64,
    out: *mut *mut QsDevice,
) -> QsStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let path = path_arg(path)?;
        let device = if path.exists() {
            Device::open_image(path, DEFAULT_LBA_SIZE, DEFAULT_MDTS, LatencyModel::default()).map_err(lib)?
        } else if capacity == 0 {
            return Err((QsStatus::Io, format!("{} does not exist", path.display())));
        } else {
            let g = DeviceGeometry::for_capacity(capacity, DEFAULT_LBA_SIZE, DEFAULT_MDTS).map_err(lib)?;
            open_device(g, LatencyModel::default(), Backing::ImageFile(path)).map_err(lib)?
        };
        boxed(device, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `dev` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qs_device_free(dev: *mut QsDevice) {
    if !dev.is_null() {
        drop(Box::from_raw(dev));
    }
}

/// Device capacity in bytes, or 0 for a null handle.
///
/// # Safety
/// `dev` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qs_device_capacity(dev: *const QsDevice) -> u64 {
    dev.as_ref().map_or(0, |d| d.device.capacity())
}

/// Writes an empty header, discarding any previous contents' metadata.
///
/// # Safety
/// `dev` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qs_format(dev: *const QsDevice) -> QsStatus {
    guard(|| {
        let d = device_arg(dev)?;
        Engine::format(Arc::clone(&d.device), StrategyConfig::new(StrategyKind::SyncDirect)).map_err(lib)?;
        Ok(())
    })
}

/// Generates the synthetic table on a freshly formatted device and stores its
/// checksum in `checksum` when that is not null.
///
/// # Safety
/// `dev` must be a live handle; `checksum` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qs_generate(dev: *const QsDevice, scale_factor: f64, seed: u64, checksum: *mut u64) -> QsStatus {
    guard(|| {
        let d = device_arg(dev)?;
        let engine = Engine::open(Arc::clone(&d.device), StrategyConfig::new(StrategyKind::SyncDirect)).map_err(lib)?;
        let info = generate_dataset(&engine, scale_factor, seed).map_err(lib)?;
        if let Some(c) = checksum.as_mut() {
            *c = info.checksum;
        }
        Ok(())
    })
}

/// Default scan options: thread-owned queues, drain on, default depth.
#[no_mangle]
pub extern "C" fn qs_scan_options_default() -> QsScanOptions {
    QsScanOptions {
        strategy: QsStrategy::AsyncThread,
        workers: 0,
        pool_size: 0,
        queue_depth: quackstore::device::DEFAULT_QUEUE_DEPTH,
        drain_after_block: true,
        passthrough: false,
        jitter_us: quackstore::device::DEFAULT_JITTER.as_secs_f64() * 1e6,
        seed: 42,
    }
}

/// Scans the generated table and verifies its checksum. A mismatch returns
/// [`QsStatus::Corruption`].
///
/// # Safety
/// `dev` must be a live handle, `options` readable and `result` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qs_scan(dev: *const QsDevice, options: *const QsScanOptions, result: *mut QsScanResult) -> QsStatus {
    guard(|| {
        let d = device_arg(dev)?;
        let o = options.as_ref().ok_or_else(|| invalid("options is null"))?;
        let kind = StrategyKind::from(o.strategy);
        let workers = if o.workers == 0 {
            quackstore::strategy::default_worker_count()
        } else {
            o.workers
        };
        let latency = LatencyModel::default()
            .passthrough(o.passthrough)
            .with_jitter(micros(o.jitter_us)?)
            .with_seed(o.seed);
        d.device.set_latency_model(latency);
        let config = StrategyConfig::new(kind)
            .with_queue_depth(o.queue_depth)
            .with_drain(o.drain_after_block || !kind.is_async())
            .with_pool_size(if o.pool_size == 0 { workers } else { o.pool_size });
        let engine = Engine::open(Arc::clone(&d.device), config).map_err(lib)?;
        let scan = run_scan(&engine, workers).map_err(lib)?;
        if let Some(r) = result.as_mut() {
            *r = QsScanResult {
                simulated_us: scan.duration.as_nanos() as f64 / 1e3,
                host_us: scan.host_time.as_nanos() as f64 / 1e3,
                checksum: scan.checksum,
                blocks: scan.blocks,
                tasks: scan.tasks,
            };
        }
        Ok(())
    })
}

/// One-sided paired t-test of `H0: mean(a - b) <= 0` over `n` pairs.
///
/// # Safety
/// `a` and `b` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_paired_t_test(a: *const f64, b: *const f64, n: usize, out: *mut QsTTest) -> QsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        let r = paired_t_test(samples(a, n)?, samples(b, n)?).map_err(lib)?;
        *out = QsTTest {
            t_statistic: r.t_statistic,
            degrees_of_freedom: r.degrees_of_freedom,
            p_value: r.p_value,
            mean_difference: r.mean_difference,
        };
        Ok(())
    })
}

/// Standard error of the mean of `n` samples.
///
/// # Safety
/// `x` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_standard_error(x: *const f64, n: usize, out: *mut f64) -> QsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        *out = standard_error(samples(x, n)?).map_err(lib)?;
        Ok(())
    })
}

/// One trial of two dependent writes to one block through a pool of two
/// queues. `inverted` is set when the earlier version ended up on disk.
///
/// # Safety
/// `inverted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_race_demo(jitter_us: f64, drain: bool, seed: u64, inverted: *mut bool) -> QsStatus {
    guard(|| {
        let inverted = inverted.as_mut().ok_or_else(|| invalid("inverted is null"))?;
        let outcome = race_demo(RaceConfig {
            jitter: micros(jitter_us)?,
            drain,
            seed,
        })
        .map_err(lib)?;
        *inverted = outcome == RaceOutcome::InversionDetected;
        Ok(())
    })
}
