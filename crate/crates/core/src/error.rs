use crate::device::CompletionStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("capacity {capacity} is not a multiple of the LBA size {lba_size}")]
    CapacityUnaligned { capacity: u64, lba_size: u64 },
    #[error("image file size {actual} does not match requested capacity {expected}")]
    ImageSizeMismatch { expected: u64, actual: u64 },
    #[error("device is closed")]
    DeviceClosed,
    #[error("dma buffer allocation of {0} bytes failed")]
    AllocationFailed(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("queue depth must be at least 1")]
    InvalidQueueDepth,
    #[error("queue has been terminated")]
    QueueTerminated,
    #[error("queue still has {outstanding} outstanding commands")]
    QueueBusy { outstanding: usize },
    #[error("command {command_id} failed with status {status:?}")]
    CommandFailed { command_id: u64, status: CompletionStatus },

    #[error("offset {offset} or length {length} is not LBA aligned")]
    Unaligned { offset: u64, length: u64 },
    #[error("zero-length I/O")]
    ZeroLength,
    #[error("range [{offset}, {offset}+{length}) exceeds device capacity {capacity}")]
    RangeExceedsDevice { offset: u64, length: u64, capacity: u64 },
    #[error("block {0} is beyond device capacity")]
    BlockBeyondCapacity(u64),
    #[error("device too small: {capacity} bytes, need at least {required}")]
    DeviceTooSmall { capacity: u64, required: u64 },
    #[error("bad magic in database header: {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("header checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("unsupported header format version {0}")]
    UnsupportedVersion(u32),
    #[error("header free list of {0} entries does not fit in a header block")]
    HeaderOverflow(usize),
    #[error("header is corrupt: {0}")]
    HeaderCorrupt(String),
    #[error("block {0} freed twice")]
    DoubleFree(u64),
    #[error("block {block} out of range (max_block {max_block})")]
    BlockOutOfRange { block: u64, max_block: u64 },
    #[error("device full")]
    DeviceFull,

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("calling thread has no worker queue for this strategy")]
    NotAWorker,
    #[error("operation not applicable to strategy {0}")]
    NotApplicable(&'static str),
    #[error("buffer length {actual} does not match expected {expected}")]
    BufferLength { expected: usize, actual: usize },

    #[error("unknown dependency task {0}")]
    UnknownDependency(usize),
    #[error("dependency cycle through task {0}")]
    DependencyCycle(usize),
    #[error("task {task} is {state:?}, expected {expected}")]
    InvalidTaskState {
        task: usize,
        state: crate::scheduler::TaskState,
        expected: &'static str,
    },
    #[error("task {task} failed: {reason}")]
    TaskFailed { task: usize, reason: String },

    #[error("need at least 2 samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("sample vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("t statistic undefined: differences have zero mean and zero variance")]
    UndefinedT,
    #[error("scale factor must be positive, got {0}")]
    InvalidScaleFactor(f64),
    #[error("data corruption: expected checksum {expected:#018x}, got {actual:#018x}")]
    DataCorruption { expected: u64, actual: u64 },
    #[error("no dataset on device")]
    NoDataset,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that indicate the stored data or an engine invariant is broken,
    /// as opposed to bad input.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            Error::DataCorruption { .. } | Error::ChecksumMismatch { .. } | Error::HeaderCorrupt(_)
        )
    }
}
