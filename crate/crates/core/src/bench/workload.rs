//! Synthetic table: `round(sf * 150000)` rows of 200 bytes packed densely
//! into data blocks, plus a manifest block describing the dataset.
//!
//! Row `r` is 25 little-endian words: the row index, then 24 words hashed
//! from `(seed, r, k)`. The dataset checksum is a wrapping sum of every word
//! mixed with its global word index, so any block range can be folded
//! independently and the partial sums combined in any order.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::layout::{checkpoint, header_checksum, BlockId, BLOCK_SIZE};
use crate::scheduler::Scheduler;
use crate::strategy::{enter_worker, IoStrategy};

pub const ROWS_PER_SCALE_FACTOR: f64 = 150_000.0;
pub const ROW_SIZE: u64 = 200;
const WORDS_PER_ROW: u64 = ROW_SIZE / 8;
const WORDS_PER_BLOCK: u64 = BLOCK_SIZE / 8;

const MANIFEST_MAGIC: [u8; 4] = *b"QSDS";
const MANIFEST_VERSION: u32 = 1;
const MANIFEST_LEN: usize = 4 + 4 + 8 * 8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Value of word `k` of row `row`.
pub fn row_word(seed: u64, row: u64, k: u64) -> u64 {
    if k == 0 {
        row
    } else {
        splitmix64(splitmix64(seed ^ splitmix64(row)).wrapping_add(k))
    }
}

/// Contribution of one word at global word index `index` to the checksum.
pub fn word_contribution(value: u64, index: u64) -> u64 {
    splitmix64(value ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Folds little-endian words of `bytes`, the first of which has global word
/// index `first_word`.
pub fn fold_words(bytes: &[u8], first_word: u64) -> u64 {
    bytes
        .chunks_exact(8)
        .zip(first_word..)
        .fold(0u64, |acc, (w, i)| {
            acc.wrapping_add(word_contribution(u64::from_le_bytes(w.try_into().expect("8 bytes")), i))
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub scale_factor: f64,
    pub seed: u64,
    pub rows: u64,
}

impl Workload {
    pub fn new(scale_factor: f64, seed: u64) -> Result<Self> {
        if !(scale_factor.is_finite() && scale_factor > 0.0) {
            return Err(Error::InvalidScaleFactor(scale_factor));
        }
        let rows = (scale_factor * ROWS_PER_SCALE_FACTOR).round() as u64;
        if rows == 0 {
            return Err(Error::InvalidScaleFactor(scale_factor));
        }
        Ok(Workload {
            scale_factor,
            seed,
            rows,
        })
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows * ROW_SIZE
    }

    pub fn block_count(&self) -> u64 {
        self.total_bytes().div_ceil(BLOCK_SIZE)
    }

    /// Bytes of data block `j` (0-based within the dataset) that hold rows.
    pub fn block_payload_len(&self, j: u64) -> usize {
        (self.total_bytes() - j * BLOCK_SIZE).min(BLOCK_SIZE) as usize
    }

    /// Writes data block `j` into `out` (zero padded) and returns its checksum
    /// contribution.
    pub fn fill_block(&self, j: u64, out: &mut [u8]) -> u64 {
        let words = self.block_payload_len(j) / 8;
        let first = j * WORDS_PER_BLOCK;
        let mut sum = 0u64;
        for (w, chunk) in out.chunks_exact_mut(8).enumerate() {
            let value = if w < words {
                let g = first + w as u64;
                let v = row_word(self.seed, g / WORDS_PER_ROW, g % WORDS_PER_ROW);
                sum = sum.wrapping_add(word_contribution(v, g));
                v
            } else {
                0
            };
            chunk.copy_from_slice(&value.to_le_bytes());
        }
        sum
    }
}

/// What the manifest block records about a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetInfo {
    pub workload: Workload,
    pub first_block: BlockId,
    pub block_count: u64,
    pub checksum: u64,
}

impl DatasetInfo {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MANIFEST_LEN + 8);
        out.extend_from_slice(&MANIFEST_MAGIC);
        out.extend_from_slice(&MANIFEST_VERSION.to_le_bytes());
        for v in [
            self.workload.scale_factor.to_bits(),
            self.workload.rows,
            ROW_SIZE,
            self.workload.seed,
            self.first_block.0,
            self.block_count,
            self.checksum,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.resize(MANIFEST_LEN, 0);
        let sum = header_checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes[..4] != MANIFEST_MAGIC {
            return Err(Error::NoDataset);
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let stored = u64_at(MANIFEST_LEN);
        let computed = header_checksum(&bytes[..MANIFEST_LEN]);
        if stored != computed {
            return Err(Error::HeaderCorrupt("dataset manifest checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MANIFEST_VERSION || u64_at(24) != ROW_SIZE {
            return Err(Error::HeaderCorrupt(format!("dataset manifest version {version}")));
        }
        let workload = Workload {
            scale_factor: f64::from_bits(u64_at(8)),
            rows: u64_at(16),
            seed: u64_at(32),
        };
        let info = DatasetInfo {
            workload,
            first_block: BlockId(u64_at(40)),
            block_count: u64_at(48),
            checksum: u64_at(56),
        };
        if info.block_count != workload.block_count() {
            return Err(Error::HeaderCorrupt("dataset manifest block count".into()));
        }
        Ok(info)
    }
}

const MANIFEST_BLOCK: BlockId = BlockId(0);

/// Generates the dataset for `(scale_factor, seed)` on a freshly formatted
/// engine: manifest in block 0, rows in blocks `1..=n`, then a checkpoint.
pub fn generate_dataset(engine: &Engine, scale_factor: f64, seed: u64) -> Result<DatasetInfo> {
    let workload = Workload::new(scale_factor, seed)?;
    let n = workload.block_count();
    let strategy = engine.strategy().as_ref();
    let mut state = engine.manager().lock();
    if state.max_block() != 0 {
        return Err(Error::InvalidArgument("device already holds data; format it first".into()));
    }
    if n + 1 > state.capacity_blocks() {
        return Err(Error::DeviceFull);
    }
    let _scope = enter_worker(strategy)?;
    let manifest_block = state.allocate_block()?;
    let first_block = state.allocate_block()?;
    let buf = engine.device().alloc_dma_buffer(BLOCK_SIZE as usize)?;
    let mut checksum = 0u64;
    for j in 0..n {
        let id = if j == 0 { first_block } else { state.allocate_block()? };
        debug_assert_eq!(id.0, first_block.0 + j);
        checksum = checksum.wrapping_add(buf.with_mut(|b| workload.fill_block(j, b)));
        strategy.write_block(id, &buf)?;
    }
    let info = DatasetInfo {
        workload,
        first_block,
        block_count: n,
        checksum,
    };
    buf.with_mut(|b| b.fill(0));
    buf.fill_from(&info.encode())?;
    strategy.write_block(manifest_block, &buf)?;
    checkpoint(&mut state, strategy)?;
    Ok(info)
}

fn read_manifest(strategy: &dyn IoStrategy) -> Result<DatasetInfo> {
    let buf = strategy.device().alloc_dma_buffer(BLOCK_SIZE as usize)?;
    strategy.read_block(MANIFEST_BLOCK, &buf)?;
    strategy.flush()?;
    buf.with(DatasetInfo::decode)
}

/// Reads the dataset manifest.
pub fn dataset_info(engine: &Engine) -> Result<DatasetInfo> {
    if engine.manager().lock().max_block() == 0 {
        return Err(Error::NoDataset);
    }
    let strategy = engine.strategy().as_ref();
    let _scope = enter_worker(strategy)?;
    read_manifest(strategy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanResult {
    /// Simulated time from reading the manifest to the last block folded.
    pub duration: Duration,
    /// Host wall-clock time of the same span.
    pub host_time: Duration,
    pub checksum: u64,
    pub blocks: u64,
    pub tasks: usize,
}

/// Contiguous `[start, end)` ranges of data-block indices, one per scan task.
pub fn scan_ranges(blocks: u64, workers: usize) -> Vec<(u64, u64)> {
    let size = blocks.div_ceil(4 * workers.max(1) as u64).max(1);
    (0..blocks)
        .step_by(size as usize)
        .map(|s| (s, (s + size).min(blocks)))
        .collect()
}

/// Scans the whole dataset on `workers` scheduler workers and checks the
/// folded checksum against the one recorded at generation.
pub fn run_scan(engine: &Engine, workers: usize) -> Result<ScanResult> {
    if engine.manager().lock().max_block() == 0 {
        return Err(Error::NoDataset);
    }
    let strategy = Arc::clone(engine.strategy());
    let clock = Arc::clone(engine.device().clock());
    let host_start = Instant::now();
    let start = clock.now();
    let info = {
        let _scope = enter_worker(strategy.as_ref())?;
        read_manifest(strategy.as_ref())?
    };
    let workload = info.workload;
    let sum = Arc::new(AtomicU64::new(0));
    let scheduler = Scheduler::with_clock(Arc::clone(&clock));
    let ranges = scan_ranges(info.block_count, workers);
    for &(a, b) in &ranges {
        let strategy = Arc::clone(&strategy);
        let sum = Arc::clone(&sum);
        let first = info.first_block.0;
        scheduler.submit_task(
            &[],
            Box::new(move || {
                let buf = strategy.device().alloc_dma_buffer(BLOCK_SIZE as usize)?;
                let mut partial = 0u64;
                for j in a..b {
                    strategy.read_block(BlockId(first + j), &buf)?;
                    let len = workload.block_payload_len(j);
                    partial = partial.wrapping_add(buf.with(|bytes| fold_words(&bytes[..len], j * WORDS_PER_BLOCK)));
                }
                sum.fetch_add(partial, Ordering::Relaxed);
                Ok(())
            }),
        )?;
    }
    scheduler.run_to_completion(workers, strategy.worker_hooks())?;
    strategy.flush()?;
    let checksum = sum.load(Ordering::Relaxed);
    let result = ScanResult {
        duration: clock.now() - start,
        host_time: host_start.elapsed(),
        checksum,
        blocks: info.block_count,
        tasks: ranges.len(),
    };
    if checksum != info.checksum {
        return Err(Error::DataCorruption {
            expected: info.checksum,
            actual: checksum,
        });
    }
    Ok(result)
}
