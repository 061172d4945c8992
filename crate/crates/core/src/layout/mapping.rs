use crate::device::DeviceGeometry;
use crate::error::{Error, Result};

pub const HEADER_BLOCK_SIZE: u64 = 4096;
pub const HEADER_SLOTS: u64 = 3;
pub const BLOCK_SIZE: u64 = 256 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u64);

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One command-sized piece of a transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub start_lba: u64,
    pub lba_count: u64,
}

/// Contiguous, ascending, MDTS-bounded chunks that exactly tile a byte range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan(Vec<Chunk>);

impl ChunkPlan {
    pub fn chunks(&self) -> &[Chunk] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Chunk> {
        self.0.iter()
    }

    pub fn total_lbas(&self) -> u64 {
        self.0.iter().map(|c| c.lba_count).sum()
    }
}

/// Splits `[byte_offset, byte_offset + length)` into commands of MDTS bytes,
/// with a shorter final command when the length is not an MDTS multiple.
pub fn map_range_to_commands(byte_offset: u64, length: u64, geometry: &DeviceGeometry) -> Result<ChunkPlan> {
    let lba = geometry.lba_size();
    if length == 0 {
        return Err(Error::ZeroLength);
    }
    if !byte_offset.is_multiple_of(lba) || !length.is_multiple_of(lba) {
        return Err(Error::Unaligned {
            offset: byte_offset,
            length,
        });
    }
    if byte_offset
        .checked_add(length)
        .is_none_or(|end| end > geometry.capacity())
    {
        return Err(Error::RangeExceedsDevice {
            offset: byte_offset,
            length,
            capacity: geometry.capacity(),
        });
    }
    let per_command = geometry.mdts_lbas();
    let mut next = byte_offset / lba;
    let end = next + length / lba;
    let mut chunks = Vec::with_capacity(((end - next) / per_command + 1) as usize);
    while next < end {
        let count = per_command.min(end - next);
        chunks.push(Chunk {
            start_lba: next,
            lba_count: count,
        });
        next += count;
    }
    Ok(ChunkPlan(chunks))
}

/// First byte of the data region: the header slots rounded up to an MDTS
/// boundary, so every data block splits into whole MDTS commands.
pub fn data_region_base(geometry: &DeviceGeometry) -> u64 {
    (HEADER_SLOTS * HEADER_BLOCK_SIZE).next_multiple_of(geometry.mdts_bytes())
}

pub fn header_slot_offset(slot: u64) -> u64 {
    slot * HEADER_BLOCK_SIZE
}

/// Number of whole data blocks that fit after the header region.
pub fn usable_blocks(geometry: &DeviceGeometry) -> u64 {
    geometry.capacity().saturating_sub(data_region_base(geometry)) / BLOCK_SIZE
}

pub fn block_offset(block: BlockId, geometry: &DeviceGeometry) -> Result<u64> {
    let offset = block
        .0
        .checked_mul(BLOCK_SIZE)
        .and_then(|o| o.checked_add(data_region_base(geometry)))
        .ok_or(Error::BlockBeyondCapacity(block.0))?;
    if offset
        .checked_add(BLOCK_SIZE)
        .is_none_or(|end| end > geometry.capacity())
    {
        return Err(Error::BlockBeyondCapacity(block.0));
    }
    Ok(offset)
}
