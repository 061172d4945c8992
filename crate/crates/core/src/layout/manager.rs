use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};

use super::header::DatabaseHeader;
use super::mapping::{data_region_base, header_slot_offset, usable_blocks, BlockId, BLOCK_SIZE, HEADER_BLOCK_SIZE, HEADER_SLOTS};
use crate::device::{Device, NvmeCommand};
use crate::error::{Error, Result};
use crate::strategy::IoStrategy;
use crate::device::DmaBuffer;

/// Block-manager metadata. Callers serialize access through
/// [`BlockManager::lock`] (the block lock).
#[derive(Debug, Clone)]
pub struct BlockManagerState {
    free_list: BTreeSet<BlockId>,
    modified_blocks: BTreeSet<BlockId>,
    max_block: u64,
    capacity_blocks: u64,
    dirty: BTreeMap<BlockId, DmaBuffer>,
}

impl BlockManagerState {
    pub fn new(capacity_blocks: u64) -> Self {
        BlockManagerState {
            free_list: BTreeSet::new(),
            modified_blocks: BTreeSet::new(),
            max_block: 0,
            capacity_blocks,
            dirty: BTreeMap::new(),
        }
    }

    pub fn from_header(header: &DatabaseHeader, capacity_blocks: u64) -> Result<Self> {
        if header.max_block > capacity_blocks {
            return Err(Error::HeaderCorrupt(format!(
                "max_block {} exceeds device capacity of {capacity_blocks} blocks",
                header.max_block
            )));
        }
        Ok(BlockManagerState {
            free_list: header.free_list.clone(),
            max_block: header.max_block,
            ..Self::new(capacity_blocks)
        })
    }

    pub fn free_list(&self) -> &BTreeSet<BlockId> {
        &self.free_list
    }

    pub fn modified_blocks(&self) -> &BTreeSet<BlockId> {
        &self.modified_blocks
    }

    pub fn max_block(&self) -> u64 {
        self.max_block
    }

    pub fn capacity_blocks(&self) -> u64 {
        self.capacity_blocks
    }

    pub fn dirty_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.dirty.keys().copied()
    }

    /// Blocks below `max_block` that are neither free nor pending release.
    pub fn live_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        (0..self.max_block)
            .map(BlockId)
            .filter(|b| !self.free_list.contains(b) && !self.modified_blocks.contains(b))
    }

    /// Smallest free id, or a fresh id past `max_block`.
    pub fn allocate_block(&mut self) -> Result<BlockId> {
        if let Some(id) = self.free_list.pop_first() {
            return Ok(id);
        }
        if self.max_block >= self.capacity_blocks {
            return Err(Error::DeviceFull);
        }
        let id = BlockId(self.max_block);
        self.max_block += 1;
        Ok(id)
    }

    fn check_range(&self, id: BlockId) -> Result<()> {
        if id.0 >= self.max_block {
            return Err(Error::BlockOutOfRange {
                block: id.0,
                max_block: self.max_block,
            });
        }
        Ok(())
    }

    pub fn free_block(&mut self, id: BlockId) -> Result<()> {
        self.check_range(id)?;
        if self.free_list.contains(&id) || self.modified_blocks.contains(&id) {
            return Err(Error::DoubleFree(id.0));
        }
        self.dirty.remove(&id);
        self.free_list.insert(id);
        Ok(())
    }

    /// Queues `id` for release at the next checkpoint.
    pub fn mark_modified(&mut self, id: BlockId) -> Result<()> {
        self.check_range(id)?;
        if self.free_list.contains(&id) || self.modified_blocks.contains(&id) {
            return Err(Error::DoubleFree(id.0));
        }
        self.modified_blocks.insert(id);
        Ok(())
    }

    /// Records a block payload to be written at the next checkpoint.
    pub fn stage_write(&mut self, id: BlockId, payload: DmaBuffer) -> Result<()> {
        self.check_range(id)?;
        if self.free_list.contains(&id) {
            return Err(Error::InvalidArgument(format!("block {id} is free")));
        }
        if payload.len() != BLOCK_SIZE as usize {
            return Err(Error::BufferLength {
                expected: BLOCK_SIZE as usize,
                actual: payload.len(),
            });
        }
        self.dirty.insert(id, payload);
        Ok(())
    }

    /// The header a checkpoint of this state persists.
    pub fn checkpoint_header(&self) -> DatabaseHeader {
        DatabaseHeader {
            max_block: self.max_block,
            free_list: self.free_list.union(&self.modified_blocks).copied().collect(),
            ..DatabaseHeader::empty()
        }
    }
}

fn write_header_slots_sync(device: &Device, header: &DatabaseHeader) -> Result<()> {
    let bytes = header.encode()?;
    let buf = device.alloc_dma_buffer(HEADER_BLOCK_SIZE as usize)?;
    buf.fill_from(&bytes)?;
    let lbas = HEADER_BLOCK_SIZE / device.geometry().lba_size();
    for slot in 0..HEADER_SLOTS {
        let lba = header_slot_offset(slot) / device.geometry().lba_size();
        device.sync_command(&NvmeCommand::write(lba, lbas, buf.clone()))?.into_result()?;
    }
    Ok(())
}

/// Writes a fresh header to all three slots and returns an empty state.
pub fn format_device(device: &Device) -> Result<BlockManagerState> {
    let g = device.geometry();
    let required = data_region_base(&g) + BLOCK_SIZE;
    if g.capacity() < required {
        return Err(Error::DeviceTooSmall {
            capacity: g.capacity(),
            required,
        });
    }
    write_header_slots_sync(device, &DatabaseHeader::empty())?;
    Ok(BlockManagerState::new(usable_blocks(&g)))
}

/// Reads and verifies header slot 0.
pub fn load_header(device: &Device) -> Result<DatabaseHeader> {
    let buf = device.alloc_dma_buffer(HEADER_BLOCK_SIZE as usize)?;
    let lbas = HEADER_BLOCK_SIZE / device.geometry().lba_size();
    device.sync_command(&NvmeCommand::read(0, lbas, buf.clone()))?.into_result()?;
    buf.with(DatabaseHeader::decode)
}

pub fn load_state(device: &Device) -> Result<BlockManagerState> {
    let header = load_header(device)?;
    BlockManagerState::from_header(&header, usable_blocks(&device.geometry()))
}

/// Persists `state`: dirty blocks are written and drained first, then header
/// slot 0, then its two copies. Only after the header is durable are modified
/// blocks released into the free list. Any I/O error aborts the checkpoint and
/// leaves `state` untouched; an error before the slot-0 write leaves the
/// previous header in place.
pub fn checkpoint(state: &mut BlockManagerState, strategy: &dyn IoStrategy) -> Result<()> {
    for (id, payload) in &state.dirty {
        strategy.write_block(*id, payload)?;
    }
    strategy.flush()?;

    let header = state.checkpoint_header();
    let bytes = header.encode()?;
    let buf = strategy.device().alloc_dma_buffer(HEADER_BLOCK_SIZE as usize)?;
    buf.fill_from(&bytes)?;
    strategy.write_at(header_slot_offset(0), &buf)?;
    strategy.flush()?;
    for slot in 1..HEADER_SLOTS {
        strategy.write_at(header_slot_offset(slot), &buf)?;
    }
    strategy.flush()?;

    state.free_list = header.free_list;
    state.modified_blocks.clear();
    state.dirty.clear();
    Ok(())
}

/// Block-manager metadata behind the block lock, bound to a device and strategy.
pub struct BlockManager {
    strategy: Arc<dyn IoStrategy>,
    state: Mutex<BlockManagerState>,
}

impl BlockManager {
    pub fn new(strategy: Arc<dyn IoStrategy>, state: BlockManagerState) -> Self {
        BlockManager {
            strategy,
            state: Mutex::new(state),
        }
    }

    /// Loads the header from the strategy's device.
    pub fn open(strategy: Arc<dyn IoStrategy>) -> Result<Self> {
        let state = load_state(strategy.device())?;
        Ok(Self::new(strategy, state))
    }

    pub fn strategy(&self) -> &Arc<dyn IoStrategy> {
        &self.strategy
    }

    /// Acquires the block lock.
    pub fn lock(&self) -> MutexGuard<'_, BlockManagerState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn checkpoint(&self) -> Result<()> {
        let mut state = self.lock();
        checkpoint(&mut state, self.strategy.as_ref())
    }
}
