//! On-device layout: three 4096-byte header slots, then 256 KiB data blocks
//! starting at the first MDTS boundary after the headers.

mod header;
mod manager;
mod mapping;

pub use header::{header_checksum, DatabaseHeader, FORMAT_VERSION, MAGIC, MAX_FREE_ENTRIES};
pub use manager::{checkpoint, format_device, load_header, load_state, BlockManager, BlockManagerState};
pub use mapping::{
    block_offset, data_region_base, header_slot_offset, map_range_to_commands, usable_blocks, BlockId,
    Chunk, ChunkPlan, BLOCK_SIZE, HEADER_BLOCK_SIZE, HEADER_SLOTS,
};
