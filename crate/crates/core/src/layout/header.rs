//! Header slot codec.
//!
//! Slot layout, little-endian:
//!
//! ```text
//! magic[4] = "DUCK" | u32 format_version | u64 max_block | u64 free_count
//! | free_count x u64 block id | u64 checksum of all preceding bytes
//! ```
//!
//! The rest of the 4096-byte slot is zero.

use std::collections::BTreeSet;

use super::mapping::{BlockId, HEADER_BLOCK_SIZE};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DUCK";
pub const FORMAT_VERSION: u32 = 1;

const FIXED_LEN: usize = 4 + 4 + 8 + 8;
/// Free-list entries that fit in one slot next to the fixed fields and checksum.
pub const MAX_FREE_ENTRIES: usize = (HEADER_BLOCK_SIZE as usize - FIXED_LEN - 8) / 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`.
pub fn header_checksum(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseHeader {
    pub format_version: u32,
    pub max_block: u64,
    pub free_list: BTreeSet<BlockId>,
}

impl DatabaseHeader {
    pub fn empty() -> Self {
        DatabaseHeader {
            format_version: FORMAT_VERSION,
            max_block: 0,
            free_list: BTreeSet::new(),
        }
    }

    pub fn serialized_len(&self) -> usize {
        FIXED_LEN + 8 * self.free_list.len() + 8
    }

    /// Serializes into a zero-padded header slot.
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.free_list.len() > MAX_FREE_ENTRIES {
            return Err(Error::HeaderOverflow(self.free_list.len()));
        }
        if let Some(bad) = self.free_list.iter().find(|b| b.0 >= self.max_block) {
            return Err(Error::BlockOutOfRange {
                block: bad.0,
                max_block: self.max_block,
            });
        }
        let mut out = Vec::with_capacity(HEADER_BLOCK_SIZE as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.max_block.to_le_bytes());
        out.extend_from_slice(&(self.free_list.len() as u64).to_le_bytes());
        for id in &self.free_list {
            out.extend_from_slice(&id.0.to_le_bytes());
        }
        let checksum = header_checksum(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out.resize(HEADER_BLOCK_SIZE as usize, 0);
        Ok(out)
    }

    /// Parses a header slot. The checksum is verified before the magic so any
    /// corruption of a written header reports as a checksum mismatch; a slot
    /// that was never written reports bad magic.
    pub fn decode(slot: &[u8]) -> Result<Self> {
        if slot.len() < FIXED_LEN + 8 {
            return Err(Error::HeaderCorrupt(format!("slot of {} bytes", slot.len())));
        }
        let magic: [u8; 4] = slot[0..4].try_into().expect("4 bytes");
        if slot.iter().all(|&b| b == 0) {
            return Err(Error::BadMagic(magic));
        }
        let u64_at = |at: usize| u64::from_le_bytes(slot[at..at + 8].try_into().expect("8 bytes"));
        let free_count = u64_at(16);
        if free_count > MAX_FREE_ENTRIES as u64 || FIXED_LEN + 8 * free_count as usize + 8 > slot.len() {
            return Err(Error::HeaderCorrupt(format!("free list length {free_count}")));
        }
        let body_len = FIXED_LEN + 8 * free_count as usize;
        let stored = u64_at(body_len);
        let computed = header_checksum(&slot[..body_len]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let format_version = u32::from_le_bytes(slot[4..8].try_into().expect("4 bytes"));
        if format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(format_version));
        }
        let max_block = u64_at(8);
        let mut free_list = BTreeSet::new();
        for i in 0..free_count as usize {
            let id = u64_at(FIXED_LEN + 8 * i);
            if id >= max_block || !free_list.insert(BlockId(id)) {
                return Err(Error::HeaderCorrupt(format!("free list entry {id}")));
            }
        }
        Ok(DatabaseHeader {
            format_version,
            max_block,
            free_list,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::btree_set;
    use proptest::prelude::*;

    fn header(max_block: u64, free: &[u64]) -> DatabaseHeader {
        DatabaseHeader {
            format_version: FORMAT_VERSION,
            max_block,
            free_list: free.iter().copied().map(BlockId).collect(),
        }
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(header_checksum(b""), 0xcbf29ce484222325);
        assert_eq!(header_checksum(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(header_checksum(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = header(5, &[1, 3]).encode().unwrap();
        assert_eq!(bytes.len(), 4096);
        assert_eq!(&bytes[0..4], b"DUCK");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &5u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1u64.to_le_bytes());
        assert_eq!(&bytes[32..40], &3u64.to_le_bytes());
        assert_eq!(&bytes[40..48], &header_checksum(&bytes[..40]).to_le_bytes());
        assert!(bytes[48..].iter().all(|&b| b == 0));
    }

    #[test]
    fn first_byte_corruption_is_a_checksum_mismatch() {
        let mut bytes = DatabaseHeader::empty().encode().unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(DatabaseHeader::decode(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn wrong_magic_with_valid_checksum() {
        let mut bytes = DatabaseHeader::empty().encode().unwrap();
        bytes[0..4].copy_from_slice(b"DUKC");
        let sum = header_checksum(&bytes[..24]);
        bytes[24..32].copy_from_slice(&sum.to_le_bytes());
        assert!(matches!(DatabaseHeader::decode(&bytes), Err(Error::BadMagic(m)) if &m == b"DUKC"));
    }

    #[test]
    fn blank_slot_is_bad_magic() {
        assert!(matches!(DatabaseHeader::decode(&[0u8; 4096]), Err(Error::BadMagic(_))));
    }

    #[test]
    fn overflow_and_range_checks() {
        let too_many: Vec<u64> = (0..MAX_FREE_ENTRIES as u64 + 1).collect();
        assert!(matches!(
            header(10_000, &too_many).encode(),
            Err(Error::HeaderOverflow(_))
        ));
        let fits: Vec<u64> = (0..MAX_FREE_ENTRIES as u64).collect();
        let h = header(10_000, &fits);
        assert_eq!(h.serialized_len(), 4096);
        assert_eq!(DatabaseHeader::decode(&h.encode().unwrap()).unwrap(), h);
        assert!(header(2, &[2]).encode().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(max_block in 1u64..10_000, ids in btree_set(0u64..10_000, 0..200)) {
            let free: Vec<u64> = ids.into_iter().filter(|&i| i < max_block).collect();
            let h = header(max_block, &free);
            prop_assert_eq!(DatabaseHeader::decode(&h.encode().unwrap()).unwrap(), h);
        }

        #[test]
        fn single_byte_corruption_detected(
            max_block in 1u64..1000,
            ids in btree_set(0u64..1000, 0..50),
            pos in any::<prop::sample::Index>(),
            flip in 1u8..=255,
        ) {
            let free: Vec<u64> = ids.into_iter().filter(|&i| i < max_block).collect();
            let h = header(max_block, &free);
            let mut bytes = h.encode().unwrap();
            let at = pos.index(h.serialized_len());
            bytes[at] ^= flip;
            prop_assert!(DatabaseHeader::decode(&bytes).is_err());
        }
    }
}
