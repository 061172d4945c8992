use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Error, Result};

struct Aligned {
    raw: Vec<u8>,
    offset: usize,
    len: usize,
}

/// A transfer buffer whose payload starts on an LBA boundary.
///
/// Cloning shares the allocation: a command keeps a clone so the device can
/// fill or drain it at completion time, after the submitting call returned.
#[derive(Clone)]
pub struct DmaBuffer {
    inner: Arc<Mutex<Aligned>>,
    len: usize,
    alignment: usize,
}

impl std::fmt::Debug for DmaBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DmaBuffer")
            .field("len", &self.len)
            .field("alignment", &self.alignment)
            .finish()
    }
}

impl DmaBuffer {
    /// Allocates `length` bytes rounded up to a multiple of `alignment`.
    pub fn new(length: usize, alignment: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidArgument("dma buffer length must be positive".into()));
        }
        if alignment == 0 || !alignment.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "dma alignment {alignment} must be a power of two"
            )));
        }
        let len = length
            .checked_next_multiple_of(alignment)
            .ok_or(Error::AllocationFailed(length))?;
        let mut raw = Vec::new();
        raw.try_reserve_exact(len + alignment)
            .map_err(|_| Error::AllocationFailed(len))?;
        raw.resize(len + alignment, 0);
        let offset = raw.as_ptr().align_offset(alignment);
        if offset >= alignment {
            return Err(Error::AllocationFailed(len));
        }
        Ok(DmaBuffer {
            inner: Arc::new(Mutex::new(Aligned { raw, offset, len })),
            len,
            alignment,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn alignment(&self) -> usize {
        self.alignment
    }

    fn guard(&self) -> MutexGuard<'_, Aligned> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Address of the first payload byte.
    pub fn payload_addr(&self) -> usize {
        let g = self.guard();
        g.raw[g.offset..].as_ptr() as usize
    }

    pub fn with<R>(&self, f: impl FnOnce(&[u8]) -> R) -> R {
        let g = self.guard();
        f(&g.raw[g.offset..g.offset + g.len])
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut [u8]) -> R) -> R {
        let mut g = self.guard();
        let (start, end) = (g.offset, g.offset + g.len);
        f(&mut g.raw[start..end])
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.with(<[u8]>::to_vec)
    }

    /// Copies `src` to the start of the payload.
    pub fn fill_from(&self, src: &[u8]) -> Result<()> {
        if src.len() > self.len {
            return Err(Error::BufferLength {
                expected: self.len,
                actual: src.len(),
            });
        }
        self.with_mut(|dst| dst[..src.len()].copy_from_slice(src));
        Ok(())
    }

    pub fn same_allocation(&self, other: &DmaBuffer) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}
