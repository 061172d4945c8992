use std::time::Duration;

use crate::error::{Error, Result};

pub const DEFAULT_LBA_SIZE: u64 = 512;
pub const DEFAULT_MDTS: u64 = 128 * 1024;

/// Addressing limits of a namespace. Every command must respect them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceGeometry {
    lba_size_bytes: u64,
    lba_count: u64,
    mdts_bytes: u64,
}

impl DeviceGeometry {
    pub fn new(lba_size_bytes: u64, lba_count: u64, mdts_bytes: u64) -> Result<Self> {
        if lba_size_bytes == 0 || lba_count == 0 || mdts_bytes == 0 {
            return Err(Error::InvalidGeometry(
                "lba size, lba count and mdts must be positive".into(),
            ));
        }
        if !lba_size_bytes.is_power_of_two() {
            return Err(Error::InvalidGeometry(format!(
                "lba size {lba_size_bytes} is not a power of two"
            )));
        }
        if !mdts_bytes.is_multiple_of(lba_size_bytes) {
            return Err(Error::InvalidGeometry(format!(
                "mdts {mdts_bytes} is not a multiple of lba size {lba_size_bytes}"
            )));
        }
        lba_count
            .checked_mul(lba_size_bytes)
            .ok_or_else(|| Error::InvalidGeometry("capacity overflows u64".into()))?;
        Ok(DeviceGeometry {
            lba_size_bytes,
            lba_count,
            mdts_bytes,
        })
    }

    /// Geometry for a device of `capacity_bytes`.
    pub fn for_capacity(capacity_bytes: u64, lba_size_bytes: u64, mdts_bytes: u64) -> Result<Self> {
        if lba_size_bytes == 0 {
            return Err(Error::InvalidGeometry("lba size must be positive".into()));
        }
        if !capacity_bytes.is_multiple_of(lba_size_bytes) {
            return Err(Error::CapacityUnaligned {
                capacity: capacity_bytes,
                lba_size: lba_size_bytes,
            });
        }
        Self::new(lba_size_bytes, capacity_bytes / lba_size_bytes, mdts_bytes)
    }

    pub fn lba_size(&self) -> u64 {
        self.lba_size_bytes
    }

    pub fn lba_count(&self) -> u64 {
        self.lba_count
    }

    pub fn mdts_bytes(&self) -> u64 {
        self.mdts_bytes
    }

    pub fn mdts_lbas(&self) -> u64 {
        self.mdts_bytes / self.lba_size_bytes
    }

    pub fn capacity(&self) -> u64 {
        self.lba_count * self.lba_size_bytes
    }
}

pub const DEFAULT_BASE_LATENCY: Duration = Duration::from_micros(80);
pub const DEFAULT_JITTER: Duration = Duration::from_micros(8);
/// Software-stack cost per command without NVMe passthrough.
pub const KERNEL_PATH_OVERHEAD: Duration = Duration::from_micros(10);
/// Software-stack cost per command with NVMe passthrough.
pub const PASSTHROUGH_OVERHEAD: Duration = Duration::from_micros(4);

/// Service-time model of the simulated device.
///
/// A command submitted at `t` completes at `t + per_command_overhead +
/// base_latency + U(-jitter_range, +jitter_range)`, where the jitter is drawn
/// from a generator seeded with `rng_seed` in submission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyModel {
    pub base_latency: Duration,
    pub jitter_range: Duration,
    pub per_command_overhead: Duration,
    pub rng_seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            base_latency: DEFAULT_BASE_LATENCY,
            jitter_range: DEFAULT_JITTER,
            per_command_overhead: KERNEL_PATH_OVERHEAD,
            rng_seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn passthrough(mut self, enabled: bool) -> Self {
        self.per_command_overhead = if enabled {
            PASSTHROUGH_OVERHEAD
        } else {
            KERNEL_PATH_OVERHEAD
        };
        self
    }

    pub fn with_jitter(mut self, jitter: Duration) -> Self {
        self.jitter_range = jitter;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lba_count_from_capacity() {
        let g = DeviceGeometry::for_capacity(64 << 20, 512, DEFAULT_MDTS).unwrap();
        assert_eq!(g.lba_count(), (64u64 << 20) / 512);
        assert_eq!(g.lba_count(), 131072);
        let g = DeviceGeometry::for_capacity(512, 512, 512).unwrap();
        assert_eq!(g.lba_count(), 1);
    }

    #[test]
    fn mdts_in_lbas() {
        let g = DeviceGeometry::for_capacity(1 << 20, 512, 128 * 1024).unwrap();
        assert_eq!(g.mdts_lbas(), 256);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            DeviceGeometry::for_capacity(1000, 512, DEFAULT_MDTS),
            Err(Error::CapacityUnaligned { .. })
        ));
        assert!(DeviceGeometry::new(512, 8, 1000).is_err());
        assert!(DeviceGeometry::new(512, 0, 512).is_err());
        assert!(DeviceGeometry::new(0, 8, 512).is_err());
    }
}
