use std::sync::Arc;
use std::time::Duration;

use super::{plan_commands, HostCosts, IoStrategy, StrategyKind};
use crate::device::{Device, DmaBuffer, Opcode, KERNEL_PATH_OVERHEAD};
use crate::error::Result;
use crate::layout::map_range_to_commands;

/// Buffered file I/O against the device's backing store, the way an engine
/// on a regular file system would do it. Each call pays a syscall plus one
/// kernel-mediated device command per MDTS chunk, issued back to back.
pub struct FileBaseline {
    device: Arc<Device>,
    costs: HostCosts,
}

impl FileBaseline {
    pub fn new(device: Arc<Device>, costs: HostCosts) -> Self {
        FileBaseline { device, costs }
    }

    fn transfer(&self, opcode: Opcode, offset: u64, buf: &DmaBuffer) -> Result<()> {
        let plan = map_range_to_commands(offset, buf.len() as u64, &self.device.geometry())?;
        let mut cost = self.costs.file_syscall;
        for _ in plan.iter() {
            let (_, service) = self.device.sample_latency();
            cost += KERNEL_PATH_OVERHEAD + service;
        }
        self.device.clock().advance_by(cost);
        buf.with_mut(|b| self.device.host_io(opcode, offset, b))
    }

    /// Simulated cost of one call covering `commands` device commands, at
    /// zero jitter.
    pub fn nominal_cost(&self, commands: u32) -> Duration {
        self.costs.file_syscall + (KERNEL_PATH_OVERHEAD + self.device.latency_model().base_latency) * commands
    }
}

impl IoStrategy for FileBaseline {
    fn kind(&self) -> StrategyKind {
        StrategyKind::FileBaseline
    }

    fn device(&self) -> &Arc<Device> {
        &self.device
    }

    fn read_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Read, offset, buf)
    }

    fn write_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Write, offset, buf)
    }

    fn flush(&self) -> Result<()> {
        Ok(())
    }
}

/// One synchronous device command per MDTS chunk, in address order.
pub struct SyncDirect {
    device: Arc<Device>,
}

impl SyncDirect {
    pub fn new(device: Arc<Device>) -> Self {
        SyncDirect { device }
    }

    fn transfer(&self, opcode: Opcode, offset: u64, buf: &DmaBuffer) -> Result<()> {
        for cmd in plan_commands(&self.device, opcode, offset, buf, 0)? {
            self.device.sync_command(&cmd)?.into_result()?;
        }
        Ok(())
    }
}

impl IoStrategy for SyncDirect {
    fn kind(&self) -> StrategyKind {
        StrategyKind::SyncDirect
    }

    fn device(&self) -> &Arc<Device> {
        &self.device
    }

    fn read_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Read, offset, buf)
    }

    fn write_at(&self, offset: u64, buf: &DmaBuffer) -> Result<()> {
        self.transfer(Opcode::Write, offset, buf)
    }

    fn flush(&self) -> Result<()> {
        Ok(())
    }
}
