use super::buffer::DmaBuffer;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Read,
    Write,
}

/// One read or write of at most MDTS bytes.
///
/// The transfer covers `lba_count` LBAs starting at `start_lba`, using the bytes
/// of `buffer` from `buffer_offset` on. `user_tag` is handed back unchanged in
/// the [`Completion`].
#[derive(Debug, Clone)]
pub struct NvmeCommand {
    pub opcode: Opcode,
    pub start_lba: u64,
    pub lba_count: u64,
    pub buffer: DmaBuffer,
    pub buffer_offset: usize,
    pub user_tag: u64,
}

impl NvmeCommand {
    pub fn read(start_lba: u64, lba_count: u64, buffer: DmaBuffer) -> Self {
        NvmeCommand {
            opcode: Opcode::Read,
            start_lba,
            lba_count,
            buffer,
            buffer_offset: 0,
            user_tag: 0,
        }
    }

    pub fn write(start_lba: u64, lba_count: u64, buffer: DmaBuffer) -> Self {
        NvmeCommand {
            opcode: Opcode::Write,
            ..Self::read(start_lba, lba_count, buffer)
        }
    }

    pub fn at_buffer_offset(mut self, offset: usize) -> Self {
        self.buffer_offset = offset;
        self
    }

    pub fn tagged(mut self, tag: u64) -> Self {
        self.user_tag = tag;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompletionStatus {
    Success,
    /// LBA range outside the namespace, or a transfer larger than MDTS.
    OutOfRange,
    /// Backing-store failure, a buffer too small for the transfer, or a crashed device.
    DeviceError,
}

impl CompletionStatus {
    pub fn is_success(self) -> bool {
        self == CompletionStatus::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub command_id: u64,
    pub status: CompletionStatus,
    pub user_tag: u64,
    pub completed_at: SimTime,
}

impl Completion {
    pub fn into_result(self) -> crate::Result<Completion> {
        if self.status.is_success() {
            Ok(self)
        } else {
            Err(crate::Error::CommandFailed {
                command_id: self.command_id,
                status: self.status,
            })
        }
    }
}
