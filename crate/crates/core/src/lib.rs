//! Block-storage engine that maps fixed-size database blocks straight onto the
//! LBA space of a simulated NVMe device.
//!
//! The crate is layered bottom-up:
//!
//! * [`sim`]: simulated time shared by the device and its driving threads.
//! * [`device`]: the simulated device: geometry, DMA buffers, synchronous
//!   commands and combined submission/completion queues.
//! * [`layout`]: header and data-block layout, block-manager metadata and the
//!   offset-to-command mapping.
//! * [`strategy`]: the five I/O disciplines that turn block reads and writes
//!   into device commands.
//! * [`scheduler`]: FIFO task scheduler with dependency tracking.
//! * [`bench`]: workload generation, scans, statistics and experiments.

pub mod bench;
pub mod device;
pub mod engine;
pub mod error;
pub mod layout;
pub mod scheduler;
pub mod sim;
pub mod strategy;

pub use engine::Engine;
pub use error::{Error, Result};
