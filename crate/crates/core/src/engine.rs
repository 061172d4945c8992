use std::sync::Arc;

use crate::device::Device;
use crate::error::Result;
use crate::layout::{format_device, BlockManager};
use crate::strategy::{build_strategy, IoStrategy, StrategyConfig};

/// A device, the I/O strategy chosen for it, and its block manager.
pub struct Engine {
    device: Arc<Device>,
    config: StrategyConfig,
    manager: BlockManager,
}

impl Engine {
    /// Opens a formatted device; fails with the header error otherwise.
    pub fn open(device: Arc<Device>, config: StrategyConfig) -> Result<Self> {
        let strategy = build_strategy(&device, &config)?;
        let manager = BlockManager::open(strategy)?;
        Ok(Engine {
            device,
            config,
            manager,
        })
    }

    /// Formats `device` and opens it.
    pub fn format(device: Arc<Device>, config: StrategyConfig) -> Result<Self> {
        let state = format_device(&device)?;
        let strategy = build_strategy(&device, &config)?;
        Ok(Engine {
            device,
            config,
            manager: BlockManager::new(strategy, state),
        })
    }

    pub fn device(&self) -> &Arc<Device> {
        &self.device
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn strategy(&self) -> &Arc<dyn IoStrategy> {
        self.manager.strategy()
    }

    pub fn manager(&self) -> &BlockManager {
        &self.manager
    }
}
