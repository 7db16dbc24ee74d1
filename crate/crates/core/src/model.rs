//! A scenario bundled with its trajectory-independent link tables.

use crate::caching::{cache_for, CacheError, CachePlan};
use crate::channel::{LinkGeometry, LinkRates};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub config: ScenarioConfig,
    pub geometry: LinkGeometry,
    pub rates: LinkRates,
    pub cache: CachePlan,
}

impl SystemModel {
    pub fn new(config: ScenarioConfig, cache: CachePlan) -> Self {
        let geometry = LinkGeometry::new(&config);
        let rates = LinkRates::new(&geometry, &config);
        Self {
            config,
            geometry,
            rates,
            cache,
        }
    }

    /// Uses the scenario's explicit cache pattern, or popularity placement.
    pub fn from_config(config: ScenarioConfig) -> Result<Self, CacheError> {
        let cache = cache_for(&config)?;
        Ok(Self::new(config, cache))
    }

    pub fn num_devices(&self) -> usize {
        self.config.num_devices()
    }

    pub fn num_frames(&self) -> usize {
        self.config.num_frames
    }
}
