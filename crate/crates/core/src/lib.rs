//! System model and optimizer for a cache-assisted space-air-ground MEC
//! network serving extended-reality devices.
//!
//! A fixed-wing UAV and a LEO satellite both host edge servers. Devices
//! upload shared and private task data each frame; the LEO caches popular
//! shared results. The optimizer maximizes delivered bits per joule of UAV
//! propulsion energy over the trajectory, the bit allocation and the
//! offloading decisions.

pub mod caching;
pub mod channel;
pub mod energy;
pub mod experiments;
pub mod geometry;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod scenario;

pub use model::SystemModel;
pub use optimizer::{alternating_optimize, AllocationPlan, OptimizerSettings, Scheme, SolveReport};
pub use scenario::{default_scenario, ScenarioConfig};
