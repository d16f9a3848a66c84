//! Safe load balancing for SD-WAN overlays.
//!
//! Deep-RL agents pick per-tunnel split ratios; a barrier-style safety layer
//! projects every proposed action onto the set of actions whose maximum link
//! utilization stays at or below one, during training and evaluation alike.

pub mod agents;
pub mod baseline;
pub mod cbf;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod topo;
pub mod traffic;

pub use agents::{Agent, Algo, DdpgConfig, PpoConfig};
pub use baseline::{BaselineConfig, BaselineSolution};
pub use cbf::{CbfConfig, CbfPolicy, ProjectionResult, Projector};
pub use env::{Environment, RewardConfig, SplitAction, StepOutcome};
pub use error::{Error, Result};
pub use harness::RunConfig;
pub use topo::{build_hub_spoke, OverlayNetwork};
pub use traffic::{DemandVector, TrafficConfig};
