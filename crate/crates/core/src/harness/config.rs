use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{default_state_scale, Agent, Algo, DdpgAgent, DdpgConfig, PpoAgent, PpoConfig};
use crate::baseline::BaselineConfig;
use crate::cbf::CbfConfig;
use crate::env::RewardConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::topo::{HubSpoke, OverlayNetwork, DEFAULT_CORE_FACTOR, DEFAULT_PROP_DELAY};
use crate::traffic::{generate, DemandVector, TrafficConfig};

const TEST_TRACE_TAG: u64 = 0x7465_7374;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubSpokeConfig {
    pub branches: usize,
    pub internet_capacity: f64,
    pub mpls_capacity: f64,
    pub prop_delay: f64,
    pub core_factor: f64,
}

impl Default for HubSpokeConfig {
    fn default() -> Self {
        Self {
            branches: 3,
            internet_capacity: 15.0,
            mpls_capacity: 6.0,
            prop_delay: DEFAULT_PROP_DELAY,
            core_factor: DEFAULT_CORE_FACTOR,
        }
    }
}

/// Everything a training or evaluation run needs. Loaded from TOML; every
/// field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Topology file; when absent the `hub_spoke` section builds one.
    pub topology: Option<PathBuf>,
    pub hub_spoke: HubSpokeConfig,
    pub algo: Algo,
    pub seed: u64,
    pub total_steps: u64,
    /// When set, overrides `total_steps` with `episodes * episode_len`.
    pub episodes: Option<u64>,
    pub episode_len: usize,
    pub update_every: u64,
    /// Periodic checkpoint interval in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub eval_trace_len: usize,
    /// Demand divisor for the network input; defaults to the capacity of
    /// the first port on tunnel 0's first path.
    pub state_scale: Option<f64>,
    /// Disables the safety projection entirely.
    pub cbf_enabled: bool,
    pub output_dir: PathBuf,
    pub traffic: TrafficConfig,
    pub reward: RewardConfig,
    pub cbf: CbfConfig,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: None,
            hub_spoke: HubSpokeConfig::default(),
            algo: Algo::Ppo,
            seed: 0,
            total_steps: 50_000,
            episodes: None,
            episode_len: 128,
            update_every: 256,
            checkpoint_every: 10_000,
            eval_trace_len: 100,
            state_scale: None,
            cbf_enabled: true,
            output_dir: PathBuf::from("runs/default"),
            traffic: TrafficConfig::default(),
            reward: RewardConfig::default(),
            cbf: CbfConfig::default(),
            ppo: PpoConfig::default(),
            ddpg: DdpgConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn steps(&self) -> u64 {
        self.episodes.map_or(self.total_steps, |e| e * self.episode_len as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.episode_len == 0 {
            return bad("episode_len must be >= 1".into());
        }
        if self.update_every == 0 {
            return bad("update_every must be >= 1".into());
        }
        if self.steps() < self.update_every {
            return bad(format!("total steps {} below update_every {}", self.steps(), self.update_every));
        }
        if self.eval_trace_len == 0 {
            return bad("eval_trace_len must be >= 1".into());
        }
        if let Some(s) = self.state_scale {
            if !(s > 0.0) {
                return bad(format!("state_scale {s} must be > 0"));
            }
        }
        if self.algo == Algo::Ppo && self.ppo.rollout as u64 != self.update_every {
            return bad(format!(
                "ppo rollout {} must equal update_every {}",
                self.ppo.rollout, self.update_every
            ));
        }
        self.reward.validate()?;
        self.cbf.validate()?;
        self.ppo.validate()?;
        self.ddpg.validate()?;
        self.baseline.validate()
    }

    pub fn network(&self) -> Result<Arc<OverlayNetwork>> {
        let net = match &self.topology {
            Some(p) => OverlayNetwork::load(p)?,
            None => {
                let h = &self.hub_spoke;
                HubSpoke {
                    core_factor: h.core_factor,
                    ..HubSpoke::new(h.branches, h.internet_capacity, h.mpls_capacity, h.prop_delay)
                }
                .build()?
            }
        };
        self.traffic.validate(net.tunnel_count())?;
        Ok(Arc::new(net))
    }

    pub fn state_scale_for(&self, net: &OverlayNetwork) -> f64 {
        self.state_scale.unwrap_or_else(|| default_state_scale(net))
    }

    pub fn new_agent(&self, net: &OverlayNetwork) -> Result<Agent> {
        let scale = self.state_scale_for(net);
        Ok(match self.algo {
            Algo::Ppo => Agent::Ppo(PpoAgent::new(net, self.ppo.clone(), scale, self.seed)?),
            Algo::Ddpg => {
                let mut cfg = self.ddpg.clone();
                cfg.anneal_steps = self.steps();
                Agent::Ddpg(DdpgAgent::new(net, cfg, scale, self.seed)?)
            }
        })
    }

    /// Held-out evaluation trace: an independent noise stream sampled at
    /// evenly spaced steps across one traffic period.
    pub fn test_trace(&self, n_tunnels: usize) -> Vec<DemandVector> {
        let traffic = TrafficConfig {
            seed: rng::mix(&[self.traffic.seed, TEST_TRACE_TAG]),
            ..self.traffic.clone()
        };
        let stride = (self.traffic.period / self.eval_trace_len as u64).max(1);
        (0..self.eval_trace_len as u64)
            .map(|i| generate(&traffic, n_tunnels, i * stride))
            .collect()
    }
}
