//! Actor-critic agents over per-tunnel split ratios.
//!
//! Both agents map the normalized demand vector to one logit per
//! (tunnel, path) and turn logits into splits with a per-tunnel softmax.

mod ddpg;
mod ppo;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ddpg::{DdpgAgent, DdpgConfig, DdpgDiagnostics};
pub use ppo::{gaussian_log_prob, PpoAgent, PpoConfig, PpoDiagnostics};

use crate::env::SplitAction;
use crate::error::{ensure_len, Error, Result};
use crate::topo::OverlayNetwork;
use crate::traffic::DemandVector;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// One stored transition. `raw_*` describe the policy's proto-action;
/// `deployed_action` is what the environment actually received.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: DemandVector,
    pub deployed_action: SplitAction,
    pub raw_action: SplitAction,
    pub raw_logits: Vec<f64>,
    pub log_prob: Option<f64>,
    pub reward: f64,
    pub next_state: DemandVector,
    pub done: bool,
}

/// Output of [`Agent::act`].
#[derive(Clone, Debug, PartialEq)]
pub struct Act {
    pub logits: Vec<f64>,
    pub action: SplitAction,
    pub log_prob: Option<f64>,
}

/// Fixed-capacity ring of experiences.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            items: Vec::new(),
            capacity,
            next: 0,
        })
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `batch` distinct experiences drawn uniformly.
    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Experience>> {
        if batch > self.items.len() {
            return Err(Error::InsufficientData(format!(
                "replay buffer holds {} experiences, batch needs {batch}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Demand scaled elementwise by `1 / scale`.
pub fn normalize_state(demand: &DemandVector, scale: f64) -> Vec<f64> {
    demand.demands.iter().map(|d| d / scale).collect()
}

/// Capacity of the first edge on tunnel 0's first path; on hub-spoke
/// overlays this is the HQ Internet port.
pub fn default_state_scale(net: &OverlayNetwork) -> f64 {
    net.edges()[net.tunnels()[0].paths[0][0]].capacity
}

/// Per-tunnel softmax of `logits` laid out by `offsets`.
pub fn softmax_segments(logits: &[f64], offsets: &[usize]) -> Vec<f64> {
    let mut out = logits.to_vec();
    for w in offsets.windows(2) {
        let seg = &mut out[w[0]..w[1]];
        let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in seg.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        seg.iter_mut().for_each(|x| *x /= sum);
    }
    out
}

fn softmax_rows(logits: &Array2<f64>, offsets: &[usize]) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let s = softmax_segments(row.as_slice().unwrap(), offsets);
        row.as_slice_mut().unwrap().copy_from_slice(&s);
    }
    out
}

/// Backpropagates `grad` (dL/dsplits) through the per-tunnel softmax whose
/// outputs are `probs`.
fn softmax_backward(probs: ArrayView2<f64>, grad: ArrayView2<f64>, offsets: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, g), mut o) in probs.rows().into_iter().zip(grad.rows()).zip(out.rows_mut()) {
        for w in offsets.windows(2) {
            let dot: f64 = (w[0]..w[1]).map(|i| p[i] * g[i]).sum();
            for i in w[0]..w[1] {
                o[i] = p[i] * (g[i] - dot);
            }
        }
    }
    out
}

fn action_from_logits(logits: &[f64], offsets: &[usize]) -> Result<SplitAction> {
    let ratios = softmax_segments(logits, offsets);
    SplitAction::new(
        offsets
            .windows(2)
            .map(|w| ratios[w[0]..w[1]].to_vec())
            .collect(),
    )
}

fn states_matrix<'a, I>(states: I, n: usize, width: usize, scale: f64) -> Result<Array2<f64>>
where
    I: IntoIterator<Item = &'a DemandVector>,
{
    let mut flat = Vec::with_capacity(n * width);
    for s in states {
        ensure_len("state", width, s.len())?;
        flat.extend(s.demands.iter().map(|d| d / scale));
    }
    Ok(Array2::from_shape_vec((n, width), flat).unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ddpg,
    Ppo,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Ddpg => "ddpg",
            Algo::Ppo => "ppo",
        })
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpg" => Ok(Algo::Ddpg),
            "ppo" => Ok(Algo::Ppo),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm `{s}` (expected ddpg or ppo)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum Agent {
    Ddpg(DdpgAgent),
    Ppo(PpoAgent),
}

impl Agent {
    pub fn algo(&self) -> Algo {
        match self {
            Agent::Ddpg(_) => Algo::Ddpg,
            Agent::Ppo(_) => Algo::Ppo,
        }
    }

    pub fn act(&mut self, state: &DemandVector, explore: bool) -> Result<Act> {
        match self {
            Agent::Ddpg(a) => a.act(state, explore),
            Agent::Ppo(a) => a.act(state, explore),
        }
    }

    pub fn offsets(&self) -> &[usize] {
        match self {
            Agent::Ddpg(a) => a.offsets(),
            Agent::Ppo(a) => a.offsets(),
        }
    }

    /// Fails unless the agent was built for `net`'s tunnel/path layout.
    pub fn check_network(&self, net: &OverlayNetwork) -> Result<()> {
        if self.offsets() != net.offsets() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint expects path offsets {:?}, topology has {:?}",
                self.offsets(),
                net.offsets()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            agent: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let found = serde_json::from_str::<Version>(&text)?.schema_version;
        if found != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                found,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let file: Checkpoint = serde_json::from_str(&text)?;
        Ok(file.agent)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    agent: Agent,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn exp(t: u64) -> Experience {
        let a = SplitAction::new(vec![vec![0.5, 0.5]]).unwrap();
        Experience {
            state: DemandVector::new(t, vec![1.0]).unwrap(),
            deployed_action: a.clone(),
            raw_action: a,
            raw_logits: vec![0.0, 0.0],
            log_prob: None,
            reward: -(t as f64),
            next_state: DemandVector::new(t + 1, vec![1.0]).unwrap(),
            done: false,
        }
    }

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for t in 0..5 {
            b.push(exp(t));
        }
        assert_eq!(b.len(), 3);
        let mut ts: Vec<u64> = b.items.iter().map(|e| e.state.t).collect();
        ts.sort();
        assert_eq!(ts, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for t in 0..50 {
            b.push(exp(t));
        }
        let mut r = rng::keyed(&[1]);
        let mut ts: Vec<u64> = b.sample(&mut r, 50).unwrap().iter().map(|e| e.state.t).collect();
        ts.sort();
        assert_eq!(ts, (0..50).collect::<Vec<_>>());
        assert!(b.sample(&mut r, 51).is_err());
    }

    #[test]
    fn normalize_state_cases() {
        let z = DemandVector::zeros(0, 3);
        assert_eq!(normalize_state(&z, 15.0), vec![0.0; 3]);
        let d = DemandVector::new(0, vec![15.0, 15.0]).unwrap();
        assert_eq!(normalize_state(&d, 15.0), vec![1.0, 1.0]);
        let d = DemandVector::new(0, vec![0.3, 7.1, 2.9]).unwrap();
        for (x, y) in normalize_state(&d, 15.0).iter().zip(&d.demands) {
            assert!((x * 15.0 - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let s = softmax_segments(&[0.0, 0.0, 3.0, 3.0, 3.0], &[0, 2, 5]);
        assert_eq!(&s[..2], &[0.5, 0.5]);
        for x in &s[2..] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = softmax_segments(&[1000.0, -1000.0], &[0, 2]);
        assert_eq!(big, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_backward_matches_finite_difference() {
        let offsets = [0, 2, 5];
        let z = [0.3, -1.2, 0.5, 0.1, 2.0];
        let g = [1.0, -0.5, 0.25, 2.0, -1.0];
        let f = |z: &[f64]| -> f64 { softmax_segments(z, &offsets).iter().zip(&g).map(|(a, b)| a * b).sum() };
        let p = Array2::from_shape_vec((1, 5), softmax_segments(&z, &offsets)).unwrap();
        let gv = Array2::from_shape_vec((1, 5), g.to_vec()).unwrap();
        let analytic = softmax_backward(p.view(), gv.view(), &offsets);
        for i in 0..5 {
            let mut up = z;
            up[i] += 1e-6;
            let mut dn = z;
            dn[i] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - analytic[[0, i]]).abs() < 1e-8);
        }
    }

    #[test]
    fn algo_parsing() {
        assert_eq!("PPO".parse::<Algo>().unwrap(), Algo::Ppo);
        assert_eq!("ddpg".parse::<Algo>().unwrap(), Algo::Ddpg);
        assert!("td3".parse::<Algo>().is_err());
    }
}
