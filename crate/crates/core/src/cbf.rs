//! Safety projection by stochastic local search.
//!
//! A proto-action whose MLU exceeds one is replaced by the feasible candidate
//! closest to it in L1 distance. Candidates are random perturbations of a
//! search center produced by one of three generation policies. The center
//! starts at the proto-action; after a batch with no feasible candidate it
//! moves to the lowest-MLU candidate seen so far, which lets the search reach
//! beyond a single radius. If nothing feasible turns up, the lowest-MLU point
//! (never worse than the proto-action) is returned.
//!
//! Candidate `(m, n)` draws from its own keyed random stream and the batch
//! reduction is index-ordered, so results do not depend on the worker count.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{l1, mlu_of_loads, normalize_in_place, offered_loads_into, path_utilizations, SplitAction};
use crate::error::{ensure_len, Error, Result};
use crate::rng;
use crate::topo::OverlayNetwork;
use crate::traffic::DemandVector;

const CANDIDATE_STREAM: u64 = 0x6362_665f_6361_6e64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CbfPolicy {
    /// Perturb one random tunnel.
    Naive,
    /// Perturb one random tunnel among those with unbalanced path utilization.
    DeltaUtil,
    /// Perturb every tunnel that has a path at or above full utilization.
    MaxUtil,
}

impl fmt::Display for CbfPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CbfPolicy::Naive => "naive",
            CbfPolicy::DeltaUtil => "deltautil",
            CbfPolicy::MaxUtil => "maxutil",
        })
    }
}

impl FromStr for CbfPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(CbfPolicy::Naive),
            "deltautil" => Ok(CbfPolicy::DeltaUtil),
            "maxutil" => Ok(CbfPolicy::MaxUtil),
            other => Err(Error::InvalidConfig(format!("unknown CBF policy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfConfig {
    /// Upper bound of the uniform perturbation size.
    pub radius: f64,
    /// Candidates per search batch.
    pub candidates_per_iter: usize,
    /// Maximum number of batches.
    pub max_iters: usize,
    pub policy: CbfPolicy,
    /// Minimum utilization gap between a tunnel's hottest and coolest path
    /// for it to be eligible under [`CbfPolicy::DeltaUtil`].
    pub delta_util_threshold: f64,
    pub seed: u64,
    /// Worker threads for candidate evaluation; 0 uses every available core.
    pub workers: usize,
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self {
            radius: 0.3,
            candidates_per_iter: 1000,
            max_iters: 20,
            policy: CbfPolicy::MaxUtil,
            delta_util_threshold: 0.5,
            seed: 0,
            workers: 0,
        }
    }
}

impl CbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius <= 1.0) {
            return Err(Error::InvalidConfig(format!("CBF radius {} outside (0, 1]", self.radius)));
        }
        if self.candidates_per_iter == 0 || self.max_iters == 0 {
            return Err(Error::InvalidConfig("CBF candidates and iterations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.delta_util_threshold) {
            return Err(Error::InvalidConfig(format!(
                "DeltaUtil threshold {} outside [0, 1]",
                self.delta_util_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub action: SplitAction,
    pub was_safe_input: bool,
    pub feasible_found: bool,
    pub candidates_evaluated: usize,
    /// L1 distance between the returned action and the proto-action.
    pub l1_distance: f64,
    pub proto_mlu: f64,
    pub mlu: f64,
}

/// Search state shared by every candidate of one batch: the center and the
/// per-path utilizations it induces.
pub struct Neighborhood<'a> {
    net: &'a OverlayNetwork,
    center: &'a [f64],
    path_util: Vec<f64>,
    radius: f64,
    unbalanced: Vec<usize>,
    congested: Vec<usize>,
}

impl<'a> Neighborhood<'a> {
    pub fn new(net: &'a OverlayNetwork, demands: &[f64], center: &'a [f64], radius: f64, delta_threshold: f64) -> Self {
        let mut loads = vec![0.0; net.edge_count()];
        offered_loads_into(net, demands, center, &mut loads);
        let path_util = path_utilizations(net, &loads);
        let mut unbalanced = Vec::new();
        let mut congested = Vec::new();
        for k in 0..net.tunnel_count() {
            let u = &path_util[net.path_range(k)];
            let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi - lo > delta_threshold {
                unbalanced.push(k);
            }
            if hi >= 1.0 {
                congested.push(k);
            }
        }
        Self {
            net,
            center,
            path_util,
            radius,
            unbalanced,
            congested,
        }
    }

    pub fn path_utilization(&self) -> &[f64] {
        &self.path_util
    }

    /// Tunnels eligible under DeltaUtil.
    pub fn unbalanced_tunnels(&self) -> &[usize] {
        &self.unbalanced
    }

    /// Tunnels eligible under MaxUtil.
    pub fn congested_tunnels(&self) -> &[usize] {
        &self.congested
    }

    /// Flat index of tunnel `k`'s most utilized path (lowest index on ties).
    pub fn hottest_path(&self, k: usize) -> usize {
        let r = self.net.path_range(k);
        let mut best = r.start;
        for p in r {
            if self.path_util[p] > self.path_util[best] {
                best = p;
            }
        }
        best
    }

    /// Moves `amount` of tunnel `k`'s split from its hottest path, spread
    /// evenly over its other paths, then clips and renormalizes the tunnel.
    pub fn withdraw(&self, out: &mut [f64], k: usize, amount: f64) {
        let r = self.net.path_range(k);
        if r.len() < 2 || amount <= 0.0 {
            return;
        }
        let hot = self.hottest_path(k);
        let share = amount / (r.len() - 1) as f64;
        for p in r.clone() {
            if p == hot {
                out[p] -= amount;
            } else {
                out[p] += share;
            }
        }
        normalize_in_place(&mut out[r]);
    }

    fn draw_eps<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.random::<f64>() * self.radius
    }

    pub fn naive<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.center);
        let k = rng.random_range(0..self.net.tunnel_count());
        let eps = self.draw_eps(rng);
        self.withdraw(out, k, eps);
    }

    pub fn delta_util<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        if self.unbalanced.is_empty() {
            return self.naive(rng, out);
        }
        out.clear();
        out.extend_from_slice(self.center);
        let k = self.unbalanced[rng.random_range(0..self.unbalanced.len())];
        let eps = self.draw_eps(rng);
        self.withdraw(out, k, eps);
    }

    pub fn max_util<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.center);
        for &k in &self.congested {
            let eps = self.draw_eps(rng);
            let mass = self.center[self.hottest_path(k)];
            self.withdraw(out, k, eps * mass);
        }
    }

    pub fn generate<R: Rng>(&self, policy: CbfPolicy, rng: &mut R, out: &mut Vec<f64>) {
        match policy {
            CbfPolicy::Naive => self.naive(rng, out),
            CbfPolicy::DeltaUtil => self.delta_util(rng, out),
            CbfPolicy::MaxUtil => self.max_util(rng, out),
        }
    }
}

fn one_candidate<R: Rng>(
    net: &OverlayNetwork,
    demand: &DemandVector,
    proto: &SplitAction,
    cfg: &CbfConfig,
    policy: CbfPolicy,
    rng: &mut R,
) -> Result<SplitAction> {
    ensure_len("demand vector", net.tunnel_count(), demand.len())?;
    proto.check_shape(net)?;
    let hood = Neighborhood::new(net, &demand.demands, proto.ratios(), cfg.radius, cfg.delta_util_threshold);
    let mut out = Vec::with_capacity(net.path_count());
    hood.generate(policy, rng, &mut out);
    Ok(SplitAction::from_flat_unchecked(net.offsets(), out))
}

/// One Naive candidate around `proto`.
pub fn gen_naive<R: Rng>(
    net: &OverlayNetwork,
    demand: &DemandVector,
    proto: &SplitAction,
    cfg: &CbfConfig,
    rng: &mut R,
) -> Result<SplitAction> {
    one_candidate(net, demand, proto, cfg, CbfPolicy::Naive, rng)
}

/// One DeltaUtil candidate around `proto`; falls back to Naive when no
/// tunnel is unbalanced enough.
pub fn gen_delta_util<R: Rng>(
    net: &OverlayNetwork,
    demand: &DemandVector,
    proto: &SplitAction,
    cfg: &CbfConfig,
    rng: &mut R,
) -> Result<SplitAction> {
    one_candidate(net, demand, proto, cfg, CbfPolicy::DeltaUtil, rng)
}

/// One MaxUtil candidate around `proto`; unchanged when nothing is congested.
pub fn gen_max_util<R: Rng>(
    net: &OverlayNetwork,
    demand: &DemandVector,
    proto: &SplitAction,
    cfg: &CbfConfig,
    rng: &mut R,
) -> Result<SplitAction> {
    one_candidate(net, demand, proto, cfg, CbfPolicy::MaxUtil, rng)
}

#[derive(Clone, Debug)]
struct Candidate {
    index: usize,
    ratios: Vec<f64>,
    mlu: f64,
    l1: f64,
}

#[derive(Clone, Debug, Default)]
struct BatchBest {
    closest_feasible: Option<Candidate>,
    lowest_mlu: Option<Candidate>,
}

fn pick(a: Option<Candidate>, b: Option<Candidate>, key: impl Fn(&Candidate) -> f64) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let ord = key(&a).total_cmp(&key(&b)).then(a.index.cmp(&b.index));
            Some(if ord.is_le() { a } else { b })
        }
        (a, None) => a,
        (None, b) => b,
    }
}

impl BatchBest {
    fn single(c: Candidate) -> Self {
        Self {
            closest_feasible: (c.mlu <= 1.0).then(|| c.clone()),
            lowest_mlu: Some(c),
        }
    }

    fn merge(self, other: Self) -> Self {
        Self {
            closest_feasible: pick(self.closest_feasible, other.closest_feasible, |c| c.l1),
            lowest_mlu: pick(self.lowest_mlu, other.lowest_mlu, |c| c.mlu),
        }
    }
}

/// Reusable projector holding the worker pool.
pub struct Projector {
    cfg: CbfConfig,
    pool: Option<rayon::ThreadPool>,
}

impl fmt::Debug for Projector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Projector").field("cfg", &self.cfg).finish()
    }
}

impl Projector {
    pub fn new(cfg: CbfConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = if cfg.workers == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("cannot start CBF workers: {e}")))?,
            )
        };
        Ok(Self { cfg, pool })
    }

    pub fn config(&self) -> &CbfConfig {
        &self.cfg
    }

    pub fn project(&self, net: &OverlayNetwork, demand: &DemandVector, proto: &SplitAction) -> Result<ProjectionResult> {
        self.project_with_seed(net, demand, proto, self.cfg.seed)
    }

    /// Projects with an explicit seed; the harness derives one per step.
    pub fn project_with_seed(
        &self,
        net: &OverlayNetwork,
        demand: &DemandVector,
        proto: &SplitAction,
        seed: u64,
    ) -> Result<ProjectionResult> {
        ensure_len("demand vector", net.tunnel_count(), demand.len())?;
        proto.check_shape(net)?;
        let mut loads = vec![0.0; net.edge_count()];
        offered_loads_into(net, &demand.demands, proto.ratios(), &mut loads);
        let proto_mlu = mlu_of_loads(net, &loads);
        if proto_mlu <= 1.0 {
            return Ok(ProjectionResult {
                action: proto.clone(),
                was_safe_input: true,
                feasible_found: true,
                candidates_evaluated: 0,
                l1_distance: 0.0,
                proto_mlu,
                mlu: proto_mlu,
            });
        }

        let cfg = &self.cfg;
        let n = cfg.candidates_per_iter;
        let mut center = proto.ratios().to_vec();
        let mut center_mlu = proto_mlu;
        let mut best = BatchBest::default();
        let mut evaluated = 0;

        for m in 0..cfg.max_iters {
            let hood = Neighborhood::new(net, &demand.demands, &center, cfg.radius, cfg.delta_util_threshold);
            let eval = |idx: usize, buf: &mut (Vec<f64>, Vec<f64>)| {
                let (cand, loads) = buf;
                let mut r = rng::keyed(&[CANDIDATE_STREAM, seed, m as u64, idx as u64]);
                hood.generate(cfg.policy, &mut r, cand);
                offered_loads_into(net, &demand.demands, cand, loads);
                BatchBest::single(Candidate {
                    index: m * n + idx,
                    ratios: cand.clone(),
                    mlu: mlu_of_loads(net, loads),
                    l1: l1(cand, proto.ratios()),
                })
            };
            let init = || (Vec::with_capacity(net.path_count()), vec![0.0; net.edge_count()]);
            let batch = match &self.pool {
                None => {
                    let mut buf = init();
                    (0..n).map(|i| eval(i, &mut buf)).fold(BatchBest::default(), BatchBest::merge)
                }
                Some(pool) => pool.install(|| {
                    (0..n)
                        .into_par_iter()
                        .map_init(init, |buf, i| eval(i, buf))
                        .reduce(BatchBest::default, BatchBest::merge)
                }),
            };
            evaluated += n;
            drop(hood);

            if let Some(low) = &batch.lowest_mlu {
                if low.mlu < center_mlu {
                    center.clone_from(&low.ratios);
                    center_mlu = low.mlu;
                }
            }
            best = best.merge(batch);
            if best.closest_feasible.is_some() {
                break;
            }
        }

        let (ratios, mlu, feasible_found) = match (best.closest_feasible, best.lowest_mlu) {
            (Some(c), _) => (c.ratios, c.mlu, true),
            (None, Some(c)) if c.mlu < proto_mlu => (c.ratios, c.mlu, false),
            _ => (proto.ratios().to_vec(), proto_mlu, false),
        };
        let l1_distance = l1(&ratios, proto.ratios());
        Ok(ProjectionResult {
            action: SplitAction::from_flat_unchecked(net.offsets(), ratios),
            was_safe_input: false,
            feasible_found,
            candidates_evaluated: evaluated,
            l1_distance,
            proto_mlu,
            mlu,
        })
    }
}

/// One-shot projection; builds a worker pool for the call.
pub fn project(
    net: &OverlayNetwork,
    demand: &DemandVector,
    proto: &SplitAction,
    cfg: &CbfConfig,
) -> Result<ProjectionResult> {
    Projector::new(cfg.clone())?.project(net, demand, proto)
}
