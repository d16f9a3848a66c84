//! Benchmark split ratios: minimize the average tunnel delay subject to an
//! MLU target, by multistart projected descent.
//!
//! Each restart runs numerical-subgradient descent with backtracking and then
//! a direct-search polish that polls per-tunnel transfers plus random
//! directions, which keeps making progress along the kinks of the max.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbf::{CbfConfig, CbfPolicy, Projector};
use crate::env::{link_delay, mlu_of_loads, offered_loads_into, SplitAction};
use crate::error::{ensure_len, Error, Result};
use crate::rng;
use crate::topo::OverlayNetwork;
use crate::traffic::DemandVector;

const BASELINE_STREAM: u64 = 0x006e_6c70;
const FD_STEP: f64 = 1e-6;
/// Random poll directions per direct-search iteration.
const RANDOM_POLLS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Largest admissible MLU.
    pub mlu_target: f64,
    /// Random starts, in addition to the uniform and largest-path starts.
    pub restarts: usize,
    /// Descent iterations per start; the polish gets the same budget.
    pub max_iters: usize,
    pub step_init: f64,
    /// Step size below which a phase stops.
    pub tol: f64,
    pub seed: u64,
    /// Worker threads for restarts; 0 uses every available core.
    pub workers: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            mlu_target: 1.0,
            restarts: 8,
            max_iters: 400,
            step_init: 0.1,
            tol: 1e-9,
            seed: 0,
            workers: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mlu_target > 0.0 && self.mlu_target <= 1.0) {
            return Err(Error::InvalidConfig(format!("mlu_target {} outside (0, 1]", self.mlu_target)));
        }
        if self.max_iters == 0 || !(self.step_init > 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("baseline iterations, step and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSolution {
    pub action: SplitAction,
    pub avg_delay: f64,
    pub mlu: f64,
    /// Final objective of each start that was feasible, in start order;
    /// `None` for starts that could not be made feasible.
    pub start_objectives: Vec<Option<f64>>,
    /// Best objective over the first `i + 1` starts.
    pub best_so_far: Vec<f64>,
}

/// Average tunnel delay and MLU of `action` from offered loads, taking each
/// tunnel's delay as the max over all of its paths.
pub fn evaluate_static(net: &OverlayNetwork, demand: &DemandVector, action: &SplitAction) -> Result<(f64, f64)> {
    ensure_len("demand vector", net.tunnel_count(), demand.len())?;
    action.check_shape(net)?;
    let mut loads = vec![0.0; net.edge_count()];
    Ok(static_objective(net, &demand.demands, action.ratios(), &mut loads))
}

fn static_objective(net: &OverlayNetwork, demands: &[f64], ratios: &[f64], loads: &mut [f64]) -> (f64, f64) {
    offered_loads_into(net, demands, ratios, loads);
    let mlu = mlu_of_loads(net, loads);
    let edges = net.edges();
    let mut total = 0.0;
    for t in net.tunnels() {
        let mut worst = f64::NEG_INFINITY;
        for path in &t.paths {
            let d: f64 = path
                .iter()
                .map(|&e| link_delay(edges[e].capacity, loads[e], edges[e].prop_delay))
                .sum();
            worst = worst.max(d);
        }
        total += worst;
    }
    (total / net.tunnel_count() as f64, mlu)
}

/// Euclidean projection of each tunnel segment onto the probability simplex.
fn project_simplex(x: &mut [f64], offsets: &[usize]) {
    for w in offsets.windows(2) {
        let seg = &mut x[w[0]..w[1]];
        let mut sorted = seg.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (i, &u) in sorted.iter().enumerate() {
            cum += u;
            let t = (cum - 1.0) / (i + 1) as f64;
            if u - t > 0.0 {
                theta = t;
            }
        }
        let mut sum = 0.0;
        for v in seg.iter_mut() {
            *v = (*v - theta).max(0.0);
            sum += *v;
        }
        seg.iter_mut().for_each(|v| *v /= sum);
    }
}

struct Problem<'a> {
    net: &'a OverlayNetwork,
    demands: &'a [f64],
    target: f64,
}

impl Problem<'_> {
    /// Objective, or `None` when the point violates the MLU target.
    fn value(&self, x: &[f64], loads: &mut [f64]) -> Option<f64> {
        let (d, mlu) = static_objective(self.net, self.demands, x, loads);
        (mlu <= self.target).then_some(d)
    }

    fn objective(&self, x: &[f64], loads: &mut [f64]) -> f64 {
        static_objective(self.net, self.demands, x, loads).0
    }

    fn descend(&self, x: &mut Vec<f64>, fx: &mut f64, cfg: &BaselineConfig, loads: &mut [f64]) {
        let offsets = self.net.offsets();
        let mut eta = cfg.step_init;
        let mut g = vec![0.0; x.len()];
        let mut probe = x.clone();
        for _ in 0..cfg.max_iters {
            for i in 0..x.len() {
                probe[i] = x[i] + FD_STEP;
                let up = self.objective(&probe, loads);
                probe[i] = x[i] - FD_STEP;
                let down = self.objective(&probe, loads);
                probe[i] = x[i];
                g[i] = (up - down) / (2.0 * FD_STEP);
            }
            let mut moved = false;
            while eta >= cfg.tol {
                let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
                project_simplex(&mut y, offsets);
                match self.value(&y, loads) {
                    Some(fy) if fy < *fx => {
                        *x = y;
                        *fx = fy;
                        probe.clone_from(x);
                        eta = (eta * 2.0).min(cfg.step_init);
                        moved = true;
                        break;
                    }
                    _ => eta *= 0.5,
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn polish(&self, x: &mut Vec<f64>, fx: &mut f64, cfg: &BaselineConfig, rng: &mut ChaCha8Rng, loads: &mut [f64]) {
        let offsets = self.net.offsets();
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for w in offsets.windows(2) {
            for a in w[0]..w[1] {
                for b in w[0]..w[1] {
                    if a != b {
                        let mut d = vec![0.0; x.len()];
                        d[a] = -1.0;
                        d[b] = 1.0;
                        dirs.push(d);
                    }
                }
            }
        }
        let mut delta = cfg.step_init;
        for _ in 0..cfg.max_iters {
            if delta < cfg.tol {
                break;
            }
            let mut polls = dirs.clone();
            for _ in 0..RANDOM_POLLS {
                polls.push(random_direction(offsets, rng));
            }
            let mut improved = false;
            for d in &polls {
                let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + delta * b).collect();
                if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    continue;
                }
                if let Some(fy) = self.value(&y, loads) {
                    if fy < *fx {
                        *x = y;
                        *fx = fy;
                        improved = true;
                        break;
                    }
                }
            }
            delta = if improved { (delta * 2.0).min(cfg.step_init) } else { delta * 0.5 };
        }
        // Undo drift from repeated additions.
        let mut snapped = x.clone();
        project_simplex(&mut snapped, offsets);
        if let Some(f) = self.value(&snapped, loads) {
            *x = snapped;
            *fx = f;
        }
    }
}

/// Zero-sum per tunnel, max-norm one.
fn random_direction(offsets: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = *offsets.last().unwrap();
    let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    for w in offsets.windows(2) {
        let seg = &mut d[w[0]..w[1]];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter_mut().for_each(|v| *v -= mean);
    }
    let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        d.iter_mut().for_each(|v| *v /= max);
    }
    d
}

fn random_simplex(offsets: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = *offsets.last().unwrap();
    let mut x: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    for w in offsets.windows(2) {
        let seg = &mut x[w[0]..w[1]];
        let s: f64 = seg.iter().sum();
        seg.iter_mut().for_each(|v| *v /= s);
    }
    x
}

/// Index of the path with the largest bottleneck capacity, per tunnel.
fn widest_paths(net: &OverlayNetwork) -> Vec<f64> {
    let mut x = vec![0.0; net.path_count()];
    for (k, t) in net.tunnels().iter().enumerate() {
        let width = |p: &Vec<usize>| p.iter().map(|&e| net.edges()[e].capacity).fold(f64::INFINITY, f64::min);
        let best = (0..t.paths.len())
            .max_by(|&a, &b| width(&t.paths[a]).total_cmp(&width(&t.paths[b])).then(b.cmp(&a)))
            .unwrap();
        x[net.path_range(k).start + best] = 1.0;
    }
    x
}

/// Near-optimal split ratios for one demand vector.
/// Local optimum reached from one start, or `None` for an infeasible start.
type StartResult = Option<(Vec<f64>, f64)>;

pub fn solve(net: &OverlayNetwork, demand: &DemandVector, cfg: &BaselineConfig) -> Result<BaselineSolution> {
    cfg.validate()?;
    ensure_len("demand vector", net.tunnel_count(), demand.len())?;
    let problem = Problem {
        net,
        demands: &demand.demands,
        target: cfg.mlu_target,
    };
    // Loads scale linearly with demand, so projecting the scaled demand to
    // MLU <= 1 meets the target.
    let scaled = DemandVector {
        t: demand.t,
        demands: demand.demands.iter().map(|d| d / cfg.mlu_target).collect(),
    };
    let repair = Projector::new(CbfConfig {
        policy: CbfPolicy::MaxUtil,
        seed: cfg.seed,
        workers: 1,
        ..CbfConfig::default()
    })?;

    let mut starts = vec![SplitAction::uniform(net).ratios().to_vec(), widest_paths(net)];
    for i in 0..cfg.restarts {
        let mut r = rng::keyed(&[BASELINE_STREAM, cfg.seed, 0, i as u64]);
        starts.push(random_simplex(net.offsets(), &mut r));
    }

    let run = |i: usize, start: &Vec<f64>| -> Result<Option<(Vec<f64>, f64)>> {
        let mut loads = vec![0.0; net.edge_count()];
        let mut x = start.clone();
        let fx = match problem.value(&x, &mut loads) {
            Some(f) => f,
            None => {
                let proto = SplitAction::from_flat_unchecked(net.offsets(), x.clone());
                let res = repair.project_with_seed(net, &scaled, &proto, rng::mix(&[cfg.seed, i as u64]))?;
                x = res.action.ratios().to_vec();
                match problem.value(&x, &mut loads) {
                    Some(f) => f,
                    None => return Ok(None),
                }
            }
        };
        let mut fx = fx;
        let mut r = rng::keyed(&[BASELINE_STREAM, cfg.seed, 1, i as u64]);
        problem.descend(&mut x, &mut fx, cfg, &mut loads);
        problem.polish(&mut x, &mut fx, cfg, &mut r, &mut loads);
        Ok(Some((x, fx)))
    };

    let results: Vec<Result<StartResult>> = if cfg.workers == 1 {
        starts.iter().enumerate().map(|(i, s)| run(i, s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start baseline workers: {e}")))?;
        pool.install(|| starts.par_iter().enumerate().map(|(i, s)| run(i, s)).collect())
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_objectives = Vec::with_capacity(results.len());
    let mut best_so_far = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        start_objectives.push(r.as_ref().map(|(_, f)| *f));
        if let Some((x, f)) = r {
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
        best_so_far.push(best.as_ref().map_or(f64::INFINITY, |(_, f)| *f));
    }
    let (x, _) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no split keeps MLU <= {} for demand {:?}",
            cfg.mlu_target, demand.demands
        ))
    })?;
    let action = SplitAction::from_flat(net, x)?;
    let (avg_delay, mlu) = evaluate_static(net, demand, &action)?;
    Ok(BaselineSolution {
        action,
        avg_delay,
        mlu,
        start_objectives,
        best_so_far,
    })
}
