//! Training, evaluation, benchmark and comparison runs, and their CSV output.
//!
//! A run directory holds `config.toml`, `steps.csv`, `episodes.csv`,
//! `updates.csv`, `summary.json` and checkpoints. Column layouts are listed in
//! `docs/formats.md`.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub use config::{HubSpokeConfig, RunConfig};

use crate::agents::{Agent, DdpgDiagnostics, Experience, ReplayBuffer};
use crate::baseline::{solve, BaselineConfig};
use crate::cbf::{ProjectionResult, Projector};
use crate::env::{evaluate as evaluate_step, Environment, SplitAction};
use crate::error::{Error, Result};
use crate::rng;
use crate::topo::OverlayNetwork;
use crate::traffic::DemandVector;

pub const FINAL_CHECKPOINT: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub start_t: u64,
    pub steps: u64,
    pub mean_reward: f64,
    pub mean_delay: f64,
    pub mean_mlu: f64,
    pub max_mlu: f64,
    /// Admitted over offered traffic across the episode.
    pub acceptance: f64,
    pub rejected_mbps: f64,
    /// Steps whose proto-action was unsafe and got projected.
    pub projections: u64,
    /// Projections that found no feasible action.
    pub cbf_fallbacks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: u64,
    pub step: u64,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub rolled_back: Option<bool>,
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
    pub buffer_size: Option<usize>,
}

/// Safety accounting over a whole run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyLedger {
    pub steps: u64,
    pub unsafe_protos: u64,
    pub infeasible_projections: u64,
    /// Deployed actions above MLU 1 although the projection reported a
    /// feasible result. Always zero unless the safety layer is broken.
    pub violations: u64,
    pub max_deployed_mlu: f64,
    pub rejected_mbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub safety: SafetyLedger,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub summary: TrainSummary,
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateRecord>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Default)]
struct EpisodeAcc {
    start_t: u64,
    steps: u64,
    reward: f64,
    delay: f64,
    mlu: f64,
    max_mlu: f64,
    offered: f64,
    admitted: f64,
    projections: u64,
    fallbacks: u64,
}

impl EpisodeAcc {
    fn finish(&self, episode: u64) -> EpisodeRecord {
        let n = self.steps as f64;
        EpisodeRecord {
            episode,
            start_t: self.start_t,
            steps: self.steps,
            mean_reward: self.reward / n,
            mean_delay: self.delay / n,
            mean_mlu: self.mlu / n,
            max_mlu: self.max_mlu,
            acceptance: if self.offered > 0.0 { (self.admitted / self.offered).min(1.0) } else { 1.0 },
            rejected_mbps: (self.offered - self.admitted).max(0.0),
            projections: self.projections,
            cbf_fallbacks: self.fallbacks,
        }
    }
}

fn projector(cfg: &RunConfig) -> Result<Option<Projector>> {
    cfg.cbf_enabled.then(|| Projector::new(cfg.cbf.clone())).transpose()
}

fn safe_action(
    proj: Option<&Projector>,
    net: &OverlayNetwork,
    state: &DemandVector,
    raw: &SplitAction,
    seed: u64,
) -> Result<(SplitAction, Option<ProjectionResult>)> {
    match proj {
        None => Ok((raw.clone(), None)),
        Some(p) => {
            let r = p.project_with_seed(net, state, raw, rng::mix(&[p.config().seed, seed, state.t]))?;
            Ok((r.action.clone(), Some(r)))
        }
    }
}

fn step_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "episode",
        "reward",
        "avg_delay",
        "mlu",
        "acceptance",
        "offered_mbps",
        "admitted_mbps",
        "proto_mlu",
        "cbf_candidates",
        "cbf_feasible",
        "cbf_l1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..k).map(|i| format!("delay_{i}")));
    h
}

/// Runs the sample-project-step-update loop. `agent` resumes from a loaded
/// checkpoint; otherwise a fresh agent is built from `cfg`. `on_episode` sees
/// every finished episode.
pub fn train(cfg: &RunConfig, agent: Option<Agent>, mut on_episode: impl FnMut(&EpisodeRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = cfg.network()?;
    let mut agent = match agent {
        Some(a) => {
            a.check_network(&net)?;
            a
        }
        None => cfg.new_agent(&net)?,
    };
    let proj = projector(cfg)?;
    let mut env = Environment::new(net.clone(), cfg.traffic.clone(), cfg.reward, cfg.episode_len, 0)?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut steps_csv = csv_writer(&dir.join("steps.csv"))?;
    steps_csv.write_record(step_header(net.tunnel_count()))?;
    let mut episodes_csv = csv_writer(&dir.join("episodes.csv"))?;
    let mut updates_csv = csv_writer(&dir.join("updates.csv"))?;

    let mut rollout: Vec<Experience> = Vec::with_capacity(cfg.update_every as usize);
    let mut buffer = ReplayBuffer::new(cfg.ddpg.buffer_capacity)?;
    let mut safety = SafetyLedger::default();
    let mut episodes = Vec::new();
    let mut updates = Vec::new();
    let mut acc = EpisodeAcc::default();

    for step in 0..cfg.steps() {
        let state = env.state().clone();
        let act = agent.act(&state, true)?;
        let (deployed, pr) = safe_action(proj.as_ref(), &net, &state, &act.action, cfg.seed)?;
        let tr = env.step(&deployed)?;
        let o = &tr.outcome;
        if !o.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at t={}", state.t)));
        }

        safety.steps += 1;
        safety.max_deployed_mlu = safety.max_deployed_mlu.max(o.mlu);
        safety.rejected_mbps += (o.offered_total - o.admitted_total).max(0.0);
        if let Some(r) = &pr {
            if !r.was_safe_input {
                safety.unsafe_protos += 1;
                acc.projections += 1;
            }
            if !r.feasible_found {
                safety.infeasible_projections += 1;
                acc.fallbacks += 1;
            } else if o.mlu > 1.0 {
                safety.violations += 1;
            }
        }

        let mut row = vec![
            state.t.to_string(),
            episodes.len().to_string(),
            o.reward.to_string(),
            o.avg_delay().to_string(),
            o.mlu.to_string(),
            o.acceptance.to_string(),
            o.offered_total.to_string(),
            o.admitted_total.to_string(),
        ];
        match &pr {
            Some(r) => row.extend([
                r.proto_mlu.to_string(),
                r.candidates_evaluated.to_string(),
                u8::from(r.feasible_found).to_string(),
                r.l1_distance.to_string(),
            ]),
            None => row.extend([o.mlu.to_string(), String::new(), String::new(), String::new()]),
        }
        row.extend(o.tunnel_delay.iter().map(f64::to_string));
        steps_csv.write_record(&row)?;

        if acc.steps == 0 {
            acc.start_t = state.t;
        }
        acc.steps += 1;
        acc.reward += o.reward;
        acc.delay += o.avg_delay();
        acc.mlu += o.mlu;
        acc.max_mlu = acc.max_mlu.max(o.mlu);
        acc.offered += o.offered_total;
        acc.admitted += o.admitted_total;

        let exp = Experience {
            state,
            deployed_action: deployed,
            raw_action: act.action,
            raw_logits: act.logits,
            log_prob: act.log_prob,
            reward: o.reward,
            next_state: tr.next_state,
            done: tr.done,
        };
        match &agent {
            Agent::Ppo(_) => rollout.push(exp),
            Agent::Ddpg(_) => buffer.push(exp),
        }

        if tr.done {
            let rec = acc.finish(episodes.len() as u64);
            episodes_csv.serialize(&rec)?;
            episodes_csv.flush()?;
            steps_csv.flush()?;
            on_episode(&rec);
            episodes.push(rec);
            acc = EpisodeAcc::default();
        }

        if (step + 1) % cfg.update_every == 0 {
            let mut rec = UpdateRecord {
                update: updates.len() as u64,
                step: step + 1,
                ..Default::default()
            };
            match &mut agent {
                Agent::Ppo(a) => {
                    let d = a.update(&rollout)?;
                    rollout.clear();
                    rec.policy_loss = Some(d.policy_loss);
                    rec.value_loss = Some(d.value_loss);
                    rec.kl = Some(d.kl);
                    rec.clip_fraction = Some(d.clip_fraction);
                    rec.epochs = Some(d.epochs_completed);
                    rec.rolled_back = Some(d.rolled_back);
                }
                Agent::Ddpg(a) => {
                    rec.buffer_size = Some(buffer.len());
                    if buffer.len() >= a.config().batch {
                        let n = a.config().gradient_steps;
                        let mut sum = DdpgDiagnostics::default();
                        for _ in 0..n {
                            let d = a.update(&buffer)?;
                            sum.critic_loss += d.critic_loss / n as f64;
                            sum.actor_objective += d.actor_objective / n as f64;
                        }
                        rec.critic_loss = Some(sum.critic_loss);
                        rec.actor_objective = Some(sum.actor_objective);
                    }
                }
            }
            updates_csv.serialize(&rec)?;
            updates_csv.flush()?;
            updates.push(rec);
        }

        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps() {
            agent.save(&dir.join(format!("checkpoint_{}.json", step + 1)))?;
        }
    }

    if acc.steps > 0 {
        let rec = acc.finish(episodes.len() as u64);
        episodes_csv.serialize(&rec)?;
        on_episode(&rec);
        episodes.push(rec);
    }
    steps_csv.flush()?;
    episodes_csv.flush()?;
    updates_csv.flush()?;
    agent.save(&dir.join(FINAL_CHECKPOINT))?;

    let summary = TrainSummary {
        steps: cfg.steps(),
        updates: updates.len() as u64,
        episodes: episodes.len() as u64,
        safety,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(TrainOutcome {
        agent,
        summary,
        episodes,
        updates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample: usize,
    pub t: u64,
    pub avg_delay: f64,
    pub mlu: f64,
    pub acceptance: f64,
    pub reward: f64,
    pub proto_mlu: f64,
    pub cbf_candidates: usize,
    pub cbf_feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub mean_delay: f64,
    pub p50_delay: f64,
    pub p95_delay: f64,
    pub max_delay: f64,
    pub max_mlu: f64,
    pub mean_acceptance: f64,
    pub cbf_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        write_csv(csv_path, &self.rows)
    }
}

/// Nearest-rank percentile of an unsorted sample.
fn percentile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn summarize(rows: &[EvalRow]) -> Result<EvalSummary> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("evaluation trace is empty".into()));
    }
    let n = rows.len() as f64;
    let delays: Vec<f64> = rows.iter().map(|r| r.avg_delay).collect();
    Ok(EvalSummary {
        samples: rows.len(),
        mean_delay: delays.iter().sum::<f64>() / n,
        p50_delay: percentile(&delays, 0.5),
        p95_delay: percentile(&delays, 0.95),
        max_delay: delays.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        max_mlu: rows.iter().map(|r| r.mlu).fold(f64::NEG_INFINITY, f64::max),
        mean_acceptance: rows.iter().map(|r| r.acceptance).sum::<f64>() / n,
        cbf_fallbacks: rows.iter().filter(|r| !r.cbf_feasible).count(),
    })
}

/// Deterministic policy on every trace sample, safety projection included
/// when `cfg.cbf_enabled`.
pub fn evaluate(agent: &Agent, net: &OverlayNetwork, cfg: &RunConfig, trace: &[DemandVector]) -> Result<EvalReport> {
    agent.check_network(net)?;
    let mut agent = agent.clone();
    let proj = projector(cfg)?;
    let mut rows = Vec::with_capacity(trace.len());
    for (i, state) in trace.iter().enumerate() {
        let act = agent.act(state, false)?;
        let (deployed, pr) = safe_action(proj.as_ref(), net, state, &act.action, cfg.seed)?;
        let o = evaluate_step(net, state, &deployed, &cfg.reward)?;
        rows.push(EvalRow {
            sample: i,
            t: state.t,
            avg_delay: o.avg_delay(),
            mlu: o.mlu,
            acceptance: o.acceptance,
            reward: o.reward,
            proto_mlu: pr.as_ref().map_or(o.mlu, |r| r.proto_mlu),
            cbf_candidates: pr.as_ref().map_or(0, |r| r.candidates_evaluated),
            cbf_feasible: pr.as_ref().is_none_or(|r| r.feasible_found),
        });
    }
    let summary = summarize(&rows)?;
    Ok(EvalReport { rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub sample: usize,
    pub t: u64,
    /// The benchmark's optimal average delay, with every path of a tunnel
    /// counted whether or not it carries traffic.
    pub avg_delay: f64,
    /// The same split measured by the environment, where paths with zero
    /// share do not count toward tunnel delay.
    pub measured_delay: f64,
    pub mlu: f64,
}

/// Benchmark solution for every trace sample.
pub fn run_baseline(net: &OverlayNetwork, trace: &[DemandVector], cfg: &BaselineConfig, reward: &crate::env::RewardConfig) -> Result<Vec<BaselineRow>> {
    trace
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let sol = solve(net, d, cfg)?;
            let o = evaluate_step(net, d, &sol.action, reward)?;
            Ok(BaselineRow {
                sample: i,
                t: d.t,
                avg_delay: sol.avg_delay,
                measured_delay: o.avg_delay(),
                mlu: sol.mlu,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub sample: usize,
    pub agent_delay: f64,
    pub baseline_delay: f64,
    /// `(agent - baseline) / baseline`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// Mean of the per-sample gaps.
    pub mean_gap: f64,
    pub mean_agent_delay: f64,
    pub mean_baseline_delay: f64,
    /// Relative gap between the two mean delays.
    pub gap_of_means: f64,
}

pub fn compare(eval: &[EvalRow], baseline: &[BaselineRow]) -> Result<GapReport> {
    if eval.len() != baseline.len() {
        return Err(Error::Parse(format!(
            "evaluation has {} samples, baseline has {}",
            eval.len(),
            baseline.len()
        )));
    }
    if eval.is_empty() {
        return Err(Error::InsufficientData("nothing to compare".into()));
    }
    let mut rows = Vec::with_capacity(eval.len());
    for (e, b) in eval.iter().zip(baseline) {
        if e.sample != b.sample || e.t != b.t {
            return Err(Error::Parse(format!(
                "misaligned traces: evaluation sample {} (t={}) against baseline sample {} (t={})",
                e.sample, e.t, b.sample, b.t
            )));
        }
        rows.push(GapRow {
            sample: e.sample,
            agent_delay: e.avg_delay,
            baseline_delay: b.avg_delay,
            gap: (e.avg_delay - b.avg_delay) / b.avg_delay,
        });
    }
    let n = rows.len() as f64;
    let mean_agent_delay = rows.iter().map(|r| r.agent_delay).sum::<f64>() / n;
    let mean_baseline_delay = rows.iter().map(|r| r.baseline_delay).sum::<f64>() / n;
    Ok(GapReport {
        mean_gap: rows.iter().map(|r| r.gap).sum::<f64>() / n,
        gap_of_means: (mean_agent_delay - mean_baseline_delay) / mean_baseline_delay,
        mean_agent_delay,
        mean_baseline_delay,
        rows,
    })
}

pub fn compare_files(eval_csv: &Path, baseline_csv: &Path) -> Result<GapReport> {
    compare(&read_csv(eval_csv)?, &read_csv(baseline_csv)?)
}

/// Writes `summary` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Algo;
    use crate::cbf::CbfPolicy;
    use crate::traffic::generate_trace;

    fn tiny(dir: &Path, algo: Algo) -> RunConfig {
        let mut cfg = RunConfig {
            algo,
            total_steps: 512,
            checkpoint_every: 0,
            eval_trace_len: 20,
            output_dir: dir.to_path_buf(),
            ..Default::default()
        };
        cfg.ppo.hidden = vec![16, 16];
        cfg.ddpg.hidden = vec![16, 16];
        cfg.ddpg.batch = 64;
        cfg.ddpg.gradient_steps = 4;
        cfg.cbf.candidates_per_iter = 200;
        cfg.cbf.workers = 1;
        cfg
    }

    #[test]
    fn update_count_follows_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(dir.path(), Algo::Ppo), None, |_| {}).unwrap();
        assert_eq!(out.summary.updates, 2);
        assert_eq!(out.episodes.len(), 4);
        assert!(out.episodes.iter().all(|e| e.acceptance == 1.0));
        assert_eq!(out.summary.safety.violations, 0);
        let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
        assert_eq!(steps.lines().count(), 513);
        assert!(dir.path().join(FINAL_CHECKPOINT).exists());
    }

    #[test]
    fn ddpg_run_and_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), Algo::Ddpg);
        let out = train(&cfg, None, |_| {}).unwrap();
        assert_eq!(out.updates.len(), 2);
        assert!(out.updates.iter().all(|u| u.critic_loss.is_some()));

        let loaded = Agent::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(loaded, out.agent);
        let net = cfg.network().unwrap();
        let trace = cfg.test_trace(net.tunnel_count());
        let a = evaluate(&out.agent, &net, &cfg, &trace).unwrap();
        let b = evaluate(&loaded, &net, &cfg, &trace).unwrap();
        assert_eq!(a, b);
        assert!(a.summary.max_mlu <= 1.0);
    }

    #[test]
    fn summary_mean_is_column_mean() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), Algo::Ppo);
        let net = cfg.network().unwrap();
        let agent = cfg.new_agent(&net).unwrap();
        let trace = generate_trace(&cfg.traffic, 6, 0, 30);
        let rep = evaluate(&agent, &net, &cfg, &trace).unwrap();
        let path = dir.path().join("eval.csv");
        rep.write(&path).unwrap();
        let back: Vec<EvalRow> = read_csv(&path).unwrap();
        assert_eq!(back, rep.rows);
        let mean = back.iter().map(|r| r.avg_delay).sum::<f64>() / 30.0;
        assert_eq!(mean, rep.summary.mean_delay);
    }

    #[test]
    fn unsafe_exploration_without_projection() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path(), Algo::Ppo);
        cfg.cbf_enabled = false;
        cfg.traffic.base = 4.0;
        cfg.ppo.init_log_std = 0.5;
        let out = train(&cfg, None, |_| {}).unwrap();
        assert!(out.episodes.iter().any(|e| e.acceptance < 1.0));
        assert!(out.summary.safety.rejected_mbps > 0.0);
    }

    #[test]
    fn compare_cases() {
        let eval: Vec<EvalRow> = (0..4)
            .map(|i| EvalRow {
                sample: i,
                t: i as u64,
                avg_delay: 0.2 * (i + 1) as f64,
                mlu: 0.5,
                acceptance: 1.0,
                reward: -1.0,
                proto_mlu: 0.5,
                cbf_candidates: 0,
                cbf_feasible: true,
            })
            .collect();
        let same: Vec<BaselineRow> = eval
            .iter()
            .map(|e| BaselineRow {
                sample: e.sample,
                t: e.t,
                avg_delay: e.avg_delay,
                measured_delay: e.avg_delay,
                mlu: 0.5,
            })
            .collect();
        let rep = compare(&eval, &same).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.mean_gap, 0.0);

        let better: Vec<BaselineRow> = same
            .iter()
            .map(|b| BaselineRow {
                avg_delay: b.avg_delay / 1.1,
                ..b.clone()
            })
            .collect();
        assert!((compare(&eval, &better).unwrap().mean_gap - 0.1).abs() < 1e-12);

        let mut shifted = same.clone();
        shifted[2].t = 99;
        assert!(compare(&eval, &shifted).is_err());
        assert!(compare(&eval, &same[..3]).is_err());
    }

    #[test]
    fn baseline_rows_respect_target() {
        let cfg = RunConfig {
            eval_trace_len: 5,
            ..Default::default()
        };
        let net = cfg.network().unwrap();
        let trace = cfg.test_trace(6);
        let bcfg = BaselineConfig {
            restarts: 2,
            ..Default::default()
        };
        let rows = run_baseline(&net, &trace, &bcfg, &cfg.reward).unwrap();
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!(r.mlu <= 1.0 + 1e-6);
            assert!(r.measured_delay <= r.avg_delay + 1e-12);
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert_eq!(percentile(&xs, 0.95), 5.0);
        assert_eq!(percentile(&xs, 0.0), 1.0);
    }

    #[test]
    fn policy_choice_is_used() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path(), Algo::Ppo);
        cfg.cbf.policy = CbfPolicy::Naive;
        cfg.total_steps = 256;
        let out = train(&cfg, None, |_| {}).unwrap();
        assert_eq!(out.summary.safety.violations, 0);
    }
}
