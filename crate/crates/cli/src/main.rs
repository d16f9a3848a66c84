use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use safelb_core::agents::{Agent, Algo};
use safelb_core::cbf::CbfPolicy;
use safelb_core::harness::{self, RunConfig, FINAL_CHECKPOINT};
use safelb_core::traffic::{generate_trace, read_trace_csv, write_trace_csv, DemandVector};
use safelb_core::OverlayNetwork;

#[derive(Parser)]
#[command(name = "safelb", version, about = "Safe RL load balancing for SD-WAN overlays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics and checkpoints to the run directory.
    Train(TrainArgs),
    /// Run a checkpoint's deterministic policy over a trace.
    Eval(EvalArgs),
    /// Solve the benchmark split for every sample of a trace.
    Baseline(BaselineArgs),
    /// Write a traffic trace as CSV.
    GenTraffic(GenTrafficArgs),
    /// Relative delay gap between an evaluation and a baseline CSV.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Topology JSON file (default: built-in hub-spoke with 3 branches).
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Delay weight in the reward.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Clone)]
struct CbfArgs {
    /// naive, deltautil, maxutil or off.
    #[arg(long)]
    cbf_policy: Option<String>,
    #[arg(long)]
    cbf_radius: Option<f64>,
    #[arg(long)]
    cbf_candidates: Option<usize>,
    #[arg(long)]
    cbf_iters: Option<usize>,
    /// Worker threads for candidate evaluation (0 = all cores).
    #[arg(long)]
    cbf_workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    cbf: CbfArgs,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    steps: Option<u64>,
    /// Run directory for metrics and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also copy the final checkpoint here.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Start from this checkpoint instead of fresh networks.
    #[arg(long)]
    load: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    cbf: CbfArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    load: PathBuf,
    /// Trace CSV (default: the held-out test trace).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-sample CSV output.
    #[arg(long, default_value = "eval.csv")]
    out: PathBuf,
    /// Summary JSON output.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// Trace CSV (default: the held-out test trace).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    mlu_target: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value = "baseline.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GenTrafficArgs {
    #[command(flatten)]
    common: Common,
    /// Number of consecutive steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    t0: u64,
    /// Write the held-out evaluation trace instead.
    #[arg(long)]
    test_trace: bool,
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, default_value = "gap.csv")]
    out: PathBuf,
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(t) = &common.topology {
        cfg.topology = Some(t.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = common.sigma {
        cfg.reward.sigma = s;
    }
    Ok(cfg)
}

fn apply_cbf(cfg: &mut RunConfig, a: &CbfArgs) -> Result<()> {
    if let Some(p) = &a.cbf_policy {
        if p.eq_ignore_ascii_case("off") {
            cfg.cbf_enabled = false;
        } else {
            cfg.cbf_enabled = true;
            cfg.cbf.policy = p.parse::<CbfPolicy>()?;
        }
    }
    if let Some(r) = a.cbf_radius {
        cfg.cbf.radius = r;
    }
    if let Some(n) = a.cbf_candidates {
        cfg.cbf.candidates_per_iter = n;
    }
    if let Some(m) = a.cbf_iters {
        cfg.cbf.max_iters = m;
    }
    if let Some(w) = a.cbf_workers {
        cfg.cbf.workers = w;
    }
    Ok(())
}

fn load_trace(path: Option<&Path>, cfg: &RunConfig, net: &OverlayNetwork) -> Result<Vec<DemandVector>> {
    let trace = match path {
        Some(p) => read_trace_csv(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => cfg.test_trace(net.tunnel_count()),
    };
    if let Some(bad) = trace.iter().find(|d| d.len() != net.tunnel_count()) {
        bail!(
            "trace row t={} has {} tunnels, topology has {}",
            bad.t,
            bad.len(),
            net.tunnel_count()
        );
    }
    Ok(trace)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = run_config(&a.common)?;
    apply_cbf(&mut cfg, &a.cbf)?;
    if let Some(algo) = a.algo {
        cfg.algo = algo;
    }
    if let Some(s) = a.steps {
        cfg.total_steps = s;
        cfg.episodes = None;
    }
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    let init = a.load.as_deref().map(Agent::load).transpose()?;
    if let Some(agent) = &init {
        cfg.algo = agent.algo();
    }
    let out = harness::train(&cfg, init, |e| {
        eprintln!(
            "episode {:>5}  t={:>7}  reward {:>10.4}  delay {:>8.4}  max mlu {:.3}  acceptance {:.4}",
            e.episode, e.start_t, e.mean_reward, e.mean_delay, e.max_mlu, e.acceptance
        )
    })?;
    let s = &out.summary.safety;
    eprintln!(
        "done: {} steps, {} updates; unsafe protos {}, infeasible projections {}, violations {}, rejected {:.3} Mbps",
        out.summary.steps, out.summary.updates, s.unsafe_protos, s.infeasible_projections, s.violations, s.rejected_mbps
    );
    if let Some(p) = a.save {
        std::fs::copy(cfg.output_dir.join(FINAL_CHECKPOINT), &p).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = run_config(&a.common)?;
    apply_cbf(&mut cfg, &a.cbf)?;
    let agent = Agent::load(&a.load).with_context(|| format!("loading {}", a.load.display()))?;
    let net = cfg.network()?;
    let trace = load_trace(a.trace.as_deref(), &cfg, &net)?;
    let report = harness::evaluate(&agent, &net, &cfg, &trace)?;
    report.write(&a.out)?;
    let s = &report.summary;
    println!(
        "samples {}  mean delay {:.6}  p50 {:.6}  p95 {:.6}  max mlu {:.6}  mean acceptance {:.6}  fallbacks {}",
        s.samples, s.mean_delay, s.p50_delay, s.p95_delay, s.max_mlu, s.mean_acceptance, s.cbf_fallbacks
    );
    if let Some(p) = a.summary {
        harness::write_json(&p, s)?;
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let mut cfg = run_config(&a.common)?;
    if let Some(m) = a.mlu_target {
        cfg.baseline.mlu_target = m;
    }
    if let Some(r) = a.restarts {
        cfg.baseline.restarts = r;
    }
    if let Some(s) = a.common.seed {
        cfg.baseline.seed = s;
    }
    let net = cfg.network()?;
    let trace = load_trace(a.trace.as_deref(), &cfg, &net)?;
    let rows = harness::run_baseline(&net, &trace, &cfg.baseline, &cfg.reward)?;
    harness::write_csv(&a.out, &rows)?;
    let n = rows.len() as f64;
    println!(
        "samples {}  mean delay {:.6}  mean measured delay {:.6}  max mlu {:.6}",
        rows.len(),
        rows.iter().map(|r| r.avg_delay).sum::<f64>() / n,
        rows.iter().map(|r| r.measured_delay).sum::<f64>() / n,
        rows.iter().map(|r| r.mlu).fold(0.0, f64::max)
    );
    Ok(())
}

fn gen_traffic(a: GenTrafficArgs) -> Result<()> {
    let mut cfg = run_config(&a.common)?;
    if let Some(s) = a.common.seed {
        cfg.traffic.seed = s;
    }
    let net = cfg.network()?;
    let trace = if a.test_trace {
        cfg.test_trace(net.tunnel_count())
    } else {
        generate_trace(&cfg.traffic, net.tunnel_count(), a.t0, a.steps)
    };
    let f = std::fs::File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_trace_csv(&trace, std::io::BufWriter::new(f))?;
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let rep = harness::compare_files(&a.eval, &a.baseline)?;
    harness::write_csv(&a.out, &rep.rows)?;
    println!(
        "samples {}  agent mean delay {:.6}  baseline mean delay {:.6}  gap of means {:+.4}  mean per-sample gap {:+.4}",
        rep.rows.len(),
        rep.mean_agent_delay,
        rep.mean_baseline_delay,
        rep.gap_of_means,
        rep.mean_gap
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::GenTraffic(a) => gen_traffic(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
