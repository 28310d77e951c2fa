use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rwre::exit::{
    exit_prob_closed, exit_prob_linear, survival_exact, survival_lower_bound, trap_quantities, write_trap_rows,
    ExitError, ExitSide, TrapRow,
};
use rwre::lyapunov::{
    assess_regime, default_u_grid, estimate_F, estimate_gamma, find_root_s_in, interior_x_grid, legendre_rate,
    ExactEvaluator, LyapunovError, MomentCurve, MomentEvaluator, MonteCarloEvaluator, RootSide,
    DEFAULT_REPLICA_BUDGET, DEFAULT_TABLE_BUDGET, DECISION_Z,
};
use rwre::report::{self, Envelope, RunMeta};
use rwre::seeding::{derive_seed, domain, splitmix64, stream_rng};
use rwre::slowdown::{annealed_tail, slowdown_curve, trap_frequency_scan, SlowdownError, TrapWidth};
use rwre::stats::{mean, median};
use rwre::walk::{
    batch_final_positions, run_until, shared_environment, walker_environment, write_batch_csv,
    write_trajectory_csv, SamplingMode, StopSpec, WalkError,
};
use rwre::{sample_environment, EnvError, EnvironmentSpec, MatrixError};

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random walks in random environment with bounded jumps")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Environment spec (JSON).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Master seed; generated and reported when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "rwre-out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "RWRE_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand, Serialize)]
#[serde(untagged)]
enum Command {
    /// Check a spec against the model invariants.
    Validate(NoArgs),
    /// Monte Carlo estimate of the Lyapunov exponent.
    EstimateGamma(GammaArgs),
    /// Moment curve F(u) on a grid.
    MomentCurve(CurveArgs),
    /// Rate function I(x), the Legendre transform of F.
    RateFunction(RateArgs),
    /// Slowdown root s with F(s) = 0.
    FindS(FindSArgs),
    /// Transience direction and speed regime.
    Classify(EvalArgs),
    /// Batch of walks from 0.
    Simulate(SimulateArgs),
    /// Exit probability of an interval in one sampled environment.
    ExitProb(ExitArgs),
    /// Trap quantities and exact survival in sampled environments.
    Survival(SurvivalArgs),
    /// Trap-frequency scaling.
    TrapScan(TrapScanArgs),
    /// Slowdown curve X_n / n^{s'}.
    Slowdown(SlowdownArgs),
    /// Annealed tail P(X_n > n^{s'}).
    Tail(TailArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::EstimateGamma(_) => "estimate-gamma",
            Command::MomentCurve(_) => "moment-curve",
            Command::RateFunction(_) => "rate-function",
            Command::FindS(_) => "find-s",
            Command::Classify(_) => "classify",
            Command::Simulate(_) => "simulate",
            Command::ExitProb(_) => "exit-prob",
            Command::Survival(_) => "survival",
            Command::TrapScan(_) => "trap-scan",
            Command::Slowdown(_) => "slowdown",
            Command::Tail(_) => "tail",
        }
    }
}

#[derive(Args, Serialize)]
struct NoArgs {}

#[derive(Args, Serialize)]
struct GammaArgs {
    /// Product length.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Exact enumeration when the support allows it, Monte Carlo otherwise.
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    method: Method,
    /// Product length (default: longest feasible for exact, 32 for Monte Carlo).
    #[arg(long)]
    n: Option<usize>,
    /// Base Monte Carlo replicas; escalation multiplies by 4.
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    /// Cap on Monte Carlo replica-products.
    #[arg(long, default_value_t = DEFAULT_REPLICA_BUDGET)]
    budget: u64,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated u values (default -1.5..1.5 step 0.1).
    #[arg(long, value_delimiter = ',')]
    u_grid: Option<Vec<f64>>,
}

#[derive(Args, Serialize)]
struct RateArgs {
    #[command(flatten)]
    curve: CurveArgs,
    /// Comma-separated x values (default: evenly spaced interior values).
    #[arg(long, value_delimiter = ',')]
    x_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 21)]
    x_count: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Side {
    Positive,
    Negative,
}

#[derive(Args, Serialize)]
struct FindSArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Side of the root (default: from the sign of gamma).
    #[arg(long, value_enum)]
    side: Option<Side>,
    /// Cached moment-curve CSV used to narrow the initial bracket.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Annealed,
    Quenched,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Steps per walk.
    #[arg(long, default_value_t = 1024)]
    n: u64,
    #[arg(long, default_value_t = 1000)]
    walkers: usize,
    #[arg(long, value_enum, default_value_t = Mode::Annealed)]
    mode: Mode,
    /// Also dump the path of walker 0.
    #[arg(long)]
    trajectory: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ExitSideArg {
    Minus,
    Plus,
}

#[derive(Args, Serialize)]
struct ExitArgs {
    #[arg(long, allow_hyphen_values = true)]
    a: i64,
    #[arg(long, allow_hyphen_values = true)]
    b: i64,
    #[arg(long, allow_hyphen_values = true)]
    k: i64,
    #[arg(long, value_enum, default_value_t = ExitSideArg::Minus)]
    side: ExitSideArg,
}

#[derive(Args, Serialize)]
struct SurvivalArgs {
    /// Left arm N of U = [-N, M].
    #[arg(long)]
    n_arm: i64,
    /// Right arm M of U = [-N, M].
    #[arg(long)]
    m_arm: i64,
    /// Horizon n.
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Number of sampled environments.
    #[arg(long, default_value_t = 1)]
    envs: usize,
}

#[derive(Args, Serialize)]
struct TrapScanArgs {
    /// Comma-separated n values; `2^k` accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_u64_item, default_value = DEFAULT_N_GRID)]
    n_grid: Vec<u64>,
    /// Trap half-width coefficient: `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    k: String,
    #[arg(long, default_value_t = 2000)]
    env_samples: usize,
}

#[derive(Args, Serialize)]
struct SlowdownArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.9,1")]
    s_prime: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_u64_item, default_value = DEFAULT_N_GRID)]
    n_grid: Vec<u64>,
    #[arg(long, default_value_t = 2000)]
    walkers: usize,
}

#[derive(Args, Serialize)]
struct TailArgs {
    #[arg(long, default_value_t = 1 << 16)]
    n: u64,
    #[arg(long, default_value_t = 0.9)]
    s_prime: f64,
    #[arg(long, default_value_t = 2000)]
    walkers: usize,
}

const DEFAULT_N_GRID: &str = "2^10,2^11,2^12,2^13,2^14,2^15,2^16";
const MC_DEFAULT_LENGTH: usize = 32;

type WriteResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// `n` or `b^e`.
fn parse_u64_item(t: &str) -> Result<u64, String> {
    let t = t.trim();
    match t.split_once('^') {
        Some((b, e)) => {
            let b: u64 = b.parse().map_err(|e| format!("{t:?}: {e}"))?;
            let e: u32 = e.parse().map_err(|e| format!("{t:?}: {e}"))?;
            b.checked_pow(e).ok_or_else(|| format!("{t:?} overflows"))
        }
        None => t.parse().map_err(|e| format!("{t:?}: {e}")),
    }
}

/// Error with its exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn invalid(err: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, err: err.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self::invalid(err)
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Self::invalid(err)
    }
}

impl From<EnvError> for Failure {
    fn from(err: EnvError) -> Self {
        Self::invalid(err)
    }
}

impl From<MatrixError> for Failure {
    fn from(err: MatrixError) -> Self {
        let code = match err {
            MatrixError::UndefinedDelta { .. } => 3,
            _ => 1,
        };
        Self { code, err: err.into() }
    }
}

impl From<LyapunovError> for Failure {
    fn from(err: LyapunovError) -> Self {
        match err {
            LyapunovError::Matrix(e) => e.into(),
            LyapunovError::NoSlowdownRoot(_) => Self { code: 2, err: err.into() },
            LyapunovError::Unresolved { .. } => Self { code: 3, err: err.into() },
            _ => Self::invalid(err),
        }
    }
}

impl From<ExitError> for Failure {
    fn from(err: ExitError) -> Self {
        match err {
            ExitError::Matrix(e) => e.into(),
            ExitError::NumericalFault { .. } => Self { code: 3, err: err.into() },
            _ => Self::invalid(err),
        }
    }
}

impl From<WalkError> for Failure {
    fn from(err: WalkError) -> Self {
        Self::invalid(err)
    }
}

impl From<SlowdownError> for Failure {
    fn from(err: SlowdownError) -> Self {
        match err {
            SlowdownError::RegimeMismatch { .. } => Self { code: 2, err: err.into() },
            SlowdownError::Lyapunov(e) => e.into(),
            SlowdownError::Exit(e) => e.into(),
            _ => Self::invalid(err),
        }
    }
}

struct Outcome {
    summary: String,
    files: Vec<PathBuf>,
}

struct Ctx<'a> {
    command: &'a Command,
    spec_path: Option<&'a Path>,
    seed: u64,
    out: &'a Path,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    spec_path: Option<String>,
    spec: Option<&'a EnvironmentSpec>,
    params: &'a Command,
}

impl Ctx<'_> {
    fn path(&self, ext: &str) -> PathBuf {
        self.out.join(format!("{}.{ext}", self.command.name()))
    }

    fn json<R: Serialize>(&mut self, spec: Option<&EnvironmentSpec>, result: &R) -> Result<(), Failure> {
        let config = ConfigEcho {
            spec_path: self.spec_path.map(|p| p.display().to_string()),
            spec,
            params: self.command,
        };
        let path = self.path("json");
        Envelope::new(self.command.name(), self.seed, &config, result)
            .write(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn csv(
        &mut self,
        suffix: &str,
        write: impl FnOnce(BufWriter<File>) -> WriteResult,
    ) -> Result<(), Failure> {
        let path = self.out.join(format!("{}{suffix}.csv", self.command.name()));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write(BufWriter::new(file)).map_err(|e| anyhow!("writing {}: {e}", path.display()))?;
        self.files.push(path);
        Ok(())
    }
}

fn fresh_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    splitmix64(nanos ^ ((std::process::id() as u64) << 32))
}

fn load_spec(path: Option<&Path>) -> Result<Arc<EnvironmentSpec>, Failure> {
    let path = path.ok_or_else(|| Failure::invalid(anyhow!("--spec is required")))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EnvironmentSpec::from_json_str(&text)
        .map(Arc::new)
        .map_err(|e| Failure::invalid(anyhow!("{}: {e}", path.display())))
}

/// Product length for exact enumeration, or `None` for Monte Carlo.
fn exact_length(spec: &EnvironmentSpec, args: &EvalArgs) -> Option<usize> {
    let feasible = ExactEvaluator::feasible_length(spec, DEFAULT_TABLE_BUDGET);
    let use_exact = match args.method {
        Method::Exact => true,
        Method::MonteCarlo => false,
        Method::Auto => feasible >= spec.max_left().max(1) && args.n.is_none_or(|n| n <= feasible),
    };
    use_exact.then(|| args.n.unwrap_or(feasible))
}

fn mc_length(spec: &EnvironmentSpec, args: &EvalArgs) -> usize {
    args.n.unwrap_or(MC_DEFAULT_LENGTH.max(spec.max_left()))
}

fn evaluator(spec: &Arc<EnvironmentSpec>, args: &EvalArgs, seed: u64) -> Result<Box<dyn MomentEvaluator>, Failure> {
    if let Some(n) = exact_length(spec, args) {
        return Ok(Box::new(ExactEvaluator::new(spec, n)?));
    }
    let n = mc_length(spec, args);
    Ok(Box::new(
        MonteCarloEvaluator::new(spec.clone(), n, args.replicas, seed).with_budget(args.budget),
    ))
}

fn moment_curve(spec: &Arc<EnvironmentSpec>, args: &CurveArgs, seed: u64) -> Result<MomentCurve, Failure> {
    let grid = args.u_grid.clone().unwrap_or_else(default_u_grid);
    match exact_length(spec, &args.eval) {
        Some(n) => Ok(ExactEvaluator::new(spec, n)?.curve(&grid)?),
        None => Ok(estimate_F(spec, &grid, mc_length(spec, &args.eval), args.eval.replicas, seed)?),
    }
}

/// Bracket for the root read off a cached `u, F_hat, std_err` table: the last
/// clearly negative and first clearly positive grid points on the chosen side.
fn bracket_from_curve(path: &Path, side: RootSide) -> Result<(f64, f64), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |j: usize| -> Result<f64, Failure> {
            cols.get(j)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| Failure::invalid(anyhow!("{}: bad row {}", path.display(), i + 1)))
        };
        pts.push((parse(0)?, parse(1)?, parse(2)?));
    }
    let (lo, hi) = match side {
        RootSide::Positive => {
            let lo = pts
                .iter()
                .filter(|p| p.0 > 0.0 && p.0 < 1.0 && p.1 + DECISION_Z * p.2 < 0.0)
                .map(|p| p.0)
                .fold(0.0, f64::max);
            let hi = pts
                .iter()
                .filter(|p| p.0 > lo && p.0 <= 1.0 && p.1 - DECISION_Z * p.2 > 0.0)
                .map(|p| p.0)
                .fold(1.0, f64::min);
            (lo, hi)
        }
        RootSide::Negative => {
            let hi = pts
                .iter()
                .filter(|p| p.0 < 0.0 && p.0 > -1.0 && p.1 + DECISION_Z * p.2 < 0.0)
                .map(|p| p.0)
                .fold(0.0, f64::min);
            let lo = pts
                .iter()
                .filter(|p| p.0 < hi && p.0 >= -1.0 && p.1 - DECISION_Z * p.2 > 0.0)
                .map(|p| p.0)
                .fold(-1.0, f64::max);
            (lo, hi)
        }
    };
    Ok((lo, hi))
}

#[derive(Serialize)]
struct ValidateResult {
    valid: bool,
    max_left: usize,
    kappa: f64,
    atoms: usize,
}

#[derive(Serialize)]
struct SimulateSummary {
    walkers: usize,
    n: u64,
    mean_position: f64,
    median_position: f64,
    min_position: i64,
    max_position: i64,
}

#[derive(Serialize)]
struct ExitResult {
    closed: f64,
    linear: f64,
    discrepancy: f64,
}

#[derive(Serialize)]
struct SurvivalSummary {
    envs: usize,
    min_survival: f64,
    bound_holds: usize,
}

fn run(cli: &Cli, seed: u64) -> Result<Outcome, Failure> {
    fs::create_dir_all(&cli.common.out).with_context(|| format!("creating {}", cli.common.out.display()))?;
    let mut ctx = Ctx {
        command: &cli.command,
        spec_path: cli.common.spec.as_deref(),
        seed,
        out: &cli.common.out,
        files: Vec::new(),
    };
    let spec = load_spec(ctx.spec_path)?;
    let summary = match &cli.command {
        Command::Validate(_) => {
            let r = ValidateResult {
                valid: true,
                max_left: spec.max_left(),
                kappa: spec.kappa(),
                atoms: spec.atoms().len(),
            };
            ctx.json(Some(&spec), &r)?;
            format!("valid: L = {}, kappa = {}, {} atoms", r.max_left, r.kappa, r.atoms)
        }
        Command::EstimateGamma(a) => {
            let e = estimate_gamma(&spec, a.n, a.replicas, seed)?;
            ctx.json(Some(&spec), &e)?;
            format!("gamma = {:.6} +- {:.6} (n = {}, replicas = {})", e.value, e.std_error, e.n, e.replicas)
        }
        Command::MomentCurve(a) => {
            let curve = moment_curve(&spec, a, seed)?;
            ctx.json(Some(&spec), &curve)?;
            ctx.csv("", |w| Ok(report::write_moment_curve_csv(w, &curve)?))?;
            let heavy = curve.points.iter().filter(|p| p.heavy_tail).count();
            format!(
                "{} points ({}, n = {}), {heavy} heavy-tail warnings",
                curve.points.len(),
                curve.method.as_str(),
                curve.n
            )
        }
        Command::RateFunction(a) => {
            let curve = moment_curve(&spec, &a.curve, seed)?;
            let xs = a.x_grid.clone().unwrap_or_else(|| interior_x_grid(&curve, a.x_count));
            let rate = legendre_rate(&curve, &xs)?;
            ctx.json(Some(&spec), &rate)?;
            ctx.csv("", |w| Ok(report::write_rate_csv(w, &rate)?))?;
            let min = rate.points.iter().min_by(|p, q| p.rate.total_cmp(&q.rate));
            match min {
                Some(p) => format!("{} points, min I = {:.6} at x = {:.6}", rate.points.len(), p.rate, p.x),
                None => "0 points".into(),
            }
        }
        Command::FindS(a) => {
            let mut ev = evaluator(&spec, &a.eval, seed)?;
            let side = match a.side {
                Some(Side::Positive) => RootSide::Positive,
                Some(Side::Negative) => RootSide::Negative,
                None if ev.gamma()?.value > 0.0 => RootSide::Negative,
                None => RootSide::Positive,
            };
            let bracket = match &a.curve {
                Some(p) => bracket_from_curve(p, side)?,
                None => match side {
                    RootSide::Positive => (0.0, 1.0),
                    RootSide::Negative => (-1.0, 0.0),
                },
            };
            let root = find_root_s_in(ev.as_mut(), side, bracket)?;
            ctx.json(Some(&spec), &root)?;
            format!(
                "s = {:.6} ({}, n = {}, {} evaluations)",
                root.s,
                if root.exact { "exact enumeration" } else { "monte carlo" },
                root.product_length,
                root.evaluations
            )
        }
        Command::Classify(a) => {
            let mut ev = evaluator(&spec, a, seed)?;
            let regime = assess_regime(ev.as_mut())?;
            ctx.json(Some(&spec), &regime)?;
            let zs: Vec<String> = regime.decisions.iter().map(|d| format!("z({}) = {:.2}", d.quantity, d.z)).collect();
            format!("{:?} ({})", regime.kind, zs.join(", "))
        }
        Command::Simulate(a) => {
            let mode = match a.mode {
                Mode::Annealed => SamplingMode::Annealed,
                Mode::Quenched => SamplingMode::Quenched,
            };
            let batch = batch_final_positions(&spec, a.n, a.walkers, seed, mode)?;
            let xs: Vec<f64> = batch.iter().map(|w| w.final_position as f64).collect();
            let s = SimulateSummary {
                walkers: a.walkers,
                n: a.n,
                mean_position: mean(&xs),
                median_position: median(&xs),
                min_position: batch.iter().map(|w| w.final_position).min().unwrap_or(0),
                max_position: batch.iter().map(|w| w.final_position).max().unwrap_or(0),
            };
            ctx.json(Some(&spec), &s)?;
            ctx.csv("", |w| Ok(write_batch_csv(w, &batch)?))?;
            if a.trajectory && a.n > 0 {
                let env = match mode {
                    SamplingMode::Annealed => walker_environment(&spec, a.n, seed, 0)?,
                    SamplingMode::Quenched => shared_environment(&spec, a.n, seed)?,
                };
                let mut rng = stream_rng(seed, domain::WALKER_STEPS, 0);
                let t = run_until(&env, 0, &StopSpec::horizon(a.n), &mut rng)?;
                ctx.csv("-trajectory", |w| Ok(write_trajectory_csv(w, &t)?))?;
            }
            format!("median X_n = {}, mean X_n = {:.3} over {} walkers", s.median_position, s.mean_position, s.walkers)
        }
        Command::ExitProb(a) => {
            let side = match a.side {
                ExitSideArg::Minus => ExitSide::Minus,
                ExitSideArg::Plus => ExitSide::Plus,
            };
            let lo = a.a.min(a.b) - spec.max_left() as i64;
            let env = sample_environment(spec.clone(), lo, a.a.max(a.b), seed)?;
            let closed = exit_prob_closed(&env, a.k, a.a, a.b, side)?;
            let linear = exit_prob_linear(&env, a.k, a.a, a.b, side)?;
            let r = ExitResult { closed, linear, discrepancy: (closed - linear).abs() };
            ctx.json(Some(&spec), &r)?;
            format!("P = {linear:.12} (closed form {closed:.12}, |diff| = {:.3e})", r.discrepancy)
        }
        Command::Survival(a) => {
            if a.envs == 0 {
                return Err(Failure::invalid(anyhow!("--envs must be >= 1")));
            }
            let rows = (0..a.envs)
                .map(|i| -> Result<TrapRow, Failure> {
                    let env_seed = derive_seed(seed, &[domain::TRAP_ENV, i as u64]);
                    let env = sample_environment(spec.clone(), -a.n_arm, a.m_arm, env_seed)?;
                    let q = trap_quantities(&env, a.n_arm, a.m_arm)?;
                    Ok(TrapRow {
                        env_id: i,
                        quantities: q,
                        survival_n: survival_exact(&env, a.n_arm, a.m_arm, a.steps)?,
                        survival_bound: survival_lower_bound(q.gamma_u, a.steps),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let s = SurvivalSummary {
                envs: rows.len(),
                min_survival: rows.iter().map(|r| r.survival_n).fold(f64::INFINITY, f64::min),
                bound_holds: rows.iter().filter(|r| r.survival_n >= r.survival_bound).count(),
            };
            ctx.json(Some(&spec), &rows)?;
            ctx.csv("", |w| Ok(write_trap_rows(w, &rows)?))?;
            format!(
                "survival bound holds in {}/{} environments, min survival = {:.6e}",
                s.bound_holds, s.envs, s.min_survival
            )
        }
        Command::TrapScan(a) => {
            let k = match a.k.trim() {
                "auto" => TrapWidth::Auto,
                v => TrapWidth::Fixed(v.parse().map_err(|e| anyhow!("--k {v:?}: {e}"))?),
            };
            let (report, all_zero) = match trap_frequency_scan(&spec, &a.n_grid, k, a.env_samples, seed) {
                Ok(r) => (r, false),
                Err(SlowdownError::AllZero { report, .. }) => (*report, true),
                Err(e) => return Err(e.into()),
            };
            ctx.json(Some(&spec), &report)?;
            ctx.csv("", |w| Ok(report::write_trap_scan_csv(w, &report)?))?;
            for f in &report.flags {
                eprintln!("warning: {f}");
            }
            if all_zero {
                format!("no traps found at any n (K = {}); try a larger K", report.k)
            } else {
                match report.fit {
                    Some(f) => format!(
                        "slope = {:.4} +- {:.4} (target [{:.4}, {:.4}]){}",
                        f.fit.slope,
                        f.fit.slope_std_error,
                        f.target.0,
                        f.target.1,
                        if report.flagged() { ", FLAGGED" } else { "" }
                    ),
                    None => "no slope fitted, FLAGGED".into(),
                }
            }
        }
        Command::Slowdown(a) => {
            let r = slowdown_curve(&spec, &a.s_prime, &a.n_grid, a.walkers, seed)?;
            ctx.json(None, &r)?;
            ctx.csv("", |w| Ok(report::write_slowdown_csv(w, &r)?))?;
            let last = r.rows.last().expect("non-empty grids");
            format!(
                "s = {:.6}; median at n = {}, s' = {}: {:.6}",
                r.s, last.n, last.s_prime, last.median
            )
        }
        Command::Tail(a) => {
            let e = annealed_tail(&spec, a.n, a.s_prime, a.walkers, seed)?;
            ctx.json(Some(&spec), &e)?;
            format!("P(X_n > n^{}) = {:.6} +- {:.6}", a.s_prime, e.value, e.std_error)
        }
    };
    Ok(Outcome { summary, files: ctx.files })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = cli
        .common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let seed = cli.common.seed.unwrap_or_else(fresh_seed);
    if cli.common.seed.is_none() {
        eprintln!("seed: {seed}");
    }
    let start = Instant::now();
    match pool.install(|| run(&cli, seed)) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            let name = cli.command.name();
            let meta = RunMeta {
                tool: report::TOOL,
                version: report::VERSION,
                command: name,
                seed,
                workers,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
                files: outcome.files.iter().map(|p| p.display().to_string()).collect(),
            };
            let path = report::meta_path(&cli.common.out.join(format!("{name}.json")));
            if let Err(e) = report::write_meta(&path, &meta) {
                eprintln!("warning: could not write {}: {e}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
