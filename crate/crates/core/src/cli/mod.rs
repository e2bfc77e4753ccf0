//! The `consensus-lab` command line: `simulate`, `theory`, `oracle` and
//! `compare`. Data goes to stdout or `--out`; errors go to stderr as one JSON
//! object per line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::oracle::{self, ExactChain, OracleError};
use crate::sim::{self, AdversaryPolicy, Budget, Direction, SimConfig, SimError, DEFAULT_SEED};
use crate::stats::{self, EmpiricalDist, Prediction, RunMeta, StatsError, TabulatedSurvival, Tolerances};
use crate::theory::{self, GFunctionApprox, TheoryError};
use crate::update_fn::{params, MajorityTypeFunction, ProtocolSpec};

/// Exit code for invalid flags, unreadable inputs and schema mismatches.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when `g` cannot be computed to the requested tolerance.
pub const EXIT_CONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "consensus-lab", version, about = "Simulate and predict consensus times of majority-type dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo batch and write its CSV.
    Simulate(SimulateArgs),
    /// Emit plot data and predicted runtime laws.
    Theory(TheoryArgs),
    /// Exact runtime laws and dominance checks for small n.
    Oracle(OracleArgs),
    /// Compare a batch with a predicted (and optionally an exact) law.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<u64>,
    /// JSON or shorthand such as `kmaj:3`.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    runs: Option<u64>,
    /// Initial bias: x0 = round(n/2 + d√n).
    #[arg(long, conflicts_with = "x0", allow_hyphen_values = true)]
    d: Option<f64>,
    #[arg(long)]
    x0: Option<u64>,
    /// `none`, or DIR:pow:ALPHA / DIR:sqrtln with DIR one of
    /// toward_minority, toward_majority, random.
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    /// Also write per-round trajectories to this CSV.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    max_rounds: Option<u32>,
    /// JSON file with any of the above; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("emit").required(true).args(["emit_f_grid", "emit_z_density", "emit_g", "emit_runtime_cdf"])))]
struct TheoryArgs {
    #[arg(long)]
    protocol: String,
    /// Columns `x f`.
    #[arg(long)]
    emit_f_grid: bool,
    /// Density of -log_γ|Z|, columns `x density`; needs --d.
    #[arg(long, requires = "d")]
    emit_z_density: bool,
    /// Columns `x g_minus_g0`, with g0 and diagnostics in `<out>.meta.json`.
    #[arg(long)]
    emit_g: bool,
    /// CSV `s,P_R_geq_s`; needs --n and --d.
    #[arg(long, requires_all = ["n", "d"])]
    emit_runtime_cdf: bool,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    protocol: String,
    #[arg(long, required_unless_present = "dominance")]
    x0: Option<usize>,
    /// Fixed horizon; by default propagation stops once less than 1e-12
    /// mass is unabsorbed.
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long, requires_all = ["x", "xprime"], conflicts_with = "x0")]
    dominance: bool,
    #[arg(long)]
    x: Option<f64>,
    #[arg(long)]
    xprime: Option<f64>,
    /// Binary dump of the transition kernel.
    #[arg(long)]
    kernel_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Batch CSV from `simulate`.
    #[arg(long)]
    batch: PathBuf,
    /// Runtime CSV from `theory --emit-runtime-cdf` (or any `s,P_R_geq_s`).
    #[arg(long)]
    theory: PathBuf,
    /// Runtime CSV from `oracle`.
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<f64>,
    /// Predicted P(X wins); by default the Gaussian race at d.
    #[arg(long)]
    win_probability: Option<f64>,
    #[arg(long)]
    tol_sup: Option<f64>,
    #[arg(long)]
    tol_winner: Option<f64>,
    #[arg(long)]
    tol_mean: Option<f64>,
    #[arg(long)]
    tol_oracle: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    kind: &'static str,
    message: String,
}

impl CliError {
    fn usage(message: impl ToString) -> Self {
        CliError { code: EXIT_USAGE, kind: "invalid_input", message: message.to_string() }
    }

    fn schema(message: impl ToString) -> Self {
        CliError { code: EXIT_USAGE, kind: "schema_mismatch", message: message.to_string() }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError { code: 1, kind: "io", message: format!("{}: {err}", path.display()) }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(err) => CliError { code: 1, kind: "io", message: err.to_string() },
            other => CliError::usage(other),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::InvalidArgument(_)
            | TheoryError::InvalidTolerance(_)
            | TheoryError::InvalidGamma(_)
            | TheoryError::UpdateFn(_) => CliError::usage(e),
            _ => CliError { code: EXIT_CONVERGENCE, kind: "convergence", message: e.to_string() },
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NotAbsorbed { .. } | OracleError::Singular => {
                CliError { code: 1, kind: "numeric", message: e.to_string() }
            }
            other => CliError::usage(other),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::schema(e)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T, W1, W2>(args: I, stdout: &mut W1, stderr: &mut W2) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W1: Write,
    W2: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    report(stderr, &CliError::usage(e.render().to_string().trim_end()));
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, stdout),
        Command::Theory(a) => theory_cmd(a, stdout),
        Command::Oracle(a) => oracle_cmd(a, stdout),
        Command::Compare(a) => compare(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            report(stderr, &e);
            e.code
        }
    }
}

fn report<W: Write>(stderr: &mut W, e: &CliError) {
    let line = json!({ "error": e.kind, "exit_code": e.code, "message": e.message });
    let _ = writeln!(stderr, "{line}");
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid seed {s:?}: {e}"))
}

fn parse_protocol(s: &str) -> Result<ProtocolSpec, CliError> {
    s.parse::<ProtocolSpec>().map_err(CliError::usage)
}

fn parse_adversary(s: &str) -> Result<AdversaryPolicy, CliError> {
    let s = s.trim();
    if s.starts_with('{') {
        let policy: AdversaryPolicy = serde_json::from_str(s).map_err(CliError::usage)?;
        policy.check()?;
        return Ok(policy);
    }
    if s == "none" {
        return Ok(AdversaryPolicy::none());
    }
    let mut parts = s.split(':');
    let direction = match parts.next().unwrap_or_default() {
        "toward_minority" | "minority" => Direction::TowardMinority,
        "toward_majority" | "majority" => Direction::TowardMajority,
        "random" => Direction::Random,
        other => return Err(CliError::usage(format!("unknown adversary direction {other:?}"))),
    };
    let budget = match (parts.next(), parts.next(), parts.next()) {
        (Some("pow"), Some(alpha), None) => {
            let alpha = alpha.parse().map_err(|_| CliError::usage(format!("bad exponent {alpha:?}")))?;
            Budget::Power { alpha }
        }
        (Some("sqrtln"), None, None) => Budget::SqrtOverLn,
        _ => return Err(CliError::usage(format!("adversary {s:?} must look like DIR:pow:ALPHA or DIR:sqrtln"))),
    };
    Ok(AdversaryPolicy::new(budget, direction)?)
}

fn write_output<W: Write>(out: &Option<PathBuf>, bytes: &[u8], stdout: &mut W) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| CliError::io(path, e)),
        None => stdout
            .write_all(bytes)
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError { code: EXIT_USAGE, ..CliError::io(path, e) })
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_sidecar(out: &Option<PathBuf>, meta: &Value) -> Result<(), CliError> {
    if let Some(path) = out {
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(meta).expect("json values serialize");
        fs::write(&side, text + "\n").map_err(|e| CliError::io(&side, e))?;
    }
    Ok(())
}

/// The optional JSON config of `simulate`.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n: Option<u64>,
    /// Object form or shorthand string.
    protocol: Option<Value>,
    runs: Option<u64>,
    d: Option<f64>,
    x0: Option<u64>,
    adversary: Option<Value>,
    seed: Option<u64>,
    max_rounds: Option<u32>,
    trajectories: Option<PathBuf>,
}

fn protocol_from_value(v: Value) -> Result<ProtocolSpec, CliError> {
    match v {
        Value::String(s) => parse_protocol(&s),
        other => {
            let spec: ProtocolSpec = serde_json::from_value(other).map_err(CliError::usage)?;
            spec.check().map_err(CliError::usage)?;
            Ok(spec)
        }
    }
}

fn simulate<W: Write>(a: SimulateArgs, stdout: &mut W) -> Result<i32, CliError> {
    let file: FileConfig = match &a.config {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        None => FileConfig::default(),
    };
    let n = a.n.or(file.n).ok_or_else(|| CliError::usage("--n is required"))?;
    let protocol = match (&a.protocol, file.protocol) {
        (Some(s), _) => parse_protocol(s)?,
        (None, Some(v)) => protocol_from_value(v)?,
        (None, None) => return Err(CliError::usage("--protocol is required")),
    };
    let runs = a.runs.or(file.runs).ok_or_else(|| CliError::usage("--runs is required"))?;
    if file.d.is_some() && file.x0.is_some() {
        return Err(CliError::usage("config sets both d and x0"));
    }
    let x0 = match (a.x0, a.d, file.x0, file.d) {
        (Some(x0), ..) => x0,
        (None, Some(d), ..) => sim::x0_from_d(n, d),
        (None, None, Some(x0), _) => x0,
        (None, None, None, d) => sim::x0_from_d(n, d.unwrap_or(0.0)),
    };
    let adversary = match (&a.adversary, file.adversary) {
        (Some(s), _) => parse_adversary(s)?,
        (None, Some(Value::String(s))) => parse_adversary(&s)?,
        (None, Some(v)) => {
            let policy: AdversaryPolicy = serde_json::from_value(v).map_err(CliError::usage)?;
            policy.check()?;
            policy
        }
        (None, None) => AdversaryPolicy::none(),
    };
    let seed = a.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let trajectories = a.trajectories.or(file.trajectories);

    let mut config = SimConfig::new(n, x0, protocol)?
        .with_adversary(adversary)
        .with_seed(seed)
        .with_trajectory(trajectories.is_some());
    if let Some(cap) = a.max_rounds.or(file.max_rounds) {
        config.max_rounds = cap;
        config.check()?;
    }
    let outcomes = sim::batch(&config, runs, seed)?;

    let mut buf = Vec::new();
    sim::write_batch_csv(&mut buf, &config, &outcomes)?;
    write_output(&a.out, &buf, stdout)?;
    if let Some(path) = trajectories {
        let mut buf = Vec::new();
        sim::write_trajectories_csv(&mut buf, &outcomes)?;
        fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(0)
}

fn theory_cmd<W: Write>(a: TheoryArgs, stdout: &mut W) -> Result<i32, CliError> {
    let spec = parse_protocol(&a.protocol)?;
    let p = params(&spec).map_err(CliError::usage)?;
    if a.emit_f_grid {
        if a.points == 0 {
            return Err(CliError::usage("--points must be positive"));
        }
        let f = MajorityTypeFunction::new(spec).map_err(CliError::usage)?;
        write_output(&a.out, theory::f_grid_text(&f, a.points).as_bytes(), stdout)?;
    } else if a.emit_z_density {
        if !(a.step > 0.0) {
            return Err(CliError::usage("--step must be positive"));
        }
        let z = theory::GaussianZ::new(a.d.unwrap_or_default(), p.gamma)?;
        write_output(&a.out, theory::z_density_text(&z, p.gamma, a.step).as_bytes(), stdout)?;
    } else if a.emit_g {
        let g = GFunctionApprox::build(&spec, a.tol)?;
        write_output(&a.out, theory::g_plot_text(&g).as_bytes(), stdout)?;
        write_sidecar(
            &a.out,
            &json!({
                "protocol": spec.to_string(),
                "g0": g.g0(),
                "mean": g.mean(),
                "range": g.range(),
                "a_used": g.a_used,
                "b_used": g.b_used,
                "tol": g.tol,
            }),
        )?;
    } else {
        let (n, d) = (a.n.unwrap_or_default(), a.d.unwrap_or_default());
        let g = GFunctionApprox::build(&spec, a.tol)?;
        let law = theory::runtime_cdf_prediction(&spec, n, d, &g)?;
        let (lo, hi) = law.support_hint();
        write_output(&a.out, theory::runtime_cdf_csv(&law, lo.min(0), hi + 1).as_bytes(), stdout)?;
        write_sidecar(&a.out, &json!({ "protocol": spec.to_string(), "n": n, "d": d }))?;
    }
    Ok(0)
}

fn oracle_cmd<W: Write>(a: OracleArgs, stdout: &mut W) -> Result<i32, CliError> {
    let spec = parse_protocol(&a.protocol)?;
    if !(2..=oracle::MAX_N).contains(&a.n) {
        return Err(OracleError::NOutOfRange(a.n).into());
    }
    let chain = ExactChain::build(a.n, &spec)?;
    if let Some(path) = &a.kernel_out {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        chain.write_kernel(std::io::BufWriter::new(file)).map_err(|e| CliError::io(path, e))?;
    }
    if a.dominance {
        let (x, xp) = (a.x.unwrap_or_default(), a.xprime.unwrap_or_default());
        let result = oracle::dominance_check(&chain, x, xp)?;
        let line = match (result.holds, result.worst_s) {
            (true, _) => "PASS\n".to_string(),
            (false, Some(s)) => format!("FAIL s={s}\n"),
            (false, None) => "FAIL\n".to_string(),
        };
        write_output(&a.out, line.as_bytes(), stdout)?;
        return Ok(0);
    }
    let x0 = a.x0.unwrap_or_default();
    let dist = match a.t_max {
        Some(t) => oracle::runtime_distribution(&chain, x0, t)?,
        None => oracle::runtime_distribution_until(&chain, x0, 1e-12, 1_000_000)?,
    };
    write_output(&a.out, dist.to_csv().as_bytes(), stdout)?;
    let nf = a.n as f64;
    write_sidecar(
        &a.out,
        &json!({ "protocol": spec.to_string(), "n": a.n, "d": (x0 as f64 - nf / 2.0) / nf.sqrt() }),
    )?;
    Ok(0)
}

/// Metadata of a runtime table: its sidecar if present, then `fallback`.
fn table_meta(path: &Path, fallback: &RunMeta) -> Result<RunMeta, CliError> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(fallback.clone());
    }
    let v: Value = serde_json::from_str(&read_text(&side)?)
        .map_err(|e| CliError::schema(format!("{}: {e}", side.display())))?;
    let protocol = match v.get("protocol").and_then(Value::as_str) {
        Some(s) => Some(parse_protocol(s)?),
        None => fallback.protocol.clone(),
    };
    Ok(RunMeta {
        protocol,
        n: v.get("n").and_then(Value::as_u64).or(fallback.n),
        d: v.get("d").and_then(Value::as_f64).or(fallback.d),
    })
}

fn compare<W: Write>(a: CompareArgs, stdout: &mut W) -> Result<i32, CliError> {
    let records = sim::read_batch_csv(read_text(&a.batch)?.as_bytes())
        .map_err(|e| CliError::schema(format!("{}: {e}", a.batch.display())))?;
    let flags = RunMeta {
        protocol: a.protocol.as_deref().map(parse_protocol).transpose()?,
        n: None,
        d: a.d,
    };
    let theory_meta = table_meta(&a.theory, &flags)?;
    let protocol = flags.protocol.clone().or_else(|| theory_meta.protocol.clone());
    let emp = EmpiricalDist::from_records(&records, protocol.clone())?;
    emp.meta.check_consistent(&flags)?;

    let theory_text = read_text(&a.theory)?;
    let law = TabulatedSurvival::from_csv(&theory_text, theory_meta)
        .map_err(|e| CliError::schema(format!("{}: {e}", a.theory.display())))?;
    let oracle_law = match &a.oracle {
        Some(path) => Some(
            TabulatedSurvival::from_csv(&read_text(path)?, table_meta(path, &flags)?)
                .map_err(|e| CliError::schema(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let win_probability = match (a.win_probability, &protocol) {
        (Some(p), _) => p,
        (None, Some(spec)) => {
            let d = a.d.or(law.meta.d).or(emp.meta.d).unwrap_or_default();
            theory::win_probability(d, params(spec).map_err(CliError::usage)?.gamma)?
        }
        (None, None) => {
            return Err(CliError::usage("--protocol or --win-probability is needed to predict the winner"))
        }
    };
    let defaults = Tolerances::default();
    let tol = Tolerances {
        sup_distance: a.tol_sup.unwrap_or(defaults.sup_distance),
        winner: a.tol_winner.unwrap_or(defaults.winner),
        mean_runtime: a.tol_mean.unwrap_or(defaults.mean_runtime),
        oracle_sup_distance: a.tol_oracle.unwrap_or(defaults.oracle_sup_distance),
    };
    let prediction = Prediction {
        runtime: &law,
        win_probability,
        oracle: oracle_law.as_ref().map(|o| o as &dyn stats::Survival),
    };
    let report = stats::compare_report(&emp, &prediction, tol)?;
    let text = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    write_output(&a.out, text.as_bytes(), stdout)?;
    Ok(if report.all_pass { 0 } else { 1 })
}
