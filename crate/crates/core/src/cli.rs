//! Command-line front end. Every command reads a JSON system config, writes
//! CSV files into `--out` and prints a JSON run report on stdout.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::delay_lyapunov::{self, ExtendedEvaluator, LyapunovMatrixTable, SolveOptions};
use crate::error::{Error, Result};
use crate::functional::{self, AssembledP0, FunctionalEvaluator};
use crate::monodromy::{self, FloquetSpectrum};
use crate::ode_lyapunov;
use crate::propagation::{self, FundamentalMatrixTable};
use crate::system::{self, DelaySystem, GridSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONDITION: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "perlyap", version, about = "Lyapunov matrices of periodic time-delay systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Floquet multipliers of the monodromy operator.
    Spectrum,
    /// Check that no two multipliers multiply to one.
    Lyapcond,
    /// Solve for the Lyapunov matrix on [0, h]^2 and check its properties.
    Lyapmat,
    /// Periodic Lyapunov matrix of the delay-free part x' = A0(t) x.
    OdeLyap,
    /// Evaluate the functional v0 on random states and check its derivative.
    Functional,
    /// Run the full residual suite against fixed thresholds.
    Verify,
}

#[derive(Args, Debug, Clone)]
pub struct Flags {
    /// System description (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Mesh intervals per delay interval (overrides the config).
    #[arg(long = "grid-m", global = true, value_name = "INT")]
    pub grid_m: Option<usize>,
    /// Integrator steps per mesh interval (overrides the config).
    #[arg(long, global = true, value_name = "INT")]
    pub substeps: Option<usize>,
    /// Tolerance on |mu_i mu_j - 1| for the Lyapunov condition.
    #[arg(long, global = true, value_name = "FLOAT", default_value_t = monodromy::DEFAULT_CONDITION_TOL)]
    pub tol: f64,
    /// Multipliers below this modulus are discarded.
    #[arg(long, global = true, value_name = "FLOAT", default_value_t = monodromy::DEFAULT_FLOOR)]
    pub floor: f64,
    #[arg(long, global = true, value_name = "INT", default_value_t = 0)]
    pub seed: u64,
    /// Random states or samples per randomized check.
    #[arg(long, global = true, value_name = "INT", default_value_t = 20)]
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridReport {
    pub m: usize,
    pub substeps: usize,
    pub quad_rule: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_digest: String,
    pub grid: GridReport,
    /// Milliseconds per stage, in execution order.
    pub timings_ms: Vec<(String, f64)>,
    pub outcome: Value,
}

struct Ctx {
    sys: DelaySystem,
    grid: GridSpec,
    flags: Flags,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Ctx {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push((stage.to_string(), (now - self.clock).as_secs_f64() * 1e3));
        self.clock = now;
    }

    fn write_csv(&self, name: &str, content: &str) -> Result<()> {
        std::fs::create_dir_all(&self.flags.out)?;
        std::fs::write(self.flags.out.join(name), content)?;
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions { floor: self.flags.floor, condition_tol: self.flags.tol, ..SolveOptions::default() }
    }
}

/// Outcome of a command: the payload and the exit code.
struct Outcome {
    payload: Value,
    code: i32,
    messages: Vec<String>,
}

impl Outcome {
    fn ok(payload: Value) -> Outcome {
        Outcome { payload, code: EXIT_OK, messages: Vec::new() }
    }
}

pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MalformedConfig(_) | Error::InvalidSystem(_) | Error::InvalidArgument(_) | Error::Io(_) => EXIT_USAGE,
        Error::NonUniqueLyapunovMatrix { .. } | Error::SingularStein { .. } => EXIT_CONDITION,
        _ => EXIT_VERIFY,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli) {
        Ok((report, messages, code)) => {
            for msg in messages {
                let _ = writeln!(err, "{msg}");
            }
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load(flags: &Flags) -> Result<(DelaySystem, GridSpec, String)> {
    let path = flags
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MalformedConfig(format!("cannot read {}: {e}", path.display())))?;
    let (sys, mut grid) = system::parse_config(&text)?;
    if let Some(m) = flags.grid_m {
        grid.m = m;
    }
    if let Some(s) = flags.substeps {
        grid.substeps = s;
    }
    grid.validate()?;
    Ok((sys, grid, digest(&text)))
}

fn execute(cli: &Cli) -> Result<(RunReport, Vec<String>, i32)> {
    let clock = Instant::now();
    let (sys, grid, config_digest) = load(&cli.flags)?;
    let mut ctx = Ctx { sys, grid, flags: cli.flags.clone(), timings: Vec::new(), clock };
    ctx.lap("load");
    let outcome = match cli.command {
        Command::Spectrum => cmd_spectrum(&mut ctx)?,
        Command::Lyapcond => cmd_lyapcond(&mut ctx)?,
        Command::Lyapmat => cmd_lyapmat(&mut ctx)?,
        Command::OdeLyap => cmd_ode_lyap(&mut ctx)?,
        Command::Functional => cmd_functional(&mut ctx)?,
        Command::Verify => cmd_verify(&mut ctx)?,
    };
    let name = match cli.command {
        Command::Spectrum => "spectrum",
        Command::Lyapcond => "lyapcond",
        Command::Lyapmat => "lyapmat",
        Command::OdeLyap => "ode-lyap",
        Command::Functional => "functional",
        Command::Verify => "verify",
    };
    let report = RunReport {
        command: name.to_string(),
        config_digest,
        grid: GridReport { m: ctx.grid.m, substeps: ctx.grid.substeps, quad_rule: ctx.grid.quad_rule.name() },
        timings_ms: ctx.timings,
        outcome: outcome.payload,
    };
    Ok((report, outcome.messages, outcome.code))
}

fn spectrum_of(ctx: &mut Ctx, kt: &FundamentalMatrixTable) -> Result<FloquetSpectrum> {
    let mono = monodromy::monodromy_matrix(kt)?;
    ctx.lap("monodromy");
    let spec = monodromy::floquet_spectrum(&mono, ctx.flags.floor)?;
    ctx.lap("eigenvalues");
    Ok(spec)
}

fn spectrum_csv(spec: &FloquetSpectrum) -> String {
    let mut s = String::from("index,re,im,modulus\n");
    for (i, z) in spec.multipliers.iter().enumerate() {
        let _ = writeln!(s, "{i},{:e},{:e},{:e}", z.re, z.im, z.norm());
    }
    s
}

fn cmd_spectrum(ctx: &mut Ctx) -> Result<Outcome> {
    let kt = propagation::fundamental_matrix(&ctx.sys, &ctx.grid)?;
    ctx.lap("fundamental");
    let spec = spectrum_of(ctx, &kt)?;
    ctx.write_csv("spectrum.csv", &spectrum_csv(&spec))?;
    Ok(Outcome::ok(json!({
        "multipliers": spec.multipliers.len(),
        "discarded": spec.discarded,
        "spectral_radius": spec.spectral_radius(),
        "stability": monodromy::classify_stability(&spec, monodromy::DEFAULT_STABILITY_MARGIN),
    })))
}

fn pairs_csv(rep: &monodromy::LyapunovConditionReport) -> String {
    let mut s = String::from("i,j,mu_i_re,mu_i_im,mu_j_re,mu_j_im,distance\n");
    for p in &rep.violations {
        let _ = writeln!(s, "{},{},{:e},{:e},{:e},{:e},{:e}", p.i, p.j, p.mu_i.re, p.mu_i.im, p.mu_j.re, p.mu_j.im, p.distance);
    }
    s
}

fn cmd_lyapcond(ctx: &mut Ctx) -> Result<Outcome> {
    let kt = propagation::fundamental_matrix(&ctx.sys, &ctx.grid)?;
    ctx.lap("fundamental");
    let spec = spectrum_of(ctx, &kt)?;
    let rep = monodromy::lyapunov_condition(&spec, ctx.flags.tol);
    ctx.write_csv("spectrum.csv", &spectrum_csv(&spec))?;
    ctx.write_csv("violations.csv", &pairs_csv(&rep))?;
    let mut out = Outcome::ok(serde_json::to_value(&rep).unwrap_or(Value::Null));
    if !rep.holds {
        out.code = EXIT_CONDITION;
        out.messages.push(rep.summary());
        for p in &rep.violations {
            out.messages.push(format!(
                "violating pair ({}, {}): {:.6}{:+.6}i * {:.6}{:+.6}i, |mu_i mu_j - 1| = {:e}",
                p.i, p.j, p.mu_i.re, p.mu_i.im, p.mu_j.re, p.mu_j.im, p.distance
            ));
        }
    }
    Ok(out)
}

fn solve(ctx: &mut Ctx) -> Result<Arc<LyapunovMatrixTable>> {
    let kt = Arc::new(propagation::fundamental_matrix(&ctx.sys, &ctx.grid)?);
    ctx.lap("fundamental");
    let solver = delay_lyapunov::LyapunovSolver::new(kt, &ctx.solve_options())?;
    ctx.lap("factorize");
    let tab = Arc::new(solver.solve(&ctx.sys.w)?);
    ctx.lap("solve");
    Ok(tab)
}

pub fn u0_csv(tab: &LyapunovMatrixTable) -> String {
    let d = tab.delta();
    let mut s = String::from("theta,s,i,j,value\n");
    for a in 0..=tab.m {
        for b in 0..=tab.m {
            let u = tab.get(a, b);
            for i in 0..tab.n {
                for j in 0..tab.n {
                    let _ = writeln!(s, "{:e},{:e},{i},{j},{:e}", a as f64 * d, b as f64 * d, u[(i, j)]);
                }
            }
        }
    }
    s
}

pub fn property_report(res: &delay_lyapunov::PropertyResiduals) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[properties]");
    let _ = writeln!(s, "symmetry_max_residual = {:e}", res.symmetry);
    let _ = writeln!(s, "periodicity_max_residual = {:e}", res.periodicity);
    let _ = writeln!(s, "pde_max_residual = {:e}", res.pde);
    let _ = writeln!(s, "ode_max_residual = {:e}", res.ode);
    let _ = writeln!(s, "fd_step = {:e}", res.fd_step);
    let _ = writeln!(s, "samples = {}", res.samples);
    s
}

fn cmd_lyapmat(ctx: &mut Ctx) -> Result<Outcome> {
    let tab = match solve(ctx) {
        Err(e @ Error::NonUniqueLyapunovMatrix { .. }) => {
            return Ok(Outcome { payload: json!({ "error": e.to_string() }), code: EXIT_CONDITION, messages: vec![e.to_string()] });
        }
        r => r?,
    };
    ctx.write_csv("u0.csv", &u0_csv(&tab))?;
    let ev = ExtendedEvaluator::new(tab.clone());
    let res = delay_lyapunov::property_residuals(&ev)?;
    ctx.lap("properties");
    std::fs::write(ctx.flags.out.join("properties.txt"), property_report(&res))?;
    Ok(Outcome::ok(json!({ "solve": tab.info, "properties": res })))
}

fn cmd_ode_lyap(ctx: &mut Ctx) -> Result<Outcome> {
    let fund = ode_lyapunov::ode_fundamental(&ctx.sys.a0, &ctx.grid)?;
    ctx.lap("fundamental");
    let samples = ctx.grid.m;
    let rep = match ode_lyapunov::check_periodic_lyapunov(&fund, &ctx.sys.w, samples) {
        Err(e @ Error::SingularStein { .. }) => {
            return Ok(Outcome { payload: json!({ "error": e.to_string() }), code: EXIT_CONDITION, messages: vec![e.to_string()] });
        }
        r => r?,
    };
    let lyap = ode_lyapunov::OdeLyapunov::new(fund, &ctx.sys.w)?;
    let tp = ctx.sys.period;
    let mut s = String::from("t,i,j,value\n");
    for k in 0..=samples {
        let t = k as f64 * tp / samples as f64;
        let p = lyap.p(t)?;
        for i in 0..ctx.sys.n {
            for j in 0..ctx.sys.n {
                let _ = writeln!(s, "{t:e},{i},{j},{:e}", p[(i, j)]);
            }
        }
    }
    ctx.lap("periodic_p");
    ctx.write_csv("ode_p.csv", &s)?;
    Ok(Outcome::ok(serde_json::to_value(&rep).unwrap_or(Value::Null)))
}

fn cmd_functional(ctx: &mut Ctx) -> Result<Outcome> {
    let tab = match solve(ctx) {
        Err(e @ Error::NonUniqueLyapunovMatrix { .. }) => {
            return Ok(Outcome { payload: json!({ "error": e.to_string() }), code: EXIT_CONDITION, messages: vec![e.to_string()] });
        }
        r => r?,
    };
    let (n, m, h) = (ctx.sys.n, tab.m, ctx.sys.h);
    let p0 = AssembledP0::new(&tab);
    let fe = FunctionalEvaluator::from_table(tab.clone());
    let states = functional::random_states(n, m, h, ctx.flags.trials.max(1), ctx.flags.seed);
    let mut s = String::from("trial,v0,norm_sq\n");
    for (k, phi) in states.iter().enumerate() {
        let _ = writeln!(s, "{k},{:e},{:e}", fe.v0(0.0, phi)?, phi.norm_sq());
    }
    ctx.write_csv("functional.csv", &s)?;
    ctx.lap("v0");
    let stein = functional::operator_stein_residual(&p0, &tab.kt, &states)?;
    ctx.lap("operator_stein");
    let horizon = ctx.sys.period + 2.0 * h;
    let dc = functional::derivative_check(&fe, &states[0], 0.0, horizon, 6)?;
    let mut s = String::from("t,fd_derivative,prescribed,abs_error\n");
    for r in &dc.samples {
        let _ = writeln!(s, "{:e},{:e},{:e},{:e}", r.t, r.fd_derivative, r.prescribed, r.abs_error);
    }
    ctx.write_csv("derivative.csv", &s)?;
    ctx.lap("derivative_check");
    let spec = monodromy::floquet_spectrum(&monodromy::monodromy_matrix(&tab.kt)?, ctx.flags.floor)?;
    let nonneg = functional::nonnegativity_probe(&p0, &spec, &states);
    ctx.lap("nonnegativity");
    Ok(Outcome::ok(json!({
        "operator_stein_residual": stein.max_relative,
        "derivative_fd_residual": dc.max_residual,
        "fd_step": dc.fd_step,
        "nonnegativity": nonneg,
    })))
}

/// One row of the verification table.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.to_string(), value, threshold, passed: value < threshold }
    }
}

fn verify_checks(ctx: &mut Ctx, tab: &Arc<LyapunovMatrixTable>) -> Result<Vec<Check>> {
    let sys = ctx.sys.clone();
    let (n, m, h, tp) = (sys.n, tab.m, sys.h, sys.period);
    let kt = tab.kt.clone();
    let trials = ctx.flags.trials.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.flags.seed);
    let mut checks = Vec::new();

    let ev = ExtendedEvaluator::new(tab.clone());
    let res = delay_lyapunov::property_residuals(&ev)?;
    checks.push(Check::new("symmetry", res.symmetry, 1e-8));
    checks.push(Check::new("periodicity", res.periodicity, 1e-6));
    ctx.lap("properties");

    let mut comp = 0.0f64;
    for _ in 0..5 * trials {
        let s = rng.random_range(0.0..tp);
        let xi = s + rng.random_range(0.0..tp);
        let t = xi + rng.random_range(0.0..tp);
        comp = comp.max(propagation::composition_residual(&kt, t, xi, s)?.amax());
    }
    checks.push(Check::new("composition", comp, 1e-4));
    ctx.lap("composition");

    let mut g = 0.0f64;
    for _ in 0..50 {
        let th = rng.random_range(0.0..tp);
        let s = rng.random_range(0.0..h);
        g = g.max((ev.g(th, s)? - ev.eval(th - tp, s)?).amax());
    }
    checks.push(Check::new("connection", g, 1e-5));
    ctx.lap("connection");

    let p0 = AssembledP0::new(tab);
    let states = functional::random_states(n, m, h, trials, ctx.flags.seed);
    let stein = functional::operator_stein_residual(&p0, &kt, &states)?;
    checks.push(Check::new("operator_stein", stein.max_relative, 1e-4));
    ctx.lap("operator_stein");

    let fe = FunctionalEvaluator::from_table(tab.clone());
    let horizon = tp + 2.0 * h;
    let windows = functional::random_windows(h, horizon, tab.delta(), trials, &mut rng);
    let integ = functional::integrated_residuals(&fe, &states[0], 0.0, &windows)?;
    checks.push(Check::new("derivative_integrated", integ.iter().copied().fold(0.0, f64::max), 1e-5));
    let dc = functional::derivative_check(&fe, &states[0], 0.0, horizon, 5)?;
    checks.push(Check::new("derivative_pointwise", dc.max_residual, 1e-4));
    ctx.lap("derivative");

    let spec = monodromy::floquet_spectrum(&monodromy::monodromy_matrix(&kt)?, ctx.flags.floor)?;
    let dual = monodromy::dual_system(&sys)?;
    let dkt = propagation::fundamental_matrix(&dual, &ctx.grid)?;
    let dspec = monodromy::floquet_spectrum(&monodromy::monodromy_matrix(&dkt)?, ctx.flags.floor)?;
    checks.push(Check::new("dual_spectrum", monodromy::hausdorff_distance(&spec, &dspec, 1e-2), 1e-3));
    ctx.lap("dual_spectrum");

    let fund = ode_lyapunov::ode_fundamental(&sys.a0, &ctx.grid)?;
    if let Ok(lyap) = ode_lyapunov::OdeLyapunov::new(fund, &sys.w) {
        let scale = 1.0 + lyap.p0.norm();
        checks.push(Check::new("ode_stein", lyap.stein_residual() / scale, 1e-10));
    }
    ctx.lap("ode_stein");
    Ok(checks)
}

fn cmd_verify(ctx: &mut Ctx) -> Result<Outcome> {
    let tab = match solve(ctx) {
        Err(e @ Error::NonUniqueLyapunovMatrix { .. }) => {
            return Ok(Outcome { payload: json!({ "error": e.to_string() }), code: EXIT_CONDITION, messages: vec![e.to_string()] });
        }
        r => r?,
    };
    let checks = verify_checks(ctx, &tab)?;
    let mut s = String::from("check,value,threshold,passed\n");
    for c in &checks {
        let _ = writeln!(s, "{},{:e},{:e},{}", c.name, c.value, c.threshold, c.passed);
    }
    ctx.write_csv("verify.csv", &s)?;
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let messages = failed
        .iter()
        .map(|c| format!("check {} failed: {:e} >= {:e}", c.name, c.value, c.threshold))
        .collect();
    let code = if failed.is_empty() { EXIT_OK } else { EXIT_VERIFY };
    Ok(Outcome { payload: json!({ "checks": checks }), code, messages })
}
