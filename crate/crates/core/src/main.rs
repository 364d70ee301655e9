use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use drlm::io::{
    default_output_root, execute_run, load_config, load_reference_table, parse_rational,
    snapshot_file_name, write_centerline, write_field_snapshot, write_rate_table,
    DiagnosticsWriter, ProblemKind, RunConfig, Viscosity,
};
use drlm::problems::{
    centerline_against, extract_centerline, run_cavity, run_convergence_study, CavityParams,
    ConvergenceStudy,
};
use drlm::{Error, Preconditioner, SchemeKind, SolverConfig};

#[derive(Parser)]
#[command(
    name = "drlm",
    version,
    about = "Energy-stable pressure-correction Navier-Stokes solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (config file plus flag overrides).
    Run(RunArgs),
    /// Temporal convergence study on the lattice vortex.
    Converge(ConvergeArgs),
    /// Lid-driven cavity with centerline extraction.
    Cavity(CavityArgs),
    /// Operator identities and dense-oracle agreement.
    Selftest {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn rational(s: &str) -> Result<f64, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct SolverArgs {
    /// Relative residual tolerance of the linear solves.
    #[arg(long, value_parser = rational)]
    rel_tol: Option<f64>,
    #[arg(long, value_parser = rational)]
    abs_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Poisson preconditioner: jacobi or cosine.
    #[arg(long)]
    preconditioner: Option<Preconditioner>,
}

impl SolverArgs {
    fn apply(&self, s: &mut SolverConfig) {
        if let Some(v) = self.rel_tol {
            s.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            s.abs_tol = v;
        }
        if self.max_iter.is_some() {
            s.max_iter = self.max_iter;
        }
        if let Some(p) = self.preconditioner {
            s.poisson_preconditioner = p;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// INI config with [grid], [scheme], [problem], [solver], [output].
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long, value_parser = rational)]
    tau: Option<f64>,
    #[arg(long, value_parser = rational)]
    theta: Option<f64>,
    #[arg(long, value_parser = rational, conflicts_with = "re")]
    nu: Option<f64>,
    #[arg(long, value_parser = rational)]
    re: Option<f64>,
    #[arg(long = "T", value_parser = rational)]
    t_end: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',', value_parser = rational)]
    snapshots: Option<Vec<f64>>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    no_convection: bool,
    #[arg(long)]
    no_invariants: bool,
    /// Output directory (default: $DRLM_OUTPUT_ROOT/run).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `section.key=value` overrides.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long, value_parser = rational, default_value = "0.1")]
    nu: f64,
    #[arg(long, value_parser = rational, default_value = "1")]
    theta: f64,
    #[arg(long, default_value_t = 128)]
    nx: usize,
    #[arg(long, value_delimiter = ',', value_parser = rational, default_value = "1/32,1/64,1/128,1/256")]
    taus: Vec<f64>,
    #[arg(long = "T", value_parser = rational, default_value = "1")]
    t_end: f64,
    #[arg(long, default_value = "pdrlm1")]
    scheme: SchemeKind,
    #[arg(long)]
    no_invariants: bool,
    /// CSV path (default: $DRLM_OUTPUT_ROOT/rates.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CavityArgs {
    #[arg(long, value_parser = rational, default_value = "1000")]
    re: f64,
    #[arg(long, value_parser = rational, default_value = "100")]
    theta: f64,
    #[arg(long, default_value_t = 128)]
    nx: usize,
    #[arg(long, value_parser = rational, default_value = "0.002")]
    tau: f64,
    #[arg(long = "T", value_parser = rational, default_value = "30")]
    t_end: f64,
    #[arg(long, default_value = "pdrlm1")]
    scheme: SchemeKind,
    #[arg(long, value_delimiter = ',', value_parser = rational)]
    snapshots: Option<Vec<f64>>,
    /// Reference u(0.5, y) table.
    #[arg(long)]
    reference_u: Option<PathBuf>,
    /// Reference v(x, 0.5) table.
    #[arg(long)]
    reference_v: Option<PathBuf>,
    /// Fail unless the u centerline is within this distance of the reference.
    #[arg(long, value_parser = rational)]
    max_deviation: Option<f64>,
    #[arg(long)]
    no_invariants: bool,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output directory (default: $DRLM_OUTPUT_ROOT/cavity).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Failures that are the user's fault exit with 2, computational ones with 1.
fn is_usage(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(
            Error::Config { .. }
                | Error::Argument { .. }
                | Error::Reference { .. }
                | Error::Io { .. }
        )
    )
}

fn build_run_config(a: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.problem {
        cfg.problem = v;
    }
    if let Some(v) = a.scheme {
        cfg.kind = v;
    }
    if let Some(v) = a.nx {
        cfg.nx = v;
        if a.ny.is_none() {
            cfg.ny = v;
        }
    }
    if let Some(v) = a.ny {
        cfg.ny = v;
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.theta {
        cfg.theta = v;
    }
    if let Some(v) = a.nu {
        cfg.viscosity = Viscosity::Nu(v);
    }
    if let Some(v) = a.re {
        cfg.viscosity = Viscosity::Re(v);
    }
    if let Some(v) = a.t_end {
        cfg.t_end = v;
    }
    if let Some(v) = &a.snapshots {
        cfg.snapshot_times = v.clone();
    }
    if let Some(v) = a.stride {
        cfg.stride = v;
    }
    if a.no_convection {
        cfg.convection = false;
    }
    if a.no_invariants {
        cfg.assert_invariants = false;
    }
    if let Some(o) = &a.out {
        cfg.output_dir = Some(o.clone());
    }
    for s in &a.sets {
        let (path, value) = s.split_once('=').ok_or_else(|| Error::Argument {
            field: s.clone(),
            message: "expected section.key=value".into(),
        })?;
        let (sec, key) = path.split_once('.').ok_or_else(|| Error::Argument {
            field: s.clone(),
            message: "expected section.key=value".into(),
        })?;
        cfg.set(sec.trim(), &key.trim().to_ascii_lowercase(), value)?;
    }
    a.solver.apply(&mut cfg.solver);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(a: &RunArgs) -> anyhow::Result<()> {
    let cfg = build_run_config(a)?;
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| default_output_root().join("run"));
    let summary = execute_run(&cfg, &dir)?;
    println!(
        "{} steps of {} on the {} problem, {} diagnostics rows in {}",
        summary.steps,
        cfg.kind,
        format!("{:?}", cfg.problem).to_lowercase(),
        summary.rows_written,
        summary.diagnostics_path.display()
    );
    println!("final Q = {:.12}", summary.final_state.q);
    if let Some(e) = summary.errors {
        println!(
            "errors at t = {}: e_u = {:.6e}, e_p = {:.6e}, e_Q = {:.6e}",
            e.t, e.e_u, e.e_p, e.e_q
        );
    }
    Ok(())
}

fn cmd_converge(a: &ConvergeArgs) -> anyhow::Result<()> {
    let mut solver = SolverConfig::default();
    a.solver.apply(&mut solver);
    let study = ConvergenceStudy {
        nu: a.nu,
        theta: a.theta,
        nx: a.nx,
        taus: a.taus.clone(),
        t_end: a.t_end,
        kind: a.scheme,
        solver,
        assert_invariants: !a.no_invariants,
    };
    let table = run_convergence_study(&study)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_output_root().join("rates.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    write_rate_table(&table, &out)?;
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!(
        "{:>12} {:>12} {:>7} {:>12} {:>7} {:>12} {:>7}",
        "tau", "e_u", "rate", "e_Q", "rate", "e_p", "rate"
    );
    for r in &table.rows {
        match r.errors {
            Some(e) => println!(
                "{:>12.6e} {:>12.4e} {:>7} {:>12.4e} {:>7} {:>12.4e} {:>7}",
                r.tau,
                e.e_u,
                f(r.rate_u),
                e.e_q,
                f(r.rate_q),
                e.e_p,
                f(r.rate_p)
            ),
            None => println!(
                "{:>12.6e} failed: {}",
                r.tau,
                r.failure.as_deref().unwrap_or("")
            ),
        }
    }
    println!("wrote {}", out.display());
    if !table.all_succeeded() {
        bail!("at least one row of the study failed");
    }
    Ok(())
}

fn cmd_cavity(a: &CavityArgs) -> anyhow::Result<()> {
    let mut params = CavityParams::new(a.re, a.theta, a.nx, a.tau, a.t_end, a.scheme);
    a.solver.apply(&mut params.solver);
    params.assert_invariants = !a.no_invariants;
    params.snapshot_times = a.snapshots.clone().unwrap_or_default();
    params.solver.validate()?;
    let refs = match (&a.reference_u, &a.reference_v) {
        (Some(u), Some(v)) => Some((load_reference_table(u)?, load_reference_table(v)?)),
        (None, None) => None,
        _ => bail!(Error::Argument {
            field: "reference".into(),
            message: "give both --reference-u and --reference-v".into()
        }),
    };
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| default_output_root().join("cavity"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut writer = DiagnosticsWriter::create(&dir.join("diagnostics.csv"), a.stride)?;
    let mut last = (0usize, 0.0f64);
    let outcome = run_cavity(
        &params,
        |d| {
            last = (d.step, d.t);
            writer.record(d)
        },
        |s| write_field_snapshot(s, &dir.join(snapshot_file_name(s.step))),
    );
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            writer.record_failure(last.0 + 1, last.1 + a.tau, &e)?;
            writer.finish()?;
            return Err(e.into());
        }
    };
    writer.finish()?;
    write_field_snapshot(&outcome.state, &dir.join("final.csv"))?;
    let source = format!(
        "drlm cavity Re={} nx={} tau={} T={}",
        a.re, a.nx, a.tau, a.t_end
    );
    let profile = match &refs {
        Some((u, v)) => centerline_against(&outcome.state.u, u, v)?,
        None => {
            let st: Vec<f64> = (0..=a.nx).map(|k| k as f64 / a.nx as f64).collect();
            extract_centerline(&outcome.state.u, &st, &st)?
        }
    };
    write_centerline(&profile, &dir, &source)?;
    println!(
        "final Q = {:.12}, kinetic energy |u|^2 = {:.6e}",
        outcome.state.q,
        drlm::mesh::inner_vel(&outcome.state.u, &outcome.state.u)
    );
    match outcome.plateau_time {
        Some(t) => println!("kinetic-energy plateau detected at t = {t:.3}"),
        None => println!(
            "no kinetic-energy plateau (last relative change per unit time {:.3e})",
            outcome.last_energy_change.unwrap_or(f64::NAN)
        ),
    }
    if let (Some(du), Some(dv)) = (profile.max_deviation_u(), profile.max_deviation_v()) {
        println!("max |u - ref| on x = 0.5: {du:.4}; max |v - ref| on y = 0.5: {dv:.4}");
        if let Some(tol) = a.max_deviation {
            if du > tol {
                bail!("centerline u deviates by {du:.4} > {tol}");
            }
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).context("run failed"),
        Command::Converge(a) => cmd_converge(a).context("convergence study failed"),
        Command::Cavity(a) => cmd_cavity(a).context("cavity run failed"),
        Command::Selftest { seed } => {
            let rep = drlm::selftest::run(*seed);
            println!("{rep}");
            if !rep.ok() {
                bail!("selftest failed");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
