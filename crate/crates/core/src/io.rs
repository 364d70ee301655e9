//! Run configuration, text output and reference-data ingestion.
//!
//! Configs are INI-style (`[section]`, `key = value`, `#` or `;` comments).
//! Every CSV written here uses LF line endings and prints floats with 17
//! significant digits so that identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::SolverConfig;
use crate::mesh::Grid;
use crate::problems::{
    compute_errors, exact_state, lattice_vortex, no_slip_box_state, CenterlineProfile, ErrorReport,
    ExactDirichlet, LidDriven, PlateauDetector, RateTable,
};
use crate::scheme::{
    step_count, FlowSetup, Integrator, NoSlip, SchemeConfig, SchemeKind, State, StepDiagnostics,
};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "DRLM_OUTPUT_ROOT";

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("output"))
}

/// Parses `p/q` or a plain decimal. Both parts of a fraction must be finite
/// and the denominator nonzero.
pub fn parse_rational(s: &str) -> Result<f64> {
    let s = s.trim();
    let num = |t: &str| -> Result<f64> {
        let t = t.trim();
        let v: f64 = t
            .parse()
            .map_err(|_| Error::argument("number", format!("cannot parse `{t}`")))?;
        if !v.is_finite() {
            return Err(Error::argument("number", format!("`{t}` is not finite")));
        }
        Ok(v)
    };
    match s.split_once('/') {
        Some((p, q)) => {
            let (p, q) = (num(p)?, num(q)?);
            if q == 0.0 {
                return Err(Error::argument(
                    "number",
                    format!("zero denominator in `{s}`"),
                ));
            }
            let v = p / q;
            if !v.is_finite() {
                return Err(Error::argument("number", format!("`{s}` overflows")));
            }
            Ok(v)
        }
        None => num(s),
    }
}

/// Comma-separated list of [`parse_rational`] values.
pub fn parse_rational_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_rational).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Vortex,
    Cavity,
    /// No-slip unit box started from a stream-function vortex.
    Custom,
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vortex" => Ok(Self::Vortex),
            "cavity" => Ok(Self::Cavity),
            "custom" => Ok(Self::Custom),
            other => Err(format!("unknown problem `{other}` (vortex|cavity|custom)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Viscosity {
    Nu(f64),
    Re(f64),
}

impl Viscosity {
    pub fn nu(self) -> f64 {
        match self {
            Viscosity::Nu(n) => n,
            Viscosity::Re(r) => 1.0 / r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: SchemeKind,
    pub nx: usize,
    pub ny: usize,
    pub tau: f64,
    pub theta: f64,
    pub viscosity: Viscosity,
    pub t_end: f64,
    pub problem: ProblemKind,
    pub convection: bool,
    pub assert_invariants: bool,
    pub solver: SolverConfig,
    pub output_dir: Option<PathBuf>,
    pub snapshot_times: Vec<f64>,
    /// Write every `stride`-th step to the diagnostics CSV.
    pub stride: usize,
    pub lid_speed: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: SchemeKind::Pdrlm1,
            nx: 32,
            ny: 32,
            tau: 0.01,
            theta: 1.0,
            viscosity: Viscosity::Nu(0.1),
            t_end: 1.0,
            problem: ProblemKind::Vortex,
            convection: true,
            assert_invariants: true,
            solver: SolverConfig::default(),
            output_dir: None,
            snapshot_times: Vec::new(),
            stride: 1,
            lid_speed: 1.0,
        }
    }
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::argument(
            field,
            format!("expected a boolean, got `{v}`"),
        )),
    }
}

fn parse_usize(field: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::argument(field, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_f64(field: &str, v: &str) -> Result<f64> {
    parse_rational(v).map_err(|_| Error::argument(field, format!("expected a number, got `{v}`")))
}

impl RunConfig {
    /// Sets `section.key`. Section names follow the config file.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let field = format!("{section}.{key}");
        let f = field.as_str();
        match (section, key) {
            ("grid", "nx") => self.nx = parse_usize(f, value)?,
            ("grid", "ny") => self.ny = parse_usize(f, value)?,
            ("grid", "n") => {
                self.nx = parse_usize(f, value)?;
                self.ny = self.nx;
            }
            ("scheme", "kind") => self.kind = value.parse().map_err(|m| Error::argument(f, m))?,
            ("scheme", "tau") => self.tau = parse_f64(f, value)?,
            ("scheme", "theta") => self.theta = parse_f64(f, value)?,
            ("scheme", "nu") => self.viscosity = Viscosity::Nu(parse_f64(f, value)?),
            ("scheme", "re") => self.viscosity = Viscosity::Re(parse_f64(f, value)?),
            ("scheme", "t") => self.t_end = parse_f64(f, value)?,
            ("scheme", "convection") => self.convection = parse_bool(f, value)?,
            ("scheme", "assert_invariants") => self.assert_invariants = parse_bool(f, value)?,
            ("problem", "name") => {
                self.problem = value.parse().map_err(|m| Error::argument(f, m))?
            }
            ("problem", "lid_speed") => self.lid_speed = parse_f64(f, value)?,
            ("solver", "rel_tol") => self.solver.rel_tol = parse_f64(f, value)?,
            ("solver", "abs_tol") => self.solver.abs_tol = parse_f64(f, value)?,
            ("solver", "max_iter") => self.solver.max_iter = Some(parse_usize(f, value)?),
            ("solver", "preconditioner") => {
                self.solver.poisson_preconditioner =
                    value.parse().map_err(|m| Error::argument(f, m))?
            }
            ("output", "dir") => self.output_dir = Some(PathBuf::from(value.trim())),
            ("output", "snapshot_times") => self.snapshot_times = parse_rational_list(value)?,
            ("output", "stride") => self.stride = parse_usize(f, value)?,
            _ => return Err(Error::argument(f, "unknown key")),
        }
        Ok(())
    }

    /// Range and consistency checks; run before any computation.
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.nx, self.ny, 0.0, 1.0, 0.0, 1.0)?;
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::argument(name, format!("must be positive, got {v}")))
            }
        };
        pos("tau", self.tau)?;
        pos("theta", self.theta)?;
        pos("T", self.t_end)?;
        match self.viscosity {
            Viscosity::Nu(n) => pos("nu", n)?,
            Viscosity::Re(r) => pos("Re", r)?,
        }
        if !self.lid_speed.is_finite() {
            return Err(Error::argument("lid_speed", "must be finite"));
        }
        if self.stride == 0 {
            return Err(Error::argument("stride", "must be at least 1"));
        }
        step_count(self.t_end, self.tau)?;
        for &ts in &self.snapshot_times {
            if ts > self.t_end + 0.5 * self.tau {
                return Err(Error::argument(
                    "snapshot_times",
                    format!("{ts} is after T"),
                ));
            }
            step_count(ts, self.tau).map_err(|_| {
                Error::argument(
                    "snapshot_times",
                    format!("{ts} is not a positive multiple of tau"),
                )
            })?;
        }
        if self.problem == ProblemKind::Vortex && self.nx != self.ny {
            // the exact solution is fine on any rectangle grid, kept square for simplicity
            return Err(Error::argument("grid", "the vortex problem uses nx = ny"));
        }
        self.solver.validate()
    }
}

/// Parses an INI-style config. `nu` and `Re` are mutually exclusive.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section: Option<String> = None;
    let mut saw_nu = None;
    let mut saw_re = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let cfg_err = |message: String| Error::Config {
            line: line_no,
            message,
        };
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(format!("unterminated section header `{line}`")))?
                .trim()
                .to_ascii_lowercase();
            if !["grid", "scheme", "problem", "solver", "output"].contains(&name.as_str()) {
                return Err(cfg_err(format!("unknown section `[{name}]`")));
            }
            section = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        if key.is_empty() {
            return Err(cfg_err("empty key".into()));
        }
        let sec = section
            .as_deref()
            .ok_or_else(|| cfg_err(format!("key `{key}` outside any section")))?;
        match key.as_str() {
            "nu" if sec == "scheme" => saw_nu = Some(line_no),
            "re" if sec == "scheme" => saw_re = Some(line_no),
            _ => {}
        }
        if let (Some(_), Some(_)) = (saw_nu, saw_re) {
            return Err(cfg_err("`nu` and `Re` are mutually exclusive".into()));
        }
        cfg.set(sec, &key, value)
            .map_err(|e| cfg_err(e.to_string()))?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

pub const DIAGNOSTICS_HEADER: &str =
    "step,t,Q,K,E_mod,A,B,C,C_crosscheck,div_inf,res_proj1,res_energy,cg_iters_total";

/// One CSV row without the trailing newline.
pub fn diagnostics_row(d: &StepDiagnostics) -> String {
    let q = d.quad.as_ref();
    [
        d.step.to_string(),
        fmt_f(d.t),
        fmt_f(d.q),
        fmt_f(d.k),
        fmt_f(d.e_mod),
        fmt_opt(q.map(|c| c.a)),
        fmt_opt(q.map(|c| c.b)),
        fmt_opt(q.map(|c| c.c)),
        fmt_opt(q.and_then(|c| c.c_crosscheck)),
        fmt_f(d.div_inf),
        fmt_opt(d.residual("proj1")),
        fmt_opt(d.residual("energy")),
        d.cg_iterations().to_string(),
    ]
    .join(",")
}

/// Streaming diagnostics CSV. The header is written on creation.
pub struct DiagnosticsWriter<W: Write> {
    out: BufWriter<W>,
    path: PathBuf,
    stride: usize,
    rows: usize,
}

impl DiagnosticsWriter<fs::File> {
    pub fn create(path: &Path, stride: usize) -> Result<Self> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(f, path, stride)
    }
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(sink: W, path: &Path, stride: usize) -> Result<Self> {
        let mut w = Self {
            out: BufWriter::new(sink),
            path: path.to_path_buf(),
            stride: stride.max(1),
            rows: 0,
        };
        w.line(DIAGNOSTICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Writes the record if its step falls on the stride.
    pub fn record(&mut self, d: &StepDiagnostics) -> Result<()> {
        if d.step % self.stride == 0 {
            self.rows += 1;
            self.line(&diagnostics_row(d))?;
        }
        Ok(())
    }

    /// Writes the failing step: the full record when the error carries one,
    /// otherwise `step,t` with the remaining fields empty.
    pub fn record_failure(&mut self, step: usize, t: f64, err: &Error) -> Result<()> {
        self.rows += 1;
        match err {
            Error::Invariant { diagnostics, .. } => self.line(&diagnostics_row(diagnostics)),
            _ => {
                let row = format!("{step},{}{}", fmt_f(t), ",".repeat(11));
                self.line(&row)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        self.out
            .into_inner()
            .map_err(|e| Error::io(&self.path, e.into_error()))
    }
}

/// Cell-centered field table with a commented metadata header.
pub fn format_field_snapshot(state: &State) -> String {
    let g = state.grid();
    let (uc, vc) = state.u.at_cell_centers();
    let mut s = String::new();
    let _ = writeln!(s, "# drlm field snapshot");
    let _ = writeln!(s, "# nx = {}", g.nx);
    let _ = writeln!(s, "# ny = {}", g.ny);
    let _ = writeln!(
        s,
        "# domain = {},{},{},{}",
        fmt_f(g.x0),
        fmt_f(g.x1),
        fmt_f(g.y0),
        fmt_f(g.y1)
    );
    let _ = writeln!(s, "# step = {}", state.step);
    let _ = writeln!(s, "# t = {}", fmt_f(state.t));
    let _ = writeln!(s, "# Q = {}", fmt_f(state.q));
    s.push_str("x,y,u,v,p,speed\n");
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (x, y) = g.cell(i, j);
            let k = g.c_idx(i, j);
            let (u, v) = (uc[k], vc[k]);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_f(x),
                fmt_f(y),
                fmt_f(u),
                fmt_f(v),
                fmt_f(state.p.values[k]),
                fmt_f(u.hypot(v))
            );
        }
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_field_snapshot(state: &State, path: &Path) -> Result<()> {
    write_text(path, &format_field_snapshot(state))
}

pub const RATE_HEADER: &str = "tau,e_u,rate_u,e_Q,rate_Q,e_p,rate_p,status";

pub fn format_rate_table(table: &RateTable) -> String {
    let mut s = String::from(RATE_HEADER);
    s.push('\n');
    for r in &table.rows {
        let e = r.errors;
        let status = match &r.failure {
            None => "ok".to_string(),
            Some(m) => format!("failed: {}", m.replace([',', '\n', '\r'], " ")),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_f(r.tau),
            fmt_opt(e.map(|e| e.e_u)),
            fmt_opt(r.rate_u),
            fmt_opt(e.map(|e| e.e_q)),
            fmt_opt(r.rate_q),
            fmt_opt(e.map(|e| e.e_p)),
            fmt_opt(r.rate_p),
            status
        );
    }
    s
}

pub fn write_rate_table(table: &RateTable, path: &Path) -> Result<()> {
    write_text(path, &format_rate_table(table))
}

/// `(coord, value)` samples with a citation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    pub source: String,
    pub rows: Vec<(f64, f64)>,
}

/// Parses `coord,value` rows. A `# source: ...` comment is required; other
/// `#` lines and a single `coord,value` header are skipped. Coordinates must
/// be strictly increasing within `[0, 1]` and values finite. Errors name the
/// 1-based line.
pub fn parse_reference_table(text: &str) -> Result<ReferenceTable> {
    let mut source = None;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    let mut header_seen = false;
    for (k, raw) in text.lines().enumerate() {
        let row = k + 1;
        let err = |message: String| Error::Reference { row, message };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(tag) = c.trim().strip_prefix("source:") {
                if source.is_some() {
                    return Err(err("duplicate source line".into()));
                }
                let tag = tag.trim();
                if tag.is_empty() {
                    return Err(err("empty source tag".into()));
                }
                source = Some(tag.to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", fields.len())));
        }
        if !header_seen && rows.is_empty() && fields == ["coord", "value"] {
            header_seen = true;
            continue;
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| err(format!("cannot parse `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("`{s}` is not finite")))
            }
        };
        let (c, v) = (parse(fields[0])?, parse(fields[1])?);
        if !(0.0..=1.0).contains(&c) {
            return Err(err(format!("coordinate {c} outside [0, 1]")));
        }
        if let Some(&(prev, _)) = rows.last() {
            if c <= prev {
                return Err(err(format!("coordinate {c} does not increase past {prev}")));
            }
        }
        rows.push((c, v));
    }
    let source = source.ok_or(Error::Reference {
        row: 0,
        message: "missing `# source:` line".into(),
    })?;
    if rows.is_empty() {
        return Err(Error::Reference {
            row: 0,
            message: "no data rows".into(),
        });
    }
    Ok(ReferenceTable { source, rows })
}

pub fn load_reference_table(path: &Path) -> Result<ReferenceTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reference_table(&text)
}

/// Same layout the reference loader reads.
pub fn format_reference_table(table: &ReferenceTable) -> String {
    let mut s = format!("# source: {}\ncoord,value\n", table.source);
    for &(c, v) in &table.rows {
        let _ = writeln!(s, "{},{}", fmt_f(c), fmt_f(v));
    }
    s
}

/// Writes `centerline_u.csv`, `centerline_v.csv` (loader format) and, when
/// references are attached, `centerline_compare.csv`.
pub fn write_centerline(profile: &CenterlineProfile, dir: &Path, source: &str) -> Result<()> {
    let u = ReferenceTable {
        source: format!("{source}; u(0.5, y)"),
        rows: profile.u_line.clone(),
    };
    let v = ReferenceTable {
        source: format!("{source}; v(x, 0.5)"),
        rows: profile.v_line.clone(),
    };
    write_text(&dir.join("centerline_u.csv"), &format_reference_table(&u))?;
    write_text(&dir.join("centerline_v.csv"), &format_reference_table(&v))?;
    let mut s = String::from("line,coord,value,reference,abs_diff,source\n");
    let mut any = false;
    for (name, line, r) in [
        ("u", &profile.u_line, &profile.u_reference),
        ("v", &profile.v_line, &profile.v_reference),
    ] {
        if let Some(r) = r {
            any = true;
            let tag = r.source.replace(',', ";");
            for (&(c, val), &(_, rv)) in line.iter().zip(&r.rows) {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{},{tag}",
                    fmt_f(c),
                    fmt_f(val),
                    fmt_f(rv),
                    fmt_f((val - rv).abs())
                );
            }
        }
    }
    if any {
        write_text(&dir.join("centerline_compare.csv"), &s)?;
    }
    Ok(())
}

/// Outcome of [`execute_run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub rows_written: usize,
    pub final_state: State,
    pub errors: Option<ErrorReport>,
    pub plateau_time: Option<f64>,
    pub diagnostics_path: PathBuf,
}

pub fn snapshot_file_name(step: usize) -> String {
    format!("snapshot_{step:08}.csv")
}

/// Runs a config, writing `diagnostics.csv`, snapshots and a final
/// snapshot into `dir`. On failure the failing step is appended to the
/// diagnostics file before the error is returned.
pub fn execute_run(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = Grid::new(cfg.nx, cfg.ny, 0.0, 1.0, 0.0, 1.0)?;
    let nu = cfg.viscosity.nu();
    let mut scfg = SchemeConfig::new(cfg.kind, cfg.tau, cfg.theta, nu)?;
    scfg.solver = cfg.solver.clone();
    scfg.assert_invariants = cfg.assert_invariants;
    scfg.convection = cfg.convection;

    let vortex = lattice_vortex(nu)?;
    let exact_bc = ExactDirichlet { exact: &vortex };
    let lid = LidDriven {
        speed: cfg.lid_speed,
    };
    let (setup, init): (&dyn FlowSetup, State) = match cfg.problem {
        ProblemKind::Vortex => (&exact_bc, exact_state(&grid, &vortex, 0.0, &cfg.solver)?),
        ProblemKind::Cavity => (&lid, State::zero(&grid)),
        ProblemKind::Custom => (&NoSlip, no_slip_box_state(&grid)),
    };
    let n = step_count(cfg.t_end, cfg.tau)?;
    let snaps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| step_count(t, cfg.tau))
        .collect::<Result<_>>()?;

    let diag_path = dir.join("diagnostics.csv");
    let mut writer = DiagnosticsWriter::create(&diag_path, cfg.stride)?;
    let mut integ = Integrator::new(scfg, setup, init)?;
    let mut plateau = PlateauDetector::new(1e-4);
    for k in 1..=n {
        let (step, t) = (integ.state().step + 1, integ.state().t + cfg.tau);
        match integ.advance() {
            Ok(d) => {
                writer.record(&d)?;
                plateau.push(k as f64 * cfg.tau, d.kinetic);
            }
            Err(e) => {
                writer.record_failure(step, t, &e)?;
                writer.finish()?;
                return Err(e);
            }
        }
        if snaps.contains(&k) {
            write_field_snapshot(integ.state(), &dir.join(snapshot_file_name(k)))?;
        }
    }
    let rows = writer.rows();
    writer.finish()?;
    let mut state = integ.into_state();
    state.t = n as f64 * cfg.tau;
    write_field_snapshot(&state, &dir.join("final.csv"))?;
    let errors = (cfg.problem == ProblemKind::Vortex).then(|| compute_errors(&state, &vortex));
    Ok(RunSummary {
        steps: n,
        rows_written: rows,
        final_state: state,
        errors,
        plateau_time: plateau.fired(),
        diagnostics_path: diag_path,
    })
}
