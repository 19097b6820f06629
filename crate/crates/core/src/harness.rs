//! Convergence studies: refinement loop, time-step scaling, L² errors at the
//! final time, EOCs and report emission.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::assembly::SystemAssembler;
use crate::fespace::{
    build_bulk_space, build_surface_space, build_trace_map, ElementGeometry, EvolvingSpace,
};
use crate::geometry::AmbientField;
use crate::mesh::{ball_bulk_level, sphere_surface_level};
use crate::problems::{problem, ProblemDefinition, ProblemId};
use crate::refelem::{make_quadrature, MAX_QUADRATURE_DEGREE};
use crate::solver::{integrate_with, LinearSolverConfig, StepStats, SCHEME_ID};
use crate::{Error, Result};

/// CSV header of [`emit_report`].
pub const CSV_HEADER: &str =
    "level,h,tau,steps,dofs,err_bulk,err_surf,eoc_bulk,eoc_surf,assembly_s,solve_s,gmres_iters";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "table" => Ok(OutputFormat::Table),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!(
                "unknown format '{other}' (expected table, csv or json)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub problem: ProblemId,
    pub order: usize,
    pub min_level: usize,
    pub max_level: usize,
    pub tau0: f64,
    pub final_time: f64,
    pub solver: LinearSolverConfig,
    /// Overrides the default quadrature degree `2k + 2`.
    pub quad_degree: Option<usize>,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    /// Write VTK snapshots every this many steps.
    pub vtk_every: Option<usize>,
    pub threads: usize,
}

impl StudyConfig {
    pub fn new(problem: ProblemId, order: usize, min_level: usize, max_level: usize) -> Self {
        Self {
            problem,
            order,
            min_level,
            max_level,
            tau0: 1.0,
            final_time: 1.0,
            solver: LinearSolverConfig::default(),
            quad_degree: None,
            format: OutputFormat::Table,
            out: None,
            vtk_every: None,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let def = problem(self.problem);
        if !def.supports(self.order) {
            return Err(Error::Config(format!(
                "order {} is not supported by the {} problem (supported: {:?})",
                self.order, self.problem, def.supported_orders
            )));
        }
        if self.min_level > self.max_level {
            return Err(Error::Config(format!(
                "min level {} exceeds max level {}",
                self.min_level, self.max_level
            )));
        }
        if !(self.tau0 > 0.0) || !(self.final_time > 0.0) {
            return Err(Error::Config("tau0 and final time must be positive".into()));
        }
        if let Some(d) = self.quad_degree {
            if d == 0 || d > MAX_QUADRATURE_DEGREE {
                return Err(Error::Config(format!(
                    "quadrature degree must lie in 1..={MAX_QUADRATURE_DEGREE}"
                )));
            }
        }
        if self.vtk_every == Some(0) {
            return Err(Error::Config("vtk-every must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.solver.validate()
    }

    pub fn quadrature_degree(&self) -> usize {
        self.quad_degree
            .unwrap_or(SystemAssembler::default_degree(self.order))
    }

    /// `τ_j = τ₀ 2^{−(k+1)j}`.
    pub fn tau_for_level(&self, level: usize) -> f64 {
        self.tau0 * 2f64.powi(-((self.order as i32 + 1) * level as i32))
    }

    pub fn steps_for_level(&self, level: usize) -> usize {
        ((self.final_time / self.tau_for_level(level)).round() as usize).max(1)
    }
}

/// Partial configuration read from a `key = value` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub problem: Option<ProblemId>,
    pub order: Option<usize>,
    pub min_level: Option<usize>,
    pub max_level: Option<usize>,
    pub tau0: Option<f64>,
    pub final_time: Option<f64>,
    pub solver_tol: Option<f64>,
    pub quad_degree: Option<usize>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
    pub vtk_every: Option<usize>,
    pub threads: Option<usize>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl ConfigOverrides {
    /// Parses `key = value` lines; keys are the CLI flag names, `#` starts a
    /// comment and `_` may replace `-`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            o.set(&key.trim().replace('_', "-"), value.trim())?;
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "problem" => self.problem = Some(value.parse()?),
            "order" => self.order = Some(parse_value(key, value)?),
            "min-level" => self.min_level = Some(parse_value(key, value)?),
            "max-level" => self.max_level = Some(parse_value(key, value)?),
            "tau0" => self.tau0 = Some(parse_value(key, value)?),
            "final-time" => self.final_time = Some(parse_value(key, value)?),
            "solver-tol" => self.solver_tol = Some(parse_value(key, value)?),
            "quad-degree" => self.quad_degree = Some(parse_value(key, value)?),
            "format" => self.format = Some(value.parse()?),
            "out" => self.out = Some(PathBuf::from(value)),
            "vtk-every" => self.vtk_every = Some(parse_value(key, value)?),
            "threads" => self.threads = Some(parse_value(key, value)?),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Fields set in `other` replace those set here.
    pub fn merge(self, other: Self) -> Self {
        Self {
            problem: other.problem.or(self.problem),
            order: other.order.or(self.order),
            min_level: other.min_level.or(self.min_level),
            max_level: other.max_level.or(self.max_level),
            tau0: other.tau0.or(self.tau0),
            final_time: other.final_time.or(self.final_time),
            solver_tol: other.solver_tol.or(self.solver_tol),
            quad_degree: other.quad_degree.or(self.quad_degree),
            format: other.format.or(self.format),
            out: other.out.or(self.out),
            vtk_every: other.vtk_every.or(self.vtk_every),
            threads: other.threads.or(self.threads),
        }
    }

    /// Builds a validated configuration; problem, order and levels are
    /// required.
    pub fn into_config(self) -> Result<StudyConfig> {
        let missing = |name: &str| Error::Config(format!("missing required setting '{name}'"));
        let mut cfg = StudyConfig::new(
            self.problem.ok_or_else(|| missing("problem"))?,
            self.order.ok_or_else(|| missing("order"))?,
            self.min_level.ok_or_else(|| missing("min-level"))?,
            self.max_level.ok_or_else(|| missing("max-level"))?,
        );
        if let Some(v) = self.tau0 {
            cfg.tau0 = v;
        }
        if let Some(v) = self.final_time {
            cfg.final_time = v;
        }
        if let Some(v) = self.solver_tol {
            cfg.solver.relative_tolerance = v;
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg.quad_degree = self.quad_degree;
        cfg.out = self.out;
        cfg.vtk_every = self.vtk_every;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One refinement level of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub dofs: usize,
    pub err_bulk: Option<f64>,
    pub err_surf: Option<f64>,
    pub eoc_bulk: Option<f64>,
    pub eoc_surf: Option<f64>,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
    pub gmres_iterations_total: usize,
    /// Error message if the level failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub problem: ProblemId,
    pub order: usize,
    pub scheme: String,
    pub quadrature_degree: usize,
    pub final_time: f64,
    pub tau0: f64,
    pub solver_tolerance: f64,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub metadata: ReportMetadata,
    pub levels: Vec<LevelResult>,
}

impl ConvergenceReport {
    pub fn any_failed(&self) -> bool {
        self.levels.iter().any(|l| l.failure.is_some())
    }
}

/// `√(Σ_K Σ_q w_q √g (U_h − u)²)` with `u` evaluated at the physical
/// quadrature points of the discrete domain at time `t`.
pub fn l2_error_at_final_time(
    space: &EvolvingSpace,
    alpha: &[f64],
    t: f64,
    exact: &dyn AmbientField,
    quad_degree: usize,
) -> Result<f64> {
    if alpha.len() != space.dof_count() {
        return Err(Error::Dimension {
            expected: space.dof_count(),
            got: alpha.len(),
        });
    }
    let rule = make_quadrature(space.reference().dim(), quad_degree)?;
    let tab = space.reference().tabulate(&rule);
    let positions = space.node_positions_at(t);
    let mut geo = ElementGeometry::default();
    let mut sum = 0.0;
    for e in 0..space.element_count() {
        space.fill_geometry(e, &positions, &tab, &mut geo)?;
        let dofs = space.element_dofs(e);
        for q in 0..tab.point_count() {
            let uh: f64 = dofs
                .iter()
                .zip(tab.values(q))
                .map(|(&d, v)| alpha[d] * v)
                .sum();
            let diff = uh - exact.value(&geo.points[q], t);
            sum += tab.weights()[q] * geo.sqrt_g[q] * diff * diff;
        }
    }
    Ok(sum.sqrt())
}

/// `log(E_j/E_{j−1}) / log(h_j/h_{j−1})` for consecutive pairs; `None` where
/// an input is not positive and finite or the sizes coincide.
pub fn compute_eoc(errors: &[f64], hs: &[f64]) -> Vec<Option<f64>> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| {
            (ok(e[0]) && ok(e[1]) && ok(h[0]) && ok(h[1]) && h[0] != h[1])
                .then(|| (e[1] / e[0]).ln() / (h[1] / h[0]).ln())
        })
        .collect()
}

/// Runs every level of the study. Configuration errors are returned; a
/// failing level is recorded in the report and the remaining levels still
/// run.
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    let def = problem(cfg.problem);
    let mut levels: Vec<LevelResult> = (cfg.min_level..=cfg.max_level)
        .map(|level| {
            let steps = cfg.steps_for_level(level);
            let mut row = LevelResult {
                level,
                h: f64::NAN,
                tau: cfg.final_time / steps as f64,
                steps,
                dofs: 0,
                err_bulk: None,
                err_surf: None,
                eoc_bulk: None,
                eoc_surf: None,
                assembly_seconds: 0.0,
                solve_seconds: 0.0,
                gmres_iterations_total: 0,
                failure: None,
            };
            if let Err(e) = pool.install(|| run_level(&def, cfg, &mut row)) {
                row.failure = Some(e.to_string());
                row.err_bulk = None;
                row.err_surf = None;
            }
            row
        })
        .collect();

    let hs: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let column = |f: fn(&LevelResult) -> Option<f64>| {
        let errs: Vec<f64> = levels.iter().map(|l| f(l).unwrap_or(f64::NAN)).collect();
        compute_eoc(&errs, &hs)
    };
    let (eb, es) = (column(|l| l.err_bulk), column(|l| l.err_surf));
    for (j, row) in levels.iter_mut().enumerate().skip(1) {
        row.eoc_bulk = eb[j - 1];
        row.eoc_surf = es[j - 1];
    }

    Ok(ConvergenceReport {
        metadata: ReportMetadata {
            problem: cfg.problem,
            order: cfg.order,
            scheme: SCHEME_ID.into(),
            quadrature_degree: cfg.quadrature_degree(),
            final_time: cfg.final_time,
            tau0: cfg.tau0,
            solver_tolerance: cfg.solver.relative_tolerance,
            version: concat!("v", env!("CARGO_PKG_VERSION")).into(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        },
        levels,
    })
}

fn vtk_path(cfg: &StudyConfig, level: usize, part: &str, step: usize) -> PathBuf {
    let dir = cfg
        .out
        .as_deref()
        .and_then(Path::parent)
        .unwrap_or(Path::new("."));
    dir.join(format!(
        "{}_k{}_level{}_{}_{:06}.vtk",
        cfg.problem, cfg.order, level, part, step
    ))
}

fn write_snapshot(space: &EvolvingSpace, values: &[f64], t: f64, path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    space.write_vtk(w, t, Some(("u_h", values)))
}

fn run_level(def: &ProblemDefinition, cfg: &StudyConfig, row: &mut LevelResult) -> Result<()> {
    let k = cfg.order;
    let degree = cfg.quadrature_degree();
    let evolution = def.evolution.clone();
    let level = row.level;
    let t_final = cfg.final_time;
    let mut stats = StepStats::default();
    match def.id {
        ProblemId::Surface | ProblemId::Bulk => {
            let (space, data) = if def.id == ProblemId::Surface {
                let data = def.surface.clone().expect("surface data");
                (
                    build_surface_space(sphere_surface_level(level), k, evolution)?,
                    data,
                )
            } else {
                let data = def.bulk.clone().expect("bulk data");
                (
                    build_bulk_space(ball_bulk_level(level), k, evolution)?,
                    data,
                )
            };
            let exact = data.exact.clone().expect("exact solution");
            row.h = space.mesh_size(0.0).h_max;
            row.dofs = space.dof_count();
            let asm = SystemAssembler::single(&space, data, Some(degree))?;
            let alpha0 = space.interpolate(exact.as_ref(), 0.0);
            let part = def.id.as_str();
            if cfg.vtk_every.is_some() {
                write_snapshot(&space, &alpha0, 0.0, &vtk_path(cfg, level, part, 0))?;
            }
            let (state, s) = integrate_with(
                &asm,
                alpha0,
                0.0,
                t_final,
                row.steps,
                &cfg.solver,
                |st| match cfg.vtk_every {
                    Some(n) if st.step_index % n == 0 || st.step_index == row.steps => {
                        write_snapshot(
                            &space,
                            &st.alpha,
                            st.t,
                            &vtk_path(cfg, level, part, st.step_index),
                        )
                    }
                    _ => Ok(()),
                },
            )?;
            stats += s;
            let err =
                l2_error_at_final_time(&space, &state.alpha, t_final, exact.as_ref(), degree)?;
            if def.id == ProblemId::Surface {
                row.err_surf = Some(err);
            } else {
                row.err_bulk = Some(err);
            }
        }
        ProblemId::Coupled => {
            let data = def.coupled_data().expect("coupled data");
            let mesh = ball_bulk_level(level);
            let boundary = mesh.boundary_surface()?;
            let bulk = build_bulk_space(mesh, k, evolution.clone())?;
            let surf = build_surface_space(boundary.mesh.clone(), k, evolution)?;
            let trace = build_trace_map(&bulk, &surf, &boundary)?;
            let u = data.bulk.exact.clone().expect("bulk exact solution");
            let v = data.surface.exact.clone().expect("surface exact solution");
            row.h = bulk.mesh_size(0.0).h_max;
            row.dofs = bulk.dof_count() + surf.dof_count();
            let nb = bulk.dof_count();
            let asm = SystemAssembler::coupled(&bulk, &surf, &trace, data, Some(degree))?;
            let mut alpha0 = bulk.interpolate(u.as_ref(), 0.0);
            alpha0.extend(surf.interpolate(v.as_ref(), 0.0));
            let snapshot = |alpha: &[f64], t: f64, step: usize| -> Result<()> {
                write_snapshot(&bulk, &alpha[..nb], t, &vtk_path(cfg, level, "bulk", step))?;
                write_snapshot(
                    &surf,
                    &alpha[nb..],
                    t,
                    &vtk_path(cfg, level, "surface", step),
                )
            };
            if cfg.vtk_every.is_some() {
                snapshot(&alpha0, 0.0, 0)?;
            }
            let (state, s) = integrate_with(
                &asm,
                alpha0,
                0.0,
                t_final,
                row.steps,
                &cfg.solver,
                |st| match cfg.vtk_every {
                    Some(n) if st.step_index % n == 0 || st.step_index == row.steps => {
                        snapshot(&st.alpha, st.t, st.step_index)
                    }
                    _ => Ok(()),
                },
            )?;
            stats += s;
            row.err_bulk = Some(l2_error_at_final_time(
                &bulk,
                &state.alpha[..nb],
                t_final,
                u.as_ref(),
                degree,
            )?);
            row.err_surf = Some(l2_error_at_final_time(
                &surf,
                &state.alpha[nb..],
                t_final,
                v.as_ref(),
                degree,
            )?);
        }
    }
    row.assembly_seconds = stats.assembly_seconds;
    row.solve_seconds = stats.solve_seconds;
    row.gmres_iterations_total = stats.gmres_iterations;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6e}"))
}

fn opt_eoc(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.5}"))
}

pub fn render_csv(report: &ConvergenceReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for l in &report.levels {
        let _ = writeln!(
            s,
            "{},{:.6e},{:.6e},{},{},{},{},{},{},{:.3},{:.3},{}",
            l.level,
            l.h,
            l.tau,
            l.steps,
            l.dofs,
            opt(l.err_bulk),
            opt(l.err_surf),
            opt_eoc(l.eoc_bulk),
            opt_eoc(l.eoc_surf),
            l.assembly_seconds,
            l.solve_seconds,
            l.gmres_iterations_total
        );
    }
    s
}

/// Column layout `h, τ, error, (eoc)` per error column, "---" for the first
/// row's eoc.
pub fn render_table(report: &ConvergenceReport) -> String {
    let m = &report.metadata;
    let columns: Vec<(&str, fn(&LevelResult) -> (Option<f64>, Option<f64>))> = match m.problem {
        ProblemId::Surface => vec![("L2(Gamma(T)) error", |l| (l.err_surf, l.eoc_surf))],
        ProblemId::Bulk => vec![("L2(Omega(T)) error", |l| (l.err_bulk, l.eoc_bulk))],
        ProblemId::Coupled => vec![
            ("L2(Omega(T)) error", |l| (l.err_bulk, l.eoc_bulk)),
            ("L2(Gamma(T)) error", |l| (l.err_surf, l.eoc_surf)),
        ],
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# {} problem, k = {}, scheme {}, quadrature degree {}",
        m.problem, m.order, m.scheme, m.quadrature_degree
    );
    let _ = write!(
        s,
        "{:>5} {:>12} {:>12} {:>8} {:>9}",
        "level", "h", "tau", "dofs", "steps"
    );
    for (name, _) in &columns {
        let _ = write!(s, " {name:>20} {:>9}", "(eoc)");
    }
    s.push('\n');
    for (i, l) in report.levels.iter().enumerate() {
        let _ = write!(
            s,
            "{:>5} {:>12.5e} {:>12.5e} {:>8} {:>9}",
            l.level, l.h, l.tau, l.dofs, l.steps
        );
        for (_, get) in &columns {
            let (err, eoc) = get(l);
            let err = err.map_or("failed".to_string(), |e| format!("{e:.5e}"));
            let eoc = match eoc {
                Some(x) if i > 0 => format!("{x:.5}"),
                _ => "---".to_string(),
            };
            let _ = write!(s, " {err:>20} {eoc:>9}");
        }
        if let Some(f) = &l.failure {
            let _ = write!(s, "  [{f}]");
        }
        s.push('\n');
    }
    s
}

pub fn render_report(report: &ConvergenceReport, format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Table => render_table(report),
        OutputFormat::Csv => render_csv(report),
        OutputFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    })
}

/// Writes the report to `path`, or to stdout when no path is given.
pub fn emit_report(
    report: &ConvergenceReport,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<()> {
    let text = render_report(report, format)?;
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fields::{Constant, SinTimeBilinear};
    use crate::geometry::EllipsoidFlow;
    use crate::mesh::macro_sphere_surface;
    use std::sync::Arc;

    #[test]
    fn eoc_published_values() {
        let e = compute_eoc(&[9.83996e-2, 1.47435e-2], &[8.31246e-1, 4.40053e-1]);
        assert!((e[0].unwrap() - 2.98450).abs() < 1e-4);
        let e = compute_eoc(&[5.08882e-5, 6.36219e-6], &[2.79882e-1, 1.44128e-1]);
        assert!((e[0].unwrap() - 3.13299).abs() < 1e-4);
        let e = compute_eoc(&[1.0, 1.0], &[1.0, 0.5]);
        assert_eq!(e[0], Some(0.0));
        assert_eq!(compute_eoc(&[0.0, 1.0], &[1.0, 0.5]), vec![None]);
        assert!(compute_eoc(&[1.0], &[1.0]).is_empty());
    }

    #[test]
    fn l2_error_trivial_cases() {
        let space =
            build_surface_space(macro_sphere_surface(), 2, Arc::new(EllipsoidFlow)).unwrap();
        let zero = vec![0.0; space.dof_count()];
        assert_eq!(
            l2_error_at_final_time(&space, &zero, 1.0, &Constant(0.0), 6).unwrap(),
            0.0
        );
        let ones = vec![1.0; space.dof_count()];
        assert!(l2_error_at_final_time(&space, &ones, 1.0, &Constant(1.0), 6).unwrap() < 1e-13);
        assert!(l2_error_at_final_time(&space, &ones[1..], 1.0, &Constant(1.0), 6).is_err());
    }

    #[test]
    fn interpolation_error_converges() {
        let u = SinTimeBilinear { i: 1, j: 2 };
        let errs: Vec<(f64, f64)> = (0..3)
            .map(|level| {
                let space =
                    build_surface_space(sphere_surface_level(level), 2, Arc::new(EllipsoidFlow))
                        .unwrap();
                let a = space.interpolate(&u, 1.0);
                (
                    l2_error_at_final_time(&space, &a, 1.0, &u, 6).unwrap(),
                    space.mesh_size(0.0).h_max,
                )
            })
            .collect();
        let (e, h): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
        let eoc = compute_eoc(&e, &h);
        assert!(eoc.last().unwrap().unwrap() > 2.7);
    }

    #[test]
    fn steps_and_tau() {
        let cfg = StudyConfig::new(ProblemId::Surface, 2, 0, 3);
        for j in 0..4 {
            assert_eq!(cfg.steps_for_level(j), 1 << (3 * j));
            assert_eq!(
                cfg.steps_for_level(j) as f64 * cfg.final_time / cfg.steps_for_level(j) as f64,
                1.0
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::new(ProblemId::Bulk, 3, 0, 1)
            .validate()
            .is_err());
        assert!(StudyConfig::new(ProblemId::Surface, 2, 2, 1)
            .validate()
            .is_err());
        let mut c = StudyConfig::new(ProblemId::Surface, 2, 0, 1);
        c.tau0 = 0.0;
        assert!(c.validate().is_err());
        c.tau0 = 1.0;
        c.threads = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_file_and_overrides() {
        let text = "# study\nproblem = coupled\norder=1\nmin_level = 0\nmax-level = 2\nformat = csv # trailing\nsolver-tol = 1e-12\n";
        let file = ConfigOverrides::parse(text).unwrap();
        let flags = ConfigOverrides {
            max_level: Some(1),
            ..Default::default()
        };
        let cfg = file.merge(flags).into_config().unwrap();
        assert_eq!(cfg.problem, ProblemId::Coupled);
        assert_eq!((cfg.min_level, cfg.max_level), (0, 1));
        assert_eq!(cfg.format, OutputFormat::Csv);
        assert_eq!(cfg.solver.relative_tolerance, 1e-12);
        assert!(ConfigOverrides::parse("colour = red").is_err());
        assert!(ConfigOverrides::parse("order").is_err());
        assert!(ConfigOverrides::parse("order = two").is_err());
        assert!(ConfigOverrides::parse("problem = surface")
            .unwrap()
            .into_config()
            .is_err());
    }

    fn sample_report() -> ConvergenceReport {
        let row = |level, err: f64, eoc| LevelResult {
            level,
            h: 1.0 / (1 << level) as f64,
            tau: 0.125,
            steps: 8,
            dofs: 42,
            err_bulk: None,
            err_surf: Some(err),
            eoc_bulk: None,
            eoc_surf: eoc,
            assembly_seconds: 0.5,
            solve_seconds: 0.25,
            gmres_iterations_total: 17,
            failure: None,
        };
        ConvergenceReport {
            metadata: ReportMetadata {
                problem: ProblemId::Surface,
                order: 2,
                scheme: SCHEME_ID.into(),
                quadrature_degree: 6,
                final_time: 1.0,
                tau0: 1.0,
                solver_tolerance: 1e-10,
                version: "v0.1.0".into(),
                timestamp: 0,
            },
            levels: vec![row(0, 9.83996e-2, None), row(1, 1.47435e-2, Some(2.98450))],
        }
    }

    #[test]
    fn report_formats() {
        let mut r = sample_report();
        let table = render_table(&r);
        let first = table.lines().nth(2).unwrap();
        assert!(first.trim_end().ends_with("---"));
        assert!(table.contains("2.98450"));
        let json = render_report(&r, OutputFormat::Json).unwrap();
        let back: ConvergenceReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let csv = render_csv(&r);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().nth(2).unwrap().split(',').count(), 12);
        r.levels.clear();
        assert_eq!(render_csv(&r), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn emit_to_file() {
        let dir = std::env::temp_dir().join(format!("evolfem-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        emit_report(&sample_report(), OutputFormat::Csv, Some(&path)).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .starts_with(CSV_HEADER));
        assert!(emit_report(
            &sample_report(),
            OutputFormat::Csv,
            Some(&dir.join("missing/r.csv"))
        )
        .is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn single_level_study() {
        let cfg = StudyConfig::new(ProblemId::Surface, 1, 0, 0);
        let r = run_study(&cfg).unwrap();
        assert_eq!(r.levels.len(), 1);
        let l = &r.levels[0];
        assert!(l.failure.is_none());
        assert!(l.err_surf.unwrap() > 0.0 && l.eoc_surf.is_none());
        assert_eq!((l.steps, l.dofs), (1, 12));
        assert_eq!(r.metadata.scheme, "conservative-IE");
    }
}
