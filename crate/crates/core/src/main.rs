use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use evolfem::harness::{emit_report, run_study, ConfigOverrides, OutputFormat};
use evolfem::problems::ProblemId;

/// Convergence studies for evolving surface, bulk and coupled bulk-surface
/// finite element problems.
#[derive(Debug, Parser)]
#[command(name = "evolfem", version)]
struct Cli {
    /// surface, bulk or coupled
    #[arg(long)]
    problem: Option<String>,
    /// Polynomial degree k
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    min_level: Option<usize>,
    #[arg(long)]
    max_level: Option<usize>,
    /// Time step at level 0 [default: 1.0]
    #[arg(long)]
    tau0: Option<f64>,
    /// [default: 1.0]
    #[arg(long)]
    final_time: Option<f64>,
    /// Relative GMRES tolerance [default: 1e-10]
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Quadrature degree [default: 2k+2]
    #[arg(long)]
    quad_degree: Option<usize>,
    /// table, csv or json [default: table]
    #[arg(long)]
    format: Option<String>,
    /// Report path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write VTK snapshots every N steps next to the report
    #[arg(long)]
    vtk_every: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    threads: Option<usize>,
    /// File of `key = value` lines using the flag names; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

fn overrides(cli: &Cli) -> evolfem::Result<ConfigOverrides> {
    Ok(ConfigOverrides {
        problem: cli
            .problem
            .as_deref()
            .map(str::parse::<ProblemId>)
            .transpose()?,
        order: cli.order,
        min_level: cli.min_level,
        max_level: cli.max_level,
        tau0: cli.tau0,
        final_time: cli.final_time,
        solver_tol: cli.solver_tol,
        quad_degree: cli.quad_degree,
        format: cli
            .format
            .as_deref()
            .map(str::parse::<OutputFormat>)
            .transpose()?,
        out: cli.out.clone(),
        vtk_every: cli.vtk_every,
        threads: cli.threads,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let cfg = cli
        .config
        .as_deref()
        .map_or_else(
            || Ok(ConfigOverrides::default()),
            ConfigOverrides::from_file,
        )
        .and_then(|file| Ok(file.merge(overrides(&cli)?)))
        .and_then(ConfigOverrides::into_config);
    let cfg = match cfg {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("evolfem: {e}");
            return ExitCode::from(1);
        }
    };
    let report = match run_study(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("evolfem: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = emit_report(&report, cfg.format, cfg.out.as_deref()) {
        eprintln!("evolfem: {e}");
        return ExitCode::from(2);
    }
    for l in report.levels.iter().filter(|l| l.failure.is_some()) {
        eprintln!(
            "evolfem: level {} failed: {}",
            l.level,
            l.failure.as_deref().unwrap_or("")
        );
    }
    if report.any_failed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
