//! Batch front end for the infinity-harmonic laboratory.
//!
//! Every subcommand reads a TOML run configuration, executes one pipeline,
//! writes `report.toml` (plus CSV series and the solved field) into the
//! output directory, and exits with the pipeline status: 0 clean, 1
//! violations, 2 not converged, 3 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use inflab::config::{parse_config, Determinism, RunConfig, CHECKER_TOL_FACTOR};
use inflab::io::load_field;
use inflab::pipeline::{
    run_classify, run_oracle_compare, run_pipeline, run_sweep, run_verify, write_outputs,
    PipelineRun,
};
use inflab::{build_domain, SolutionField};

#[derive(Parser)]
#[command(
    name = "inflab",
    version,
    about = "Infinity-harmonic solves, slope profiles, and growth classification on exterior and bounded grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Solver stop tolerance; a checker tolerance left at its derived
    /// default follows the override (20x the solver tolerance).
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
    /// Classification margin.
    #[arg(long = "eps-class", value_name = "EPS")]
    eps_class: Option<f64>,
    /// Iteration ordering: ordered | jacobi.
    #[arg(long, value_name = "MODE", value_parser = parse_det)]
    det: Option<Determinism>,
    /// Fault-injection seed: corrupts one node so the checkers must object.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Bounded Dirichlet solve with profile, classification, and checks.
    Solve(Common),
    /// Exterior solve through the expanding-radius schedule.
    Exterior(Common),
    /// Profile and blow-down classification of a saved field.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Saved field file.
        field: PathBuf,
    },
    /// Checkers on a saved field; a second field adds the cross-run
    /// comparison test.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Saved field file.
        field: PathBuf,
        /// Companion field solved on a domain differing only in radius.
        other: Option<PathBuf>,
    },
    /// Production solver vs. the independent reference solver (small grids).
    OracleCompare(Common),
    /// h-refinement error series against a closed-form reference.
    Sweep(Common),
}

fn parse_det(s: &str) -> Result<Determinism, String> {
    match s {
        "ordered" => Ok(Determinism::Ordered),
        "jacobi" => Ok(Determinism::Jacobi),
        _ => Err(format!("unknown ordering `{s}` (expected `ordered` or `jacobi`)")),
    }
}

fn main() -> ExitCode {
    ExitCode::from(run().clamp(0, 255) as u8)
}

fn run() -> i32 {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(common) => {
            let Some(cfg) = load_config(&common) else { return 3 };
            if cfg.is_exterior() {
                eprintln!("error: `solve` is the bounded pipeline; use `exterior` for configs with a [farfield] table");
                return 3;
            }
            finish(run_pipeline(&cfg), &cfg)
        }
        Command::Exterior(common) => {
            let Some(cfg) = load_config(&common) else { return 3 };
            if !cfg.is_exterior() {
                eprintln!("error: `exterior` needs a [farfield] table; use `solve` for bounded configs");
                return 3;
            }
            finish(run_pipeline(&cfg), &cfg)
        }
        Command::Classify { common, field } => {
            let Some(cfg) = load_config(&common) else { return 3 };
            let Some(field) = load_saved_field(&cfg, &field) else { return 3 };
            finish(run_classify(&cfg, field), &cfg)
        }
        Command::Verify { common, field, other } => {
            let Some(cfg) = load_config(&common) else { return 3 };
            let Some(field) = load_saved_field(&cfg, &field) else { return 3 };
            let other = match other {
                Some(path) => match load_companion_field(&cfg, &path) {
                    Some(f) => Some(f),
                    None => return 3,
                },
                None => None,
            };
            finish(run_verify(&cfg, field, other), &cfg)
        }
        Command::OracleCompare(common) => {
            let Some(cfg) = load_config(&common) else { return 3 };
            finish(run_oracle_compare(&cfg), &cfg)
        }
        Command::Sweep(common) => {
            let Some(cfg) = load_config(&common) else { return 3 };
            finish(run_sweep(&cfg), &cfg)
        }
    }
}

/// Reads and parses the configuration, then applies the flag overrides.
/// Prints located errors and returns `None` on any failure.
fn load_config(common: &Common) -> Option<RunConfig> {
    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.config.display());
            return None;
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            for e in errors {
                eprintln!("config: {e}");
            }
            return None;
        }
    };
    if let Some(tol) = common.tol {
        if !(tol > 0.0) {
            eprintln!("error: --tol must be positive (got {tol})");
            return None;
        }
        let derived = cfg.tolerances.checker == CHECKER_TOL_FACTOR * cfg.tolerances.solver;
        cfg.tolerances.solver = tol;
        if derived {
            cfg.tolerances.checker = CHECKER_TOL_FACTOR * tol;
        }
    }
    if let Some(eps) = common.eps_class {
        if !(eps > 0.0) {
            eprintln!("error: --eps-class must be positive (got {eps})");
            return None;
        }
        cfg.tolerances.eps_class = eps;
    }
    if let Some(det) = common.det {
        cfg.determinism = det;
    }
    if let Some(seed) = common.seed {
        cfg.fault_seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Some(cfg)
}

/// Loads a saved field onto the configured primary domain.
fn load_saved_field(cfg: &RunConfig, path: &Path) -> Option<SolutionField> {
    let domain = match build_domain(&cfg.grid) {
        Ok(d) => Arc::new(d),
        Err(e) => {
            eprintln!("config: grid: {e}");
            return None;
        }
    };
    match load_field(path, &domain) {
        Ok(f) => Some(f),
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            None
        }
    }
}

/// Loads the comparison companion. Its header fixes the outer radius; the
/// rest of the grid comes from the configuration.
fn load_companion_field(cfg: &RunConfig, path: &Path) -> Option<SolutionField> {
    let radius = match peek_radius(path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return None;
        }
    };
    let spec = inflab::GridSpec { outer_radius: radius, ..cfg.grid.clone() };
    let domain = match build_domain(&spec) {
        Ok(d) => Arc::new(d),
        Err(e) => {
            eprintln!("error: {}: companion grid: {e}", path.display());
            return None;
        }
    };
    match load_field(path, &domain) {
        Ok(f) => Some(f),
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            None
        }
    }
}

/// Reads `R` from a field file's `dim h R` header without loading the rest.
fn peek_radius(path: &Path) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let header = text.lines().next().ok_or("empty field file")?;
    let cells: Vec<&str> = header.split_whitespace().collect();
    if cells.len() != 3 {
        return Err(format!("header `{header}` is not `dim h R`"));
    }
    cells[2].parse::<f64>().map_err(|e| format!("outer radius: {e}"))
}

/// Writes artifacts, prints the human summary, and returns the exit status.
fn finish(run: PipelineRun, cfg: &RunConfig) -> i32 {
    if let Err(e) = write_outputs(&run, &cfg.output_dir) {
        eprintln!("error: writing {}: {e}", cfg.output_dir.display());
        return 3;
    }
    print_summary(&run, &cfg.output_dir);
    run.exit_code()
}

fn print_summary(run: &PipelineRun, dir: &Path) {
    let r = &run.report;
    if let Some(e) = &r.error {
        eprintln!("error: {e}");
    }
    if let Some(s) = &r.solve {
        println!(
            "solve: converged={} iterations={} residual_max={:.3e}",
            s.converged, s.iterations, s.residual_max
        );
    }
    for stage in &r.stages {
        println!(
            "stage R={}: iterations={} residual_max={:.3e}{}",
            stage.radius,
            stage.iterations,
            stage.residual_max,
            match stage.sup_diff {
                Some(d) => format!(" sup_diff={d:.3e}"),
                None => String::new(),
            }
        );
    }
    if let Some(c) = &r.classification {
        let detail = if let Some(slope) = c.slope {
            format!(" slope={slope:.6}")
        } else if let Some(plane) = &c.plane {
            format!(" gradient={plane:?}")
        } else if let Some(reason) = &c.reason {
            format!(" ({reason})")
        } else {
            String::new()
        };
        println!("classification: {}{detail}", c.regime);
    }
    if let Some(o) = &r.oracle {
        println!(
            "oracle: max_diff={:.3e} bound={:.3e} within={}",
            o.max_diff, o.bound, o.within
        );
    }
    for row in &r.sweep {
        println!(
            "sweep h={}: max_error={:.6e} iterations={}",
            row.h, row.max_error, row.iterations
        );
    }
    if let Some(f) = &r.fault {
        match &f.note {
            Some(note) => println!("fault: seed={} skipped ({note})", f.seed),
            None => println!(
                "fault: seed={} node={} detected={}",
                f.seed, f.node, f.detected
            ),
        }
    }
    let total: usize = r.violation_counts.values().sum();
    if total > 0 {
        let breakdown: Vec<String> =
            r.violation_counts.iter().map(|(k, n)| format!("{k} {n}")).collect();
        println!("violations: {total} ({})", breakdown.join(", "));
    }
    println!(
        "outcome: {} (exit {}) -> {}",
        r.outcome.name(),
        r.exit_code,
        dir.join("report.toml").display()
    );
}
