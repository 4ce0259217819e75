//! End-to-end run orchestration: solve, profile, classify, check, report.
//!
//! [`run_pipeline`] executes one configured run — a bounded Dirichlet solve
//! or an exterior exhaustion — then computes the slope profile, blow-down
//! fits, and classification, runs every enabled checker, and condenses the
//! results into a [`ReportDocument`]. Failures do not abort the report: a
//! non-converged exhaustion still carries its final field through the
//! downstream stages, and the report records the error alongside whatever
//! data was produced.
//!
//! The report is a single TOML document. [`render_report`] /
//! [`parse_report`] round-trip it losslessly, and two runs of the same
//! config in the same determinism mode produce byte-identical documents
//! except for the trailing `[timings]` table, which [`strip_timings`]
//! removes for comparisons. The CSV series written by [`write_outputs`] are
//! generated from the same rows the report carries, so every CSV number
//! equals the corresponding report field.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    blow_down, check_blow_down_linearity, classify, slope_profile, BlowDownFit, Regime,
    SlopeProfile,
};
use crate::config::{echo_config, BoundarySpec, Determinism, RawConfig, RunConfig};
use crate::expr::Expr;
use crate::grid::{build_domain, Domain, GridSpec, Lattice, Point};
use crate::io::{self, IoError, SweepRow};
use crate::solver::{
    solve_dirichlet, solve_exterior, AnchorMode, BoundaryCondition, ExhaustionLog,
    ExteriorOptions, FarFieldSpec, SolutionField, SolveError, SolverOptions, SweepOrder,
};
use crate::verify::{
    box_covered_interior, check_ccp, check_comparison, check_extremal_location,
    check_growth_envelope, dyadic_boxes, oracle_solve, reflect_field, restrict_field,
    LatticeBox, ViolationKind, ViolationRecord,
};

/// Identifies the report layout; bumped on incompatible changes.
pub const REPORT_SCHEMA: &str = "inflab-report/1";

/// Reflected fields must reproduce the original residual to this absolute
/// accuracy for the reflection check to pass.
pub const REFLECTION_RESIDUAL_TOL: f64 = 1e-12;

/// The report stores at most this many violation records (worst first);
/// `violation_counts` always carries the full per-kind totals.
pub const VIOLATION_CAP: usize = 200;

/// Fault injection bumps one node by this multiple of the checker tolerance.
pub const FAULT_BUMP_FACTOR: f64 = 10.0;

// ---------------------------------------------------------------------------
// Report document.
// ---------------------------------------------------------------------------

/// Overall result of a pipeline run, in decreasing severity order below
/// `Clean`. A run that both misses convergence and accumulates violations
/// reports `NotConverged`: violations measured on a non-converged field are
/// not trustworthy evidence on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Clean,
    Violations,
    NotConverged,
    ConfigError,
}

impl Outcome {
    /// Process exit status: 0 clean, 1 violations, 2 not converged,
    /// 3 config error.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Clean => 0,
            Outcome::Violations => 1,
            Outcome::NotConverged => 2,
            Outcome::ConfigError => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Clean => "clean",
            Outcome::Violations => "violations",
            Outcome::NotConverged => "not converged",
            Outcome::ConfigError => "config error",
        }
    }
}

/// Solve-stage summary. The exterior-only fields stay `None` on bounded
/// runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    /// Total sweeps across all stages.
    pub iterations: u64,
    /// Residual of the final field.
    pub residual_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_mode: Option<AnchorMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_sup_diff: Option<f64>,
}

/// One exhaustion stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub radius: f64,
    pub iterations: u64,
    pub residual_max: f64,
    /// Sup-difference against the previous stage on the monitor annulus;
    /// absent on the first stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_diff: Option<f64>,
}

/// One slope-profile radius; mirrors the profile CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub r: f64,
    pub s_plus: f64,
    pub s_minus: f64,
    pub lip: f64,
}

/// Profile-wide scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub m_plus: f64,
    pub m_minus: f64,
    pub s_inf_plus: f64,
    pub s_inf_minus: f64,
    pub s_inf: f64,
}

/// One blow-down fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub r_k: f64,
    /// Gradient of the best plane, one entry per dimension.
    pub plane: Vec<f64>,
    pub plane_error: f64,
    pub cone_slope: f64,
    pub cone_error: f64,
}

/// Classification verdict plus the margins behind it. `regime` is one of
/// `bounded`, `cone_up`, `cone_down`, `plane`, or `inconclusive`; the
/// optional fields apply to the regimes that carry parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_class: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane_errors_decreasing: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Linearity cross-check on the largest blow-down fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearitySummary {
    pub flagged: bool,
    pub slope_saturates_lip: bool,
    pub detail: String,
}

/// Reflection probe results. `sup_asymmetry` records `max |u − V|` without
/// asserting a target; the check itself compares residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_asymmetry: Option<f64>,
    /// Reason the probe was skipped (e.g. an asymmetric domain).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Cross-schedule comparison results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    /// The second run's schedule (1.5× the configured one).
    pub schedule: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_sup_diff: Option<f64>,
    pub clean: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Production solver vs. the independent small-grid reference solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    /// Largest node-wise gap between the two solvers.
    pub max_diff: f64,
    /// Acceptance bound: ten times the solver tolerance.
    pub bound: f64,
    pub within: bool,
}

/// Fault-injection record: which node was corrupted and whether the cone
/// checker caught it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSummary {
    pub seed: u64,
    pub node: usize,
    pub location: Lattice,
    pub magnitude: f64,
    pub detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One stored violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRow {
    pub kind: String,
    pub location: Lattice,
    pub magnitude: f64,
    pub context: String,
}

/// Wall-clock timings in microseconds. Excluded from the determinism
/// guarantee; [`strip_timings`] drops the table for byte comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub total_us: u64,
    pub solve_us: u64,
    pub profile_us: u64,
    pub checks_us: u64,
}

/// The full report. Field order matters: TOML requires scalar keys before
/// tables, and `timings` stays last so determinism comparisons can strip it
/// by truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    /// `bounded`, `exterior`, or `sweep`.
    pub mode: String,
    pub outcome: Outcome,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Total violations per kind, counting records beyond the stored cap.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub violation_counts: BTreeMap<String, usize>,
    pub config: RawConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile: Vec<ProfileRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_summary: Option<ProfileSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearity: Option<LinearitySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ReflectionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<ViolationRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// Renders a report as TOML.
pub fn render_report(report: &ReportDocument) -> String {
    toml::to_string_pretty(report).expect("report serializes")
}

/// Parses a report rendered by [`render_report`].
pub fn parse_report(text: &str) -> Result<ReportDocument, toml::de::Error> {
    toml::from_str(text)
}

/// Drops the trailing `[timings]` table from a rendered report, leaving the
/// deterministic part for byte comparison.
pub fn strip_timings(text: &str) -> &str {
    match text.find("\n[timings]") {
        Some(i) => &text[..i + 1],
        None => text,
    }
}

/// A finished run: the report plus the artifacts [`write_outputs`] writes.
#[derive(Debug)]
pub struct PipelineRun {
    pub report: ReportDocument,
    /// The final solved field (absent when the solve itself failed).
    pub field: Option<SolutionField>,
    /// The slope profile backing the report's profile rows.
    pub profile: Option<SlopeProfile>,
}

impl PipelineRun {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }
}

// ---------------------------------------------------------------------------
// Boundary data.
// ---------------------------------------------------------------------------

fn lattice_of(p: Point, h: f64, dim: usize) -> Lattice {
    let mut z = [0i32; 3];
    for c in 0..dim {
        z[c] = (p[c] / h).round() as i32;
    }
    z
}

/// Obstacle data (plus outer data for bounded runs) as a lattice-keyed map,
/// so the same values apply across exhaustion stages whose linear indices
/// differ. Errors are config-grade: incomplete tables, stray indices, or an
/// expression that divides by zero at a boundary node.
fn boundary_map(config: &RunConfig, domain: &Domain) -> Result<BTreeMap<Lattice, f64>, String> {
    let needed: Vec<usize> = if config.is_exterior() {
        domain.obstacle_boundary.clone()
    } else {
        let mut v = domain.obstacle_boundary.clone();
        v.extend_from_slice(&domain.outer_boundary);
        v
    };
    let mut map = BTreeMap::new();
    match &config.boundary {
        BoundarySpec::Expression(_) => {
            let expr = config.boundary_expr().expect("expression variant");
            let dim = domain.dim();
            for &idx in &needed {
                let p = domain.point(idx);
                let v = expr
                    .eval(p, dim)
                    .map_err(|e| format!("boundary expression at node {idx}: {e}"))?;
                map.insert(domain.lattice(idx), v);
            }
        }
        BoundarySpec::Table(rows) => {
            let mut wanted: BTreeMap<usize, Lattice> =
                needed.iter().map(|&i| (i, domain.lattice(i))).collect();
            for &(idx, v) in rows {
                match wanted.remove(&idx) {
                    Some(z) => {
                        if !v.is_finite() {
                            return Err(format!("boundary table value at index {idx} is {v}"));
                        }
                        map.insert(z, v);
                    }
                    None => {
                        return Err(format!(
                            "boundary table index {idx} is not a boundary node of the primary domain"
                        ))
                    }
                }
            }
            if let Some((&idx, _)) = wanted.iter().next() {
                return Err(format!(
                    "boundary table misses {} node(s), first at index {idx}",
                    wanted.len()
                ));
            }
        }
    }
    Ok(map)
}

fn solver_options(config: &RunConfig) -> SolverOptions {
    SolverOptions {
        tol: config.tolerances.solver,
        order: match config.determinism {
            Determinism::Ordered => SweepOrder::RedBlack,
            Determinism::Jacobi => SweepOrder::Jacobi,
        },
        ..Default::default()
    }
}

// ---------------------------------------------------------------------------
// Pipeline.
// ---------------------------------------------------------------------------

fn base_report(config: &RunConfig, mode: &str) -> ReportDocument {
    ReportDocument {
        schema: REPORT_SCHEMA.to_string(),
        mode: mode.to_string(),
        outcome: Outcome::Clean,
        exit_code: 0,
        error: None,
        violation_counts: BTreeMap::new(),
        config: echo_config(config),
        solve: None,
        stages: Vec::new(),
        profile: Vec::new(),
        profile_summary: None,
        fits: Vec::new(),
        classification: None,
        linearity: None,
        reflection: None,
        comparison: None,
        oracle: None,
        fault: None,
        violations: Vec::new(),
        sweep: Vec::new(),
        timings: None,
    }
}

fn fail(mut report: ReportDocument, outcome: Outcome, message: String) -> PipelineRun {
    report.error = Some(message);
    report.outcome = outcome;
    report.exit_code = outcome.exit_code();
    PipelineRun { report, field: None, profile: None }
}

/// Runs one exterior exhaustion, keeping the final field and log when the
/// only failure is the convergence gate.
fn exhaust(
    spec: &GridSpec,
    gmap: &BTreeMap<Lattice, f64>,
    far: &FarFieldSpec,
    schedule: &[f64],
    monitor: (f64, f64),
    opts: &ExteriorOptions,
) -> Result<(SolutionField, ExhaustionLog, Option<String>), String> {
    let h = spec.h;
    let dim = spec.dim;
    let g = |p: Point| *gmap.get(&lattice_of(p, h, dim)).expect("map covers the obstacle shell");
    match solve_exterior(spec, &g, far, schedule, monitor, opts) {
        Ok((field, log)) => Ok((field, log, None)),
        Err(SolveError::ExhaustionNotConverged { field, log, sup_diff, tol }) => {
            let msg = format!(
                "exhaustion did not converge: last sup-difference {sup_diff:.3e} on the monitor annulus (tol {tol:.1e})"
            );
            Ok((*field, *log, Some(msg)))
        }
        Err(e) => Err(e.to_string()),
    }
}

fn profile_rows(profile: &SlopeProfile) -> (Vec<ProfileRow>, ProfileSummary) {
    let rows = profile
        .samples
        .iter()
        .map(|s| ProfileRow { r: s.r, s_plus: s.s_plus, s_minus: s.s_minus, lip: s.lip })
        .collect();
    let summary = ProfileSummary {
        m_plus: profile.m_plus,
        m_minus: profile.m_minus,
        s_inf_plus: profile.s_inf_plus,
        s_inf_minus: profile.s_inf_minus,
        s_inf: profile.s_inf,
    };
    (rows, summary)
}

fn fit_rows(fits: &[BlowDownFit], dim: usize) -> Vec<FitRow> {
    fits.iter()
        .map(|f| FitRow {
            r_k: f.r_k,
            plane: f.best_plane[..dim].to_vec(),
            plane_error: f.plane_error,
            cone_slope: f.cone_slope,
            cone_error: f.cone_error,
        })
        .collect()
}

fn class_summary(
    profile: &SlopeProfile,
    fits: &[BlowDownFit],
    eps_class: f64,
    dim: usize,
) -> ClassSummary {
    match classify(profile, fits, eps_class) {
        Ok(class) => {
            let (regime, slope, plane) = match class.regime {
                Regime::Bounded => ("bounded", None, None),
                Regime::ConeUp { slope } => ("cone_up", Some(slope), None),
                Regime::ConeDown { slope } => ("cone_down", Some(slope), None),
                Regime::Plane { a } => ("plane", None, Some(a[..dim].to_vec())),
            };
            let d = class.diagnostics;
            ClassSummary {
                regime: regime.to_string(),
                slope,
                plane,
                gap: Some(d.gap),
                eps_class: Some(d.eps_class),
                plane_errors_decreasing: Some(d.plane_errors_decreasing),
                reason: None,
            }
        }
        Err(e) => ClassSummary {
            regime: "inconclusive".to_string(),
            slope: None,
            plane: None,
            gap: None,
            eps_class: Some(eps_class),
            plane_errors_decreasing: None,
            reason: Some(e.to_string()),
        },
    }
}

/// Profile, blow-down fits, classification, and linearity diagnostics for a
/// solved field. Fit radii follow the schedule on exterior runs and two
/// interior fractions of the outer radius otherwise.
fn analyze_field(
    report: &mut ReportDocument,
    config: &RunConfig,
    field: &SolutionField,
) -> Result<SlopeProfile, String> {
    let profile = slope_profile(field, &config.profile_radii).map_err(|e| e.to_string())?;
    let (rows, summary) = profile_rows(&profile);
    report.profile = rows;
    report.profile_summary = Some(summary);

    let dim = field.domain.dim();
    let outer_radius = field.domain.spec.outer_radius;
    let fit_radii: Vec<f64> = if config.is_exterior() {
        config.schedule.clone()
    } else {
        vec![0.6 * outer_radius, 0.75 * outer_radius]
    };
    let mut fits = Vec::new();
    let mut fit_note: Option<String> = None;
    for &r_k in &fit_radii {
        match blow_down(field, r_k, (0.5, 0.9)) {
            Ok(f) => fits.push(f),
            Err(e) => {
                fit_note = Some(format!("blow-down at radius {r_k}: {e}"));
                break;
            }
        }
    }
    report.fits = fit_rows(&fits, dim);
    report.classification = Some(match fit_note {
        None => class_summary(&profile, &fits, config.tolerances.eps_class, dim),
        Some(reason) => ClassSummary {
            regime: "inconclusive".to_string(),
            slope: None,
            plane: None,
            gap: None,
            eps_class: Some(config.tolerances.eps_class),
            plane_errors_decreasing: None,
            reason: Some(reason),
        },
    });
    if let (Some(fit), Some(last)) = (fits.last(), profile.samples.last()) {
        let diag = check_blow_down_linearity(fit, last.lip, config.tolerances.eps_class);
        report.linearity = Some(LinearitySummary {
            flagged: diag.flagged,
            slope_saturates_lip: diag.slope_saturates_lip,
            detail: diag.detail,
        });
    }
    Ok(profile)
}

/// The per-field checks (cone comparison, growth envelope, extremal
/// location, reflection symmetry), honoring the `[checks]` switches.
fn basic_checks(
    report: &mut ReportDocument,
    config: &RunConfig,
    field: &SolutionField,
    profile: &SlopeProfile,
    boxes: &[LatticeBox],
) -> Vec<ViolationRecord> {
    let mut violations: Vec<ViolationRecord> = Vec::new();
    let checker_tol = config.tolerances.checker;
    let dim = field.domain.dim();
    if config.checks.ccp {
        violations.extend(check_ccp(field, boxes, checker_tol));
    }
    if config.checks.envelope {
        let eps = 5.0 * config.grid.h + config.tolerances.solver;
        violations.extend(check_growth_envelope(field, profile, eps));
    }
    if config.checks.extremal && config.is_exterior() {
        let far = config.far_field.as_ref().expect("exterior config");
        violations.extend(check_extremal_location(field, far, checker_tol));
    }
    if config.checks.reflection {
        match reflect_field(field, dim - 1) {
            Ok(reflected) => {
                let gap = (reflected.residual_max - field.residual_max).abs();
                let asym = field
                    .domain
                    .live_nodes()
                    .map(|i| (field.values[i] - reflected.values[i]).abs())
                    .fold(0.0f64, f64::max);
                if gap > REFLECTION_RESIDUAL_TOL {
                    violations.push(ViolationRecord {
                        kind: ViolationKind::Reflection,
                        location: [0; 3],
                        magnitude: gap,
                        context: format!(
                            "reflected residual differs from the original by more than {REFLECTION_RESIDUAL_TOL:.0e}"
                        ),
                    });
                }
                report.reflection = Some(ReflectionSummary {
                    residual_gap: Some(gap),
                    sup_asymmetry: Some(asym),
                    note: None,
                });
            }
            Err(e) => {
                report.reflection = Some(ReflectionSummary {
                    residual_gap: None,
                    sup_asymmetry: None,
                    note: Some(e.to_string()),
                });
            }
        }
    }
    violations
}

/// Tallies, orders (worst first), and caps the stored violation list.
/// Returns the uncapped total.
fn finalize_violations(
    report: &mut ReportDocument,
    mut violations: Vec<ViolationRecord>,
) -> usize {
    for v in &violations {
        *report.violation_counts.entry(v.kind.name().to_string()).or_insert(0) += 1;
    }
    let total = violations.len();
    violations.sort_by(|a, b| {
        b.magnitude
            .partial_cmp(&a.magnitude)
            .expect("finite magnitudes")
            .then(a.location.cmp(&b.location))
            .then(a.kind.name().cmp(b.kind.name()))
    });
    violations.truncate(VIOLATION_CAP);
    report.violations = violations
        .into_iter()
        .map(|v| ViolationRow {
            kind: v.kind.name().to_string(),
            location: v.location,
            magnitude: v.magnitude,
            context: v.context,
        })
        .collect();
    total
}

/// Interior nodes strictly inside at least one box: a bump there must show
/// up as an above-cone record at the node itself.
fn strictly_covered(domain: &Domain, boxes: &[LatticeBox]) -> Vec<usize> {
    let dim = domain.spec.dim;
    let shrunk: Vec<LatticeBox> = boxes
        .iter()
        .map(|b| {
            let mut lo = b.lo;
            let mut hi = b.hi;
            for c in 0..dim {
                lo[c] += 1;
                hi[c] -= 1;
            }
            LatticeBox { lo, hi }
        })
        .collect();
    box_covered_interior(domain, &shrunk)
}

/// Seeded single-node corruption, drawn from the strictly-box-covered
/// population so the cone checker is guaranteed a view of the bump. Returns
/// the target when a node was actually corrupted.
fn inject_fault(
    report: &mut ReportDocument,
    config: &RunConfig,
    field: &mut SolutionField,
    boxes: &[LatticeBox],
) -> Option<(usize, Lattice)> {
    let seed = config.fault_seed?;
    let population = strictly_covered(&field.domain, boxes);
    if population.is_empty() {
        report.fault = Some(FaultSummary {
            seed,
            node: 0,
            location: [0; 3],
            magnitude: 0.0,
            detected: false,
            note: Some("no box-covered interior node to corrupt".to_string()),
        });
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let node = population[rng.gen_range(0..population.len())];
    let magnitude = FAULT_BUMP_FACTOR * config.tolerances.checker;
    field.values[node] += magnitude;
    field.residual_max = field.recompute_residual_max();
    let location = field.domain.lattice(node);
    report.fault = Some(FaultSummary {
        seed,
        node,
        location,
        magnitude,
        detected: false,
        note: None,
    });
    if let Some(s) = &mut report.solve {
        s.residual_max = field.residual_max;
    }
    Some((node, location))
}

/// A fault counts as detected only when a cone-comparison record lands on
/// the corrupted node itself.
fn settle_fault(
    report: &mut ReportDocument,
    target: &Option<(usize, Lattice)>,
    violations: &[ViolationRecord],
) {
    if let (Some((_, z)), Some(fault)) = (target, &mut report.fault) {
        fault.detected = violations.iter().any(|v| {
            matches!(v.kind, ViolationKind::CcpAbove | ViolationKind::CcpBelow)
                && v.location == *z
        });
    }
}

fn bounded_bc(
    domain: &Arc<Domain>,
    gmap: &BTreeMap<Lattice, f64>,
) -> Result<BoundaryCondition, String> {
    let obstacle: Vec<f64> =
        domain.obstacle_boundary.iter().map(|&i| gmap[&domain.lattice(i)]).collect();
    let outer: Vec<f64> =
        domain.outer_boundary.iter().map(|&i| gmap[&domain.lattice(i)]).collect();
    BoundaryCondition::from_values(domain, obstacle, outer).map_err(|e| e.to_string())
}

/// Executes the configured run end to end. Never panics on run-level
/// failures: the report captures them (`outcome`, `error`) and whatever
/// stages completed.
pub fn run_pipeline(config: &RunConfig) -> PipelineRun {
    let t0 = Instant::now();
    let exterior = config.is_exterior();
    let mut report = base_report(config, if exterior { "exterior" } else { "bounded" });

    let domain = match build_domain(&config.grid) {
        Ok(d) => Arc::new(d),
        Err(e) => return fail(report, Outcome::ConfigError, e.to_string()),
    };
    let gmap = match boundary_map(config, &domain) {
        Ok(m) => m,
        Err(msg) => return fail(report, Outcome::ConfigError, msg),
    };

    // Solve.
    let opts = solver_options(config);
    let mut not_converged: Option<String> = None;
    let mut log: Option<ExhaustionLog> = None;
    let mut field = if exterior {
        let far = config.far_field.as_ref().expect("exterior config");
        let ext = ExteriorOptions {
            solver: opts.clone(),
            anchor_mode: config.anchor,
            warm_start: true,
        };
        match exhaust(&config.grid, &gmap, far, &config.schedule, config.monitor, &ext) {
            Ok((f, l, nc)) => {
                not_converged = nc;
                log = Some(l);
                f
            }
            Err(msg) => return fail(report, Outcome::ConfigError, msg),
        }
    } else {
        let bc = match bounded_bc(&domain, &gmap) {
            Ok(bc) => bc,
            Err(msg) => return fail(report, Outcome::ConfigError, msg),
        };
        match solve_dirichlet(&domain, &bc, &opts, None) {
            Ok(f) => f,
            Err(e @ SolveError::NotConverged { .. }) => {
                return fail(report, Outcome::NotConverged, e.to_string())
            }
            Err(e) => return fail(report, Outcome::ConfigError, e.to_string()),
        }
    };
    let solve_us = t0.elapsed().as_micros() as u64;

    report.solve = Some(match &log {
        Some(l) => SolveSummary {
            converged: l.converged,
            iterations: l.stages.iter().map(|s| s.iterations).sum(),
            residual_max: field.residual_max,
            c_plus: Some(l.c_plus),
            c_minus: Some(l.c_minus),
            anchor: Some(l.anchor),
            anchor_mode: Some(l.anchor_mode),
            monitor_lo: Some(l.monitor_annulus.0),
            monitor_hi: Some(l.monitor_annulus.1),
            last_sup_diff: l.last_sup_diff(),
        },
        None => SolveSummary {
            converged: field.converged,
            iterations: field.iterations,
            residual_max: field.residual_max,
            c_plus: None,
            c_minus: None,
            anchor: None,
            anchor_mode: None,
            monitor_lo: None,
            monitor_hi: None,
            last_sup_diff: None,
        },
    });
    if let Some(l) = &log {
        report.stages = l
            .stages
            .iter()
            .map(|s| StageSummary {
                radius: s.radius,
                iterations: s.iterations,
                residual_max: s.residual_max,
                sup_diff: s.sup_diff,
            })
            .collect();
    }

    // Fault injection: corrupt one strictly-box-covered node so the cone
    // checker has a fair shot, then let the rest of the pipeline run on the
    // corrupted field.
    let boxes = dyadic_boxes(&field.domain);
    let fault_target = inject_fault(&mut report, config, &mut field, &boxes);

    // Profile, fits, classification.
    let t_profile = Instant::now();
    let profile = match analyze_field(&mut report, config, &field) {
        Ok(p) => p,
        Err(msg) => {
            report.timings = Some(Timings {
                total_us: t0.elapsed().as_micros() as u64,
                solve_us,
                profile_us: 0,
                checks_us: 0,
            });
            let mut run = fail(report, Outcome::ConfigError, msg);
            run.field = Some(field);
            return run;
        }
    };
    let profile_us = t_profile.elapsed().as_micros() as u64;

    // Checks.
    let t_checks = Instant::now();
    let checker_tol = config.tolerances.checker;
    let mut violations = basic_checks(&mut report, config, &field, &profile, &boxes);
    if config.checks.comparison && exterior {
        let far = config.far_field.as_ref().expect("exterior config");
        let schedule2: Vec<f64> = config.schedule.iter().map(|r| 1.5 * r).collect();
        let spec2 = GridSpec {
            outer_radius: *schedule2.last().expect("nonempty schedule"),
            ..config.grid.clone()
        };
        let ext = ExteriorOptions {
            solver: opts.clone(),
            anchor_mode: config.anchor,
            warm_start: true,
        };
        let mut summary = ComparisonSummary {
            schedule: schedule2.clone(),
            monitor_sup_diff: None,
            clean: true,
            note: None,
        };
        match exhaust(&spec2, &gmap, far, &schedule2, config.monitor, &ext) {
            Ok((field2, log2, _)) => {
                if let (Some(a), Some(b)) =
                    (log.as_ref().and_then(|l| l.last_monitor()), log2.last_monitor())
                {
                    summary.monitor_sup_diff =
                        Some(crate::solver::monitor_sup_diff(a, b));
                }
                match restrict_field(&field2, &field.domain) {
                    Ok(v) => {
                        for (x, y) in [(&field, &v), (&v, &field)] {
                            match check_comparison(x, y, checker_tol) {
                                Ok(Some(record)) => {
                                    summary.clean = false;
                                    violations.push(record);
                                }
                                Ok(None) => {}
                                Err(e) => {
                                    summary.clean = false;
                                    summary.note = Some(e.to_string());
                                }
                            }
                        }
                    }
                    Err(e) => {
                        summary.clean = false;
                        summary.note = Some(e.to_string());
                    }
                }
            }
            Err(msg) => {
                summary.clean = false;
                summary.note = Some(msg);
            }
        }
        report.comparison = Some(summary);
    }
    let checks_us = t_checks.elapsed().as_micros() as u64;

    settle_fault(&mut report, &fault_target, &violations);
    let total_violations = finalize_violations(&mut report, violations);

    report.outcome = if not_converged.is_some() {
        Outcome::NotConverged
    } else if total_violations > 0 {
        Outcome::Violations
    } else {
        Outcome::Clean
    };
    report.exit_code = report.outcome.exit_code();
    report.error = not_converged;
    report.timings = Some(Timings {
        total_us: t0.elapsed().as_micros() as u64,
        solve_us,
        profile_us,
        checks_us,
    });

    PipelineRun { report, field: Some(field), profile: Some(profile) }
}

/// Profile, blow-down fits, and classification for an already-solved field
/// (typically loaded from disk). Checks do not run in this mode.
pub fn run_classify(config: &RunConfig, field: SolutionField) -> PipelineRun {
    let t0 = Instant::now();
    let mut report = base_report(config, "classify");
    let profile = match analyze_field(&mut report, config, &field) {
        Ok(p) => p,
        Err(msg) => {
            let mut run = fail(report, Outcome::ConfigError, msg);
            run.field = Some(field);
            return run;
        }
    };
    let total_us = t0.elapsed().as_micros() as u64;
    report.timings = Some(Timings { total_us, solve_us: 0, profile_us: total_us, checks_us: 0 });
    PipelineRun { report, field: Some(field), profile: Some(profile) }
}

/// Checkers over a saved field. With a second field, the comparison
/// principle is also enforced across the pair after restricting the wider
/// field onto the narrower domain. A configured fault seed corrupts the
/// first field before checking, exactly as in a live run.
pub fn run_verify(
    config: &RunConfig,
    mut field: SolutionField,
    other: Option<SolutionField>,
) -> PipelineRun {
    let t0 = Instant::now();
    let mut report = base_report(config, "verify");

    let boxes = dyadic_boxes(&field.domain);
    let fault_target = inject_fault(&mut report, config, &mut field, &boxes);

    let t_profile = Instant::now();
    let profile = match analyze_field(&mut report, config, &field) {
        Ok(p) => p,
        Err(msg) => {
            let mut run = fail(report, Outcome::ConfigError, msg);
            run.field = Some(field);
            return run;
        }
    };
    let profile_us = t_profile.elapsed().as_micros() as u64;

    let t_checks = Instant::now();
    let mut violations = basic_checks(&mut report, config, &field, &profile, &boxes);
    let mut pair_error: Option<String> = None;
    if let Some(other) = &other {
        let mut summary = ComparisonSummary {
            schedule: vec![other.domain.spec.outer_radius],
            monitor_sup_diff: None,
            clean: true,
            note: None,
        };
        // Compare on the narrower domain; restriction fails loudly when the
        // lattices are incompatible.
        let narrower = field.domain.spec.outer_radius <= other.domain.spec.outer_radius;
        let restricted = if narrower {
            restrict_field(other, &field.domain)
        } else {
            restrict_field(&field, &other.domain)
        };
        match restricted {
            Ok(r) => {
                let (a, b) = if narrower { (&field, &r) } else { (&r, other) };
                for (x, y) in [(a, b), (b, a)] {
                    match check_comparison(x, y, config.tolerances.checker) {
                        Ok(Some(record)) => {
                            summary.clean = false;
                            violations.push(record);
                        }
                        Ok(None) => {}
                        Err(e) => {
                            summary.clean = false;
                            summary.note = Some(e.to_string());
                            pair_error = Some(e.to_string());
                        }
                    }
                }
            }
            Err(e) => {
                summary.clean = false;
                summary.note = Some(e.to_string());
                pair_error = Some(e.to_string());
            }
        }
        report.comparison = Some(summary);
    }
    let checks_us = t_checks.elapsed().as_micros() as u64;

    settle_fault(&mut report, &fault_target, &violations);
    let total = finalize_violations(&mut report, violations);
    report.outcome = if pair_error.is_some() {
        Outcome::ConfigError
    } else if total > 0 {
        Outcome::Violations
    } else {
        Outcome::Clean
    };
    report.exit_code = report.outcome.exit_code();
    report.error = pair_error;
    report.timings = Some(Timings {
        total_us: t0.elapsed().as_micros() as u64,
        solve_us: 0,
        profile_us,
        checks_us,
    });
    PipelineRun { report, field: Some(field), profile: Some(profile) }
}

/// Solves the configured bounded problem twice — production solver and the
/// brute-force small-grid reference — and reports the largest node-wise gap
/// against a bound of ten solver tolerances.
pub fn run_oracle_compare(config: &RunConfig) -> PipelineRun {
    let t0 = Instant::now();
    let mut report = base_report(config, "oracle");
    if config.is_exterior() {
        return fail(
            report,
            Outcome::ConfigError,
            "oracle comparison runs on bounded configurations only (drop the [farfield] table)"
                .into(),
        );
    }
    let domain = match build_domain(&config.grid) {
        Ok(d) => Arc::new(d),
        Err(e) => return fail(report, Outcome::ConfigError, e.to_string()),
    };
    let gmap = match boundary_map(config, &domain) {
        Ok(m) => m,
        Err(msg) => return fail(report, Outcome::ConfigError, msg),
    };
    let bc = match bounded_bc(&domain, &gmap) {
        Ok(bc) => bc,
        Err(msg) => return fail(report, Outcome::ConfigError, msg),
    };
    let opts = solver_options(config);
    let field = match solve_dirichlet(&domain, &bc, &opts, None) {
        Ok(f) => f,
        Err(e @ SolveError::NotConverged { .. }) => {
            return fail(report, Outcome::NotConverged, e.to_string())
        }
        Err(e) => return fail(report, Outcome::ConfigError, e.to_string()),
    };
    let solve_us = t0.elapsed().as_micros() as u64;
    report.solve = Some(SolveSummary {
        converged: field.converged,
        iterations: field.iterations,
        residual_max: field.residual_max,
        c_plus: None,
        c_minus: None,
        anchor: None,
        anchor_mode: None,
        monitor_lo: None,
        monitor_hi: None,
        last_sup_diff: None,
    });

    let t_checks = Instant::now();
    let oracle = match oracle_solve(&domain, &bc) {
        Ok(f) => f,
        Err(e) => {
            let mut run = fail(report, Outcome::ConfigError, e.to_string());
            run.field = Some(field);
            return run;
        }
    };
    let (mut max_diff, mut worst) = (0.0f64, 0usize);
    for i in domain.live_nodes() {
        let d = (field.values[i] - oracle.values[i]).abs();
        if d > max_diff {
            max_diff = d;
            worst = i;
        }
    }
    let bound = 10.0 * config.tolerances.solver;
    let within = max_diff <= bound;
    report.oracle = Some(OracleSummary { max_diff, bound, within });
    if !within {
        report.violation_counts.insert("oracle".to_string(), 1);
        report.violations.push(ViolationRow {
            kind: "oracle".to_string(),
            location: domain.lattice(worst),
            magnitude: max_diff,
            context: format!("production and reference solvers disagree beyond {bound:.3e}"),
        });
        report.outcome = Outcome::Violations;
        report.exit_code = report.outcome.exit_code();
    }
    report.timings = Some(Timings {
        total_us: t0.elapsed().as_micros() as u64,
        solve_us,
        profile_us: 0,
        checks_us: t_checks.elapsed().as_micros() as u64,
    });
    PipelineRun { report, field: Some(field), profile: None }
}

/// Runs the h-refinement sweep: one solve per configured spacing, with the
/// max node error against the closed-form `reference` expression.
pub fn run_sweep(config: &RunConfig) -> PipelineRun {
    let t0 = Instant::now();
    let mut report = base_report(config, "sweep");
    if config.sweep_h.is_empty() {
        return fail(report, Outcome::ConfigError, "sweep needs a nonempty `sweep_h`".into());
    }
    let Some(ref_src) = &config.reference else {
        return fail(report, Outcome::ConfigError, "sweep needs a `reference` expression".into());
    };
    let reference = match Expr::parse(ref_src) {
        Ok(e) => e,
        Err(e) => return fail(report, Outcome::ConfigError, format!("reference: {e}")),
    };
    if matches!(config.boundary, BoundarySpec::Table(_)) {
        return fail(
            report,
            Outcome::ConfigError,
            "sweep requires an expression boundary (tables are tied to one grid)".into(),
        );
    }

    let opts = solver_options(config);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &h in &config.sweep_h {
        let spec = GridSpec { h, ..config.grid.clone() };
        let sub = RunConfig { grid: spec.clone(), ..config.clone() };
        let domain = match build_domain(&spec) {
            Ok(d) => Arc::new(d),
            Err(e) => return fail(report, Outcome::ConfigError, format!("h={h}: {e}")),
        };
        let gmap = match boundary_map(&sub, &domain) {
            Ok(m) => m,
            Err(msg) => return fail(report, Outcome::ConfigError, format!("h={h}: {msg}")),
        };
        let (field, iterations) = if config.is_exterior() {
            let far = config.far_field.as_ref().expect("exterior config");
            let ext = ExteriorOptions {
                solver: opts.clone(),
                anchor_mode: config.anchor,
                warm_start: true,
            };
            match exhaust(&spec, &gmap, far, &config.schedule, config.monitor, &ext) {
                Ok((f, l, nc)) => {
                    if let Some(msg) = nc {
                        failures.push(format!("h={h}: {msg}"));
                    }
                    let iters = l.stages.iter().map(|s| s.iterations).sum();
                    (f, iters)
                }
                Err(msg) => return fail(report, Outcome::ConfigError, format!("h={h}: {msg}")),
            }
        } else {
            let obstacle: Vec<f64> =
                domain.obstacle_boundary.iter().map(|&i| gmap[&domain.lattice(i)]).collect();
            let outer: Vec<f64> =
                domain.outer_boundary.iter().map(|&i| gmap[&domain.lattice(i)]).collect();
            let bc = match BoundaryCondition::from_values(&domain, obstacle, outer) {
                Ok(bc) => bc,
                Err(e) => return fail(report, Outcome::ConfigError, format!("h={h}: {e}")),
            };
            match solve_dirichlet(&domain, &bc, &opts, None) {
                Ok(f) => {
                    let iters = f.iterations;
                    (f, iters)
                }
                Err(e @ SolveError::NotConverged { .. }) => {
                    return fail(report, Outcome::NotConverged, format!("h={h}: {e}"))
                }
                Err(e) => return fail(report, Outcome::ConfigError, format!("h={h}: {e}")),
            }
        };
        let mut max_error = 0.0f64;
        for i in field.domain.live_nodes() {
            let p = field.domain.point(i);
            match reference.eval(p, field.domain.dim()) {
                Ok(want) => max_error = max_error.max((field.values[i] - want).abs()),
                Err(e) => {
                    return fail(
                        report,
                        Outcome::ConfigError,
                        format!("reference at node {i}: {e}"),
                    )
                }
            }
        }
        rows.push(SweepRow { h, max_error, iterations, residual_max: field.residual_max });
    }

    report.sweep = rows;
    if failures.is_empty() {
        report.outcome = Outcome::Clean;
    } else {
        report.outcome = Outcome::NotConverged;
        report.error = Some(failures.join("; "));
    }
    report.exit_code = report.outcome.exit_code();
    let total = t0.elapsed().as_micros() as u64;
    report.timings =
        Some(Timings { total_us: total, solve_us: total, profile_us: 0, checks_us: 0 });
    PipelineRun { report, field: None, profile: None }
}

/// Writes the run's artifacts into `dir`: `report.toml` always, `field.txt`
/// when a field exists, `profile.csv` when the profile ran, and `sweep.csv`
/// for sweep rows. The CSVs are generated from the same values the report
/// carries.
pub fn write_outputs(run: &PipelineRun, dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    io::write_atomic(dir.join("report.toml").as_path(), render_report(&run.report).as_bytes())?;
    if let Some(field) = &run.field {
        io::write_field(&dir.join("field.txt"), field)?;
    }
    if let Some(profile) = &run.profile {
        io::write_profile_csv(&dir.join("profile.csv"), profile)?;
    }
    if !run.report.sweep.is_empty() {
        io::write_sweep_csv(&dir.join("sweep.csv"), &run.report.sweep)?;
    }
    Ok(())
}
