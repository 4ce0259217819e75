//! Run configuration: a TOML document describing one experiment — grid,
//! boundary data, far field, exhaustion schedule, tolerances, and which
//! checks to run. [`parse_config`] accumulates every located parse and
//! validation error instead of stopping at the first; [`render_config`]
//! writes the fully-defaulted form back out so that a rendered config
//! re-parses to an equal [`RunConfig`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::grid::{GridSpec, ObstacleShape, OuterShape, Point, MAX_DIM};
use crate::solver::{AnchorMode, FarFieldSpec};

/// Default solver update tolerance.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-8;
/// Default classification margin (scaled by `max(1, S_inf)` downstream).
pub const DEFAULT_EPS_CLASS: f64 = 0.05;
/// Checker tolerances default to this multiple of the solver tolerance so
/// that checker verdicts are never dominated by iteration noise.
pub const CHECKER_TOL_FACTOR: f64 = 20.0;
/// Default stencil width in lattice steps.
pub const DEFAULT_STENCIL_WIDTH: usize = 3;
/// Number of radii in the default slope-profile ladder.
pub const DEFAULT_PROFILE_POINTS: usize = 8;

/// One located problem found while reading a config document.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    /// The document (or an embedded expression) failed to parse. `line` is
    /// 1-based; 0 means the location could not be attributed.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    /// The document parsed but a field's value is unusable.
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

/// Iteration ordering requested for the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Determinism {
    /// Red-black ordered sweeps (default; fastest).
    Ordered,
    /// Plain simultaneous updates; bit-deterministic regardless of worker
    /// count and sweep phasing.
    Jacobi,
}

/// Dirichlet data on the obstacle: an expression in the documented grammar,
/// or explicit per-node values keyed by linear node index in the run's
/// primary domain (the final schedule radius for exterior runs).
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec {
    Expression(String),
    Table(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Solver stop threshold on the max node update.
    pub solver: f64,
    /// Classification margin ε_class.
    pub eps_class: f64,
    /// Tolerance used by every verification checker.
    pub checker: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solver: DEFAULT_SOLVER_TOL,
            eps_class: DEFAULT_EPS_CLASS,
            checker: CHECKER_TOL_FACTOR * DEFAULT_SOLVER_TOL,
        }
    }
}

/// Which verification stages the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Checks {
    pub ccp: bool,
    pub envelope: bool,
    pub extremal: bool,
    pub reflection: bool,
    /// Runs a second exhaustion on a 1.5× schedule and compares both ways;
    /// off by default because it doubles the solve cost.
    pub comparison: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks { ccp: true, envelope: true, extremal: true, reflection: true, comparison: false }
    }
}

/// A fully validated run description. Field semantics:
///
/// * `grid.outer_radius` is the radius of the run's primary domain — the
///   last schedule entry for exterior runs, the configured `outer_radius`
///   for bounded runs.
/// * `far_field` present selects the exterior pipeline; absent means a
///   single bounded Dirichlet solve with `g` on the whole boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub boundary: BoundarySpec,
    pub far_field: Option<FarFieldSpec>,
    /// Exhaustion radii, strictly increasing; empty for bounded runs.
    pub schedule: Vec<f64>,
    /// Fixed annulus on which consecutive stages are compared.
    pub monitor: (f64, f64),
    /// Anchoring constant for the far-field datum on exterior runs.
    pub anchor: AnchorMode,
    /// Radii for the slope profile.
    pub profile_radii: Vec<f64>,
    pub tolerances: Tolerances,
    pub checks: Checks,
    /// When set, the pipeline corrupts one solved node by +10× checker tol
    /// (node drawn with this seed) and expects the checkers to object.
    pub fault_seed: Option<u64>,
    /// Grid spacings for the `sweep` subcommand; empty otherwise.
    pub sweep_h: Vec<f64>,
    /// Closed-form reference expression for sweep error measurement.
    pub reference: Option<String>,
    pub output_dir: PathBuf,
    pub determinism: Determinism,
}

impl RunConfig {
    /// The parsed obstacle-data expression, when the boundary is one.
    /// Validated during [`parse_config`], so parsing here cannot fail for
    /// configs produced by it.
    pub fn boundary_expr(&self) -> Option<Expr> {
        match &self.boundary {
            BoundarySpec::Expression(src) => Some(Expr::parse(src).expect("validated at parse")),
            BoundarySpec::Table(_) => None,
        }
    }

    /// True when the config describes an exterior (exhaustion) run.
    pub fn is_exterior(&self) -> bool {
        self.far_field.is_some()
    }
}

// ---------------------------------------------------------------------------
// Raw document shape (serde side).
// ---------------------------------------------------------------------------

/// The config document as written: every field optional so that defaults can
/// be filled and so that rendering a [`RunConfig`] writes all of them back
/// explicitly. Public because reports embed an echo of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub determinism: Option<Determinism>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_h: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<RawObstacle>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<RawBoundary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub farfield: Option<RawFarField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<RawTolerances>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Checks>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<RawFault>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<RawOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawObstacle {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawBoundary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawFarField {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plane: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawTolerances {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_class: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checker: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawFault {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Parsing and validation.
// ---------------------------------------------------------------------------

/// 1-based line number of a byte offset in `text`.
fn line_of(text: &str, byte: usize) -> usize {
    text.bytes().take(byte).filter(|&b| b == b'\n').count() + 1
}

/// 1-based line of the first line whose first token is `key`, for
/// attributing errors inside embedded expressions.
fn line_of_key(text: &str, key: &str) -> usize {
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if trimmed.starts_with(key)
            && trimmed[key.len()..].trim_start().starts_with('=')
        {
            return i + 1;
        }
    }
    0
}

fn validation(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.to_string(), message: message.into() }
}

/// Parses and validates a config document, accumulating every error found.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let raw: RawConfig = match toml::from_str(text) {
        Ok(raw) => raw,
        Err(err) => {
            let line = err
                .span()
                .map(|s| line_of(text, s.start))
                .unwrap_or(0);
            return Err(vec![ConfigError::Parse { line, message: err.message().to_string() }]);
        }
    };
    let mut errors = Vec::new();

    let dim = raw.dim.unwrap_or(2);
    let h = raw.h.unwrap_or(0.1);
    let m = raw.m.unwrap_or(DEFAULT_STENCIL_WIDTH);

    // Obstacle.
    let obstacle = match &raw.obstacle {
        None => ObstacleShape::Ball { radius: 1.0 },
        Some(ob) => {
            let shape = ob.shape.as_deref().unwrap_or("ball");
            match shape {
                "ball" => {
                    if ob.points.is_some() || ob.file.is_some() {
                        errors.push(validation(
                            "obstacle",
                            "ball obstacles take only `radius`",
                        ));
                    }
                    ObstacleShape::Ball { radius: ob.radius.unwrap_or(1.0) }
                }
                "points" => {
                    if ob.radius.is_some() || ob.file.is_some() {
                        errors.push(validation(
                            "obstacle",
                            "point obstacles take only `points`",
                        ));
                    }
                    let mut pts: Vec<Point> = Vec::new();
                    match &ob.points {
                        Some(rows) if !rows.is_empty() => {
                            for row in rows {
                                if row.len() != dim {
                                    errors.push(validation(
                                        "obstacle.points",
                                        format!(
                                            "point {row:?} has {} coordinates; dim is {dim}",
                                            row.len()
                                        ),
                                    ));
                                    continue;
                                }
                                let mut p = [0.0; MAX_DIM];
                                p[..dim].copy_from_slice(row);
                                pts.push(p);
                            }
                        }
                        _ => errors.push(validation(
                            "obstacle.points",
                            "point obstacles need a nonempty `points` list",
                        )),
                    }
                    ObstacleShape::PointSet(pts)
                }
                "mask" => match &ob.file {
                    Some(path) => ObstacleShape::MaskFile(path.clone()),
                    None => {
                        errors.push(validation(
                            "obstacle.file",
                            "mask obstacles need a `file` path",
                        ));
                        ObstacleShape::Ball { radius: 1.0 }
                    }
                },
                other => {
                    errors.push(validation(
                        "obstacle.shape",
                        format!("unknown shape `{other}` (ball | points | mask)"),
                    ));
                    ObstacleShape::Ball { radius: 1.0 }
                }
            }
        }
    };

    // Far field: exactly one variant when the section is present.
    let far_field = match &raw.farfield {
        None => None,
        Some(ff) => match (ff.lambda, &ff.plane) {
            (Some(_), Some(_)) | (None, None) => {
                errors.push(validation("farfield", "exactly one variant"));
                None
            }
            (Some(lambda), None) => Some(FarFieldSpec::Cone { lambda }),
            (None, Some(a)) => {
                if a.len() != dim {
                    errors.push(validation(
                        "farfield.plane",
                        format!("plane has {} components; dim is {dim}", a.len()),
                    ));
                    None
                } else {
                    let mut arr = [0.0; MAX_DIM];
                    arr[..dim].copy_from_slice(a);
                    Some(FarFieldSpec::Plane { a: arr })
                }
            }
        },
    };
    let exterior = far_field.is_some();

    // Schedule and monitor.
    let schedule = raw.schedule.clone().unwrap_or_default();
    if exterior {
        if schedule.is_empty() {
            errors.push(validation("schedule", "exterior runs need a nonempty schedule"));
        }
        if schedule.windows(2).any(|w| w[1] <= w[0]) {
            errors.push(validation("schedule", "radii must be strictly increasing"));
        }
        if schedule.iter().any(|r| !(r.is_finite() && *r > 1.0)) {
            errors.push(validation("schedule", "radii must be finite and exceed 1"));
        }
    } else if raw.schedule.is_some() {
        errors.push(validation("schedule", "schedule given but no [farfield] section"));
    }
    let monitor = match &raw.monitor {
        Some(v) if v.len() == 2 => (v[0], v[1]),
        Some(v) => {
            errors.push(validation("monitor", format!("need [lo, hi], got {} entries", v.len())));
            (1.5, 3.0)
        }
        None => match schedule.first() {
            Some(&s0) => (0.375 * s0, 0.75 * s0),
            None => (1.5, 3.0),
        },
    };
    if exterior {
        if !(monitor.0 > 1.0 && monitor.1 > monitor.0) {
            errors.push(validation(
                "monitor",
                format!("annulus ({}, {}) must satisfy 1 < lo < hi", monitor.0, monitor.1),
            ));
        }
        if let Some(&s0) = schedule.first() {
            if monitor.1 >= s0 {
                errors.push(validation(
                    "monitor",
                    format!("hi {} must sit strictly below the first schedule radius {s0}", monitor.1),
                ));
            }
        }
    }

    // Primary-domain radius: last schedule entry for exterior runs.
    let outer_radius = if exterior {
        schedule.last().copied().unwrap_or(2.0)
    } else {
        match raw.outer_radius {
            Some(r) => r,
            None => {
                errors.push(validation("outer_radius", "bounded runs need an outer radius"));
                2.0
            }
        }
    };
    if exterior && raw.outer_radius.is_some_and(|r| r != outer_radius) {
        errors.push(validation(
            "outer_radius",
            "exterior runs take the radius from the schedule; drop this key",
        ));
    }

    let outer = match raw.outer.as_deref() {
        None => {
            if exterior {
                OuterShape::Ball
            } else {
                OuterShape::Box
            }
        }
        Some("ball") => OuterShape::Ball,
        Some("box") => OuterShape::Box,
        Some(other) => {
            errors.push(validation("outer", format!("unknown shape `{other}` (ball | box)")));
            OuterShape::Ball
        }
    };
    if exterior && outer == OuterShape::Box {
        errors.push(validation("outer", "exterior runs use a ball outer boundary"));
    }

    let grid = GridSpec { dim, h, outer_radius, stencil_width: m, obstacle, outer };
    if let Err(err) = grid.validate() {
        errors.push(validation("grid", err.to_string()));
    }

    // Boundary data.
    let boundary = match &raw.boundary {
        None => {
            errors.push(validation("boundary", "need a [boundary] section with `g` or `table`"));
            BoundarySpec::Expression("0".into())
        }
        Some(b) => match (&b.g, &b.table) {
            (Some(_), Some(_)) => {
                errors.push(validation("boundary", "give `g` or `table`, not both"));
                BoundarySpec::Expression("0".into())
            }
            (None, None) => {
                errors.push(validation("boundary", "need `g` or `table`"));
                BoundarySpec::Expression("0".into())
            }
            (Some(src), None) => match Expr::parse(src) {
                Ok(_) => BoundarySpec::Expression(src.clone()),
                Err(err) => {
                    errors.push(ConfigError::Parse {
                        line: line_of_key(text, "g"),
                        message: format!("boundary expression: {err}"),
                    });
                    BoundarySpec::Expression("0".into())
                }
            },
            (None, Some(rows)) => {
                if rows.is_empty() {
                    errors.push(validation("boundary.table", "table must be nonempty"));
                }
                if rows.iter().any(|(_, v)| !v.is_finite()) {
                    errors.push(validation("boundary.table", "values must be finite"));
                }
                BoundarySpec::Table(rows.clone())
            }
        },
    };

    // Reference expression for sweeps.
    if let Some(src) = &raw.reference {
        if let Err(err) = Expr::parse(src) {
            errors.push(ConfigError::Parse {
                line: line_of_key(text, "reference"),
                message: format!("reference expression: {err}"),
            });
        }
    }
    let sweep_h = raw.sweep_h.clone().unwrap_or_default();
    if sweep_h.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        errors.push(validation("sweep_h", "spacings must be positive"));
    }

    // Tolerances.
    let rt = raw.tolerances.clone().unwrap_or_default();
    let solver_tol = rt.solver.unwrap_or(DEFAULT_SOLVER_TOL);
    let tolerances = Tolerances {
        solver: solver_tol,
        eps_class: rt.eps_class.unwrap_or(DEFAULT_EPS_CLASS),
        checker: rt.checker.unwrap_or(CHECKER_TOL_FACTOR * solver_tol),
    };
    for (field, v) in [
        ("tolerances.solver", tolerances.solver),
        ("tolerances.eps_class", tolerances.eps_class),
        ("tolerances.checker", tolerances.checker),
    ] {
        if !(v.is_finite() && v > 0.0) {
            errors.push(validation(field, format!("must be positive, got {v}")));
        }
    }

    // Profile radii: default is a geometric ladder inside the primary
    // domain, clear of both the obstacle shell and the outer ring.
    let profile_radii = match &raw.profile_radii {
        Some(rs) => {
            if rs.is_empty() {
                errors.push(validation("profile_radii", "list must be nonempty"));
            }
            if rs.windows(2).any(|w| w[1] <= w[0]) {
                errors.push(validation("profile_radii", "radii must be strictly increasing"));
            }
            rs.clone()
        }
        None => {
            let lo = (1.0 + (m as f64 + 2.0) * h).max(1.2);
            let hi = 0.85 * outer_radius;
            if hi > lo {
                let ratio = (hi / lo).powf(1.0 / (DEFAULT_PROFILE_POINTS as f64 - 1.0));
                (0..DEFAULT_PROFILE_POINTS).map(|k| lo * ratio.powi(k as i32)).collect()
            } else {
                vec![0.5 * (1.0 + outer_radius)]
            }
        }
    };

    let checks = raw.checks.unwrap_or_default();
    let fault_seed = raw.fault.as_ref().and_then(|f| f.seed);
    let output_dir =
        raw.output.as_ref().and_then(|o| o.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let determinism = raw.determinism.unwrap_or(Determinism::Ordered);
    let anchor = raw.anchor.unwrap_or(AnchorMode::CPlus);

    if errors.is_empty() {
        Ok(RunConfig {
            grid,
            boundary,
            far_field,
            schedule,
            monitor,
            anchor,
            profile_radii,
            tolerances,
            checks,
            fault_seed,
            sweep_h,
            reference: raw.reference.clone(),
            output_dir,
            determinism,
        })
    } else {
        Err(errors)
    }
}

/// The raw-document echo of a validated config, with every default written
/// out explicitly. Rendering this and re-parsing reproduces the config.
pub fn echo_config(config: &RunConfig) -> RawConfig {
    let g = &config.grid;
    let obstacle = match &g.obstacle {
        ObstacleShape::Ball { radius } => RawObstacle {
            shape: Some("ball".into()),
            radius: Some(*radius),
            ..Default::default()
        },
        ObstacleShape::PointSet(pts) => RawObstacle {
            shape: Some("points".into()),
            points: Some(pts.iter().map(|p| p[..g.dim].to_vec()).collect()),
            ..Default::default()
        },
        ObstacleShape::MaskFile(path) => RawObstacle {
            shape: Some("mask".into()),
            file: Some(path.clone()),
            ..Default::default()
        },
    };
    let boundary = match &config.boundary {
        BoundarySpec::Expression(src) => {
            RawBoundary { g: Some(src.clone()), ..Default::default() }
        }
        BoundarySpec::Table(rows) => {
            RawBoundary { table: Some(rows.clone()), ..Default::default() }
        }
    };
    let farfield = config.far_field.as_ref().map(|ff| match ff {
        FarFieldSpec::Cone { lambda } => {
            RawFarField { lambda: Some(*lambda), ..Default::default() }
        }
        FarFieldSpec::Plane { a } => {
            RawFarField { plane: Some(a[..g.dim].to_vec()), ..Default::default() }
        }
    });
    RawConfig {
        dim: Some(g.dim),
        h: Some(g.h),
        m: Some(g.stencil_width),
        outer_radius: if config.is_exterior() { None } else { Some(g.outer_radius) },
        outer: Some(
            match g.outer {
                OuterShape::Ball => "ball",
                OuterShape::Box => "box",
            }
            .into(),
        ),
        determinism: Some(config.determinism),
        anchor: Some(config.anchor),
        schedule: if config.schedule.is_empty() { None } else { Some(config.schedule.clone()) },
        monitor: Some(vec![config.monitor.0, config.monitor.1]),
        profile_radii: Some(config.profile_radii.clone()),
        sweep_h: if config.sweep_h.is_empty() { None } else { Some(config.sweep_h.clone()) },
        reference: config.reference.clone(),
        obstacle: Some(obstacle),
        boundary: Some(boundary),
        farfield,
        tolerances: Some(RawTolerances {
            solver: Some(config.tolerances.solver),
            eps_class: Some(config.tolerances.eps_class),
            checker: Some(config.tolerances.checker),
        }),
        checks: Some(config.checks),
        fault: config.fault_seed.map(|seed| RawFault { seed: Some(seed) }),
        output: Some(RawOutput { dir: Some(config.output_dir.clone()) }),
    }
}

/// Renders a config as a TOML document that re-parses to an equal value.
pub fn render_config(config: &RunConfig) -> String {
    toml::to_string_pretty(&echo_config(config)).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    // Top-level keys must precede tables in TOML, so the canonical minimal
    // document lists `schedule` before the [obstacle] section.
    fn minimal_text() -> String {
        let mut doc = String::from("dim = 2\nh = 0.1\nschedule = [4, 8]\n");
        doc.push_str("[obstacle]\nshape = \"ball\"\nradius = 1.0\n");
        doc.push_str("[boundary]\ng = \"0\"\n");
        doc.push_str("[farfield]\nlambda = 1.0\n");
        doc
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(&minimal_text()).unwrap();
        assert_eq!(cfg.grid.dim, 2);
        assert_eq!(cfg.grid.h, 0.1);
        assert_eq!(cfg.grid.stencil_width, DEFAULT_STENCIL_WIDTH);
        assert_eq!(cfg.grid.outer_radius, 8.0);
        assert_eq!(cfg.far_field, Some(FarFieldSpec::Cone { lambda: 1.0 }));
        assert_eq!(cfg.schedule, vec![4.0, 8.0]);
        assert_eq!(cfg.monitor, (1.5, 3.0));
        assert_eq!(cfg.tolerances.solver, DEFAULT_SOLVER_TOL);
        assert_eq!(cfg.tolerances.checker, 20.0 * DEFAULT_SOLVER_TOL);
        assert_eq!(cfg.tolerances.eps_class, DEFAULT_EPS_CLASS);
        assert_eq!(cfg.determinism, Determinism::Ordered);
        assert!(cfg.checks.ccp && cfg.checks.envelope && !cfg.checks.comparison);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        assert_eq!(cfg.profile_radii.len(), DEFAULT_PROFILE_POINTS);
        assert!(cfg.profile_radii.windows(2).all(|w| w[0] < w[1]));
        assert!(*cfg.profile_radii.last().unwrap() <= 0.85 * 8.0 + 1e-12);
    }

    #[test]
    fn both_farfield_variants_is_a_located_validation_error() {
        let mut doc = minimal_text();
        doc.push_str("plane = [1.0, 0.0]\n");
        let errs = parse_config(&doc).unwrap_err();
        assert!(errs.iter().any(|e| matches!(
            e,
            ConfigError::Validation { field, message }
                if field == "farfield" && message == "exactly one variant"
        )));
    }

    #[test]
    fn expression_is_accepted_and_evaluated_at_nodes() {
        let mut doc = String::from("dim = 2\nh = 0.5\nouter_radius = 2.0\n");
        doc.push_str("[obstacle]\nshape = \"points\"\npoints = [[0.0, 0.0]]\n");
        doc.push_str("[boundary]\ng = \"x1 + 0.5*abs(x2)\"\n");
        let cfg = parse_config(&doc).unwrap();
        let expr = cfg.boundary_expr().unwrap();
        for (p, want) in [
            ([2.0, -3.0, 0.0], 2.0 + 1.5),
            ([-1.0, 4.0, 0.0], -1.0 + 2.0),
            ([0.25, 0.5, 0.0], 0.25 + 0.25),
        ] {
            assert_eq!(expr.eval(p, 2).unwrap(), want);
        }
    }

    #[test]
    fn bad_expression_reports_the_config_line() {
        let mut doc = minimal_text();
        doc = doc.replace("g = \"0\"", "g = \"x1 + \"");
        let errs = parse_config(&doc).unwrap_err();
        match &errs[0] {
            ConfigError::Parse { line, message } => {
                assert_eq!(*line, 8, "g sits on line 8 of the canonical doc");
                assert!(message.contains("boundary expression"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn toml_syntax_errors_carry_line_numbers() {
        let doc = "dim = 2\nh = = 0.1\n";
        let errs = parse_config(doc).unwrap_err();
        match &errs[0] {
            ConfigError::Parse { line, .. } => assert_eq!(*line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn multiple_validation_errors_accumulate() {
        let mut doc = String::from("dim = 2\nh = 0.1\nschedule = [4, 3]\n");
        doc.push_str("[obstacle]\nshape = \"ball\"\n");
        doc.push_str("[boundary]\n");
        doc.push_str("[farfield]\nlambda = 1.0\n");
        doc.push_str("[tolerances]\nsolver = -1.0\n");
        let errs = parse_config(&doc).unwrap_err();
        let fields: Vec<&str> = errs
            .iter()
            .filter_map(|e| match e {
                ConfigError::Validation { field, .. } => Some(field.as_str()),
                _ => None,
            })
            .collect();
        assert!(fields.contains(&"schedule"));
        assert!(fields.contains(&"boundary"));
        assert!(fields.contains(&"tolerances.solver"));
        // checker tol inherits the bad solver tol through the 20× default
        assert!(fields.contains(&"tolerances.checker"));
    }

    #[test]
    fn render_round_trips_to_an_equal_config() {
        for doc in [
            minimal_text(),
            {
                let mut d = String::from("dim = 2\nh = 0.05\nouter_radius = 2.0\nouter = \"box\"\n");
                d.push_str("determinism = \"jacobi\"\nsweep_h = [0.1, 0.05]\n");
                d.push_str("reference = \"x1\"\n");
                d.push_str("[obstacle]\nshape = \"points\"\npoints = [[0.0, 0.0]]\n");
                d.push_str("[boundary]\ng = \"x1\"\n");
                d.push_str("[tolerances]\nsolver = 1e-9\n");
                d.push_str("[checks]\nccp = false\nreflection = false\n");
                d.push_str("[fault]\nseed = 11\n");
                d.push_str("[output]\ndir = \"results\"\n");
                d
            },
            {
                let mut d = String::from("dim = 2\nh = 0.2\nschedule = [3, 6]\n");
                d.push_str("monitor = [1.4, 2.5]\nprofile_radii = [1.5, 2.0, 2.5]\n");
                d.push_str("[obstacle]\nshape = \"ball\"\nradius = 0.8\n");
                d.push_str("[boundary]\ntable = [[0, 1.0], [1, 2.5]]\n");
                d.push_str("[farfield]\nplane = [0.0, 1.0]\n");
                d
            },
        ] {
            let cfg = parse_config(&doc).unwrap_or_else(|e| panic!("{e:?}\n{doc}"));
            let rendered = render_config(&cfg);
            let reparsed = parse_config(&rendered).unwrap_or_else(|e| panic!("{e:?}\n{rendered}"));
            assert_eq!(cfg, reparsed, "round trip changed the config:\n{rendered}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_location() {
        let mut doc = minimal_text();
        doc.push_str("[outputs]\ndir = \"x\"\n");
        let errs = parse_config(&doc).unwrap_err();
        assert!(matches!(errs[0], ConfigError::Parse { line, .. } if line >= 9));
    }

    #[test]
    fn monitor_must_fit_under_the_first_schedule_radius() {
        let mut doc = minimal_text();
        doc = doc.replace("schedule = [4, 8]", "schedule = [2, 8]\nmonitor = [1.5, 3.0]");
        let errs = parse_config(&doc).unwrap_err();
        assert!(errs.iter().any(|e| matches!(
            e,
            ConfigError::Validation { field, .. } if field == "monitor"
        )));
    }
}
