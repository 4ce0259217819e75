//! Asymptotic functionals measured on a computed field: slope profiles,
//! blow-down rescalings, and the four-regime growth classification.
//!
//! The quantities here mirror the structure theory for infinity-harmonic
//! functions on exterior domains: the normalized sphere excesses `S_r⁺`/`S_r⁻`
//! grow monotonically toward tail limits, annular Lipschitz constants shrink,
//! and rescalings `v_k(x) = u(r_k x)/r_k` settle toward a cone or a plane.
//! Everything is a pure function of an immutable [`SolutionField`];
//! subsampling is stride-based so repeated runs are bit-identical.

use crate::grid::{norm, Point, GEOM_EPS};
use crate::solver::SolutionField;
use rayon::prelude::*;
use thiserror::Error;

/// Cap on the pairwise-Lipschitz subsample; beyond this the node list is
/// strided down so the O(n²) scan stays bounded.
pub const MAX_LIP_SUBSAMPLE: usize = 4096;

/// Absolute slack when comparing successive plane-fit errors for the
/// decreasing-trend requirement. Exact fits produce errors at rounding level
/// (~1e-16) whose ordering is noise; the slack keeps them from flipping the
/// trend verdict.
pub const FIT_TREND_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    /// A requested radius has no discrete sphere inside the field's domain.
    #[error("radius {radius} outside usable range ({min:.6}..{max:.6}) of the domain")]
    RadiusOutOfDomain { radius: f64, min: f64, max: f64 },
    /// Regime boundaries could not be separated at the requested resolution.
    #[error("classification inconclusive: {reason}")]
    Inconclusive { reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One row of a [`SlopeProfile`]: the functionals sampled at radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub r: f64,
    /// Normalized excess of the sphere max over the obstacle max.
    pub s_plus: f64,
    /// Normalized excess of the obstacle min over the sphere min.
    pub s_minus: f64,
    /// Lipschitz constant of `u` restricted to the truncated exterior of `B_r`.
    pub lip: f64,
}

/// Slope functionals of a field sampled at a list of radii, with tail
/// estimates taken at the largest radius (the tightest certified value for a
/// monotone quantity; extrapolation would invent data).
#[derive(Debug, Clone)]
pub struct SlopeProfile {
    /// Max of `u` over the obstacle boundary.
    pub m_plus: f64,
    /// Min of `u` over the obstacle boundary.
    pub m_minus: f64,
    /// Samples in increasing radius order.
    pub samples: Vec<ProfileSample>,
    pub s_inf_plus: f64,
    pub s_inf_minus: f64,
    /// `max(s_inf_plus, s_inf_minus)`.
    pub s_inf: f64,
}

impl SlopeProfile {
    /// Grid spacing `h` divided by the smallest sampled radius — the scale of
    /// legitimate discretization wobble in the monotonicity invariants.
    pub fn mono_slack(&self, h: f64) -> f64 {
        5.0 * h / self.samples.first().map_or(1.0, |s| s.r)
    }
}

/// Rescaling of the field at dilation radius `r_k`, with least-squares plane
/// and cone models evaluated in sup norm on a reference annulus.
#[derive(Debug, Clone)]
pub struct BlowDownFit {
    pub r_k: f64,
    /// `(x, v_k(x))` pairs; `x` lies on the reference annulus.
    pub samples: Vec<(Point, f64)>,
    /// Gradient of the best plane `a·x + b` (intercept absorbs the O(1/r_k)
    /// additive constant of the unrescaled field).
    pub best_plane: Point,
    /// Sup-norm error of the fitted plane over the samples.
    pub plane_error: f64,
    /// Slope `s` of the best cone `s·|x| + b`; sign carries the up/down case.
    pub cone_slope: f64,
    /// Sup-norm error of the fitted cone over the samples.
    pub cone_error: f64,
}

/// Growth regime of a field at infinity.
#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Bounded,
    /// `u ≈ slope·|x| + O(1)` with `slope > 0`.
    ConeUp { slope: f64 },
    /// `u ≈ −slope·|x| + O(1)`; `slope` is stored positive.
    ConeDown { slope: f64 },
    /// `u ≈ a·x + o(|x|)`.
    Plane { a: Point },
}

/// Margins behind a classification verdict, kept for reporting.
#[derive(Debug, Clone)]
pub struct ClassDiagnostics {
    pub s_inf_plus: f64,
    pub s_inf_minus: f64,
    pub s_inf: f64,
    /// `s_inf_plus − s_inf_minus`; sign selects the cone cases.
    pub gap: f64,
    pub eps_class: f64,
    /// Plane-fit sup errors in increasing-radius order.
    pub plane_errors: Vec<f64>,
    pub plane_errors_decreasing: bool,
    pub cone_errors: Vec<f64>,
}

/// Classification result: exactly one regime plus the margins that produced it.
#[derive(Debug, Clone)]
pub struct AsymptoticClass {
    pub regime: Regime,
    pub diagnostics: ClassDiagnostics,
}

/// Outcome of the linearity cross-check on a blow-down fit.
#[derive(Debug, Clone)]
pub struct LinearityDiagnostic {
    /// True when neither the plane nor the cone model explains the rescaled
    /// field — a field inconsistent with the structure theory (solver
    /// artifact or noise).
    pub flagged: bool,
    /// Whether the fitted |a| saturates the Lipschitz bound (the regime where
    /// a two-sided linear-growth field must in fact be a plane).
    pub slope_saturates_lip: bool,
    pub detail: String,
}

fn validate_radius(u: &SolutionField, r: f64) -> Result<(), AsymptoticsError> {
    let h = u.domain.spec.h;
    let max = u.domain.spec.outer_radius;
    if !(r.is_finite() && r - h > 0.0 && r + h <= max + GEOM_EPS) {
        return Err(AsymptoticsError::RadiusOutOfDomain { radius: r, min: h, max });
    }
    Ok(())
}

/// Computes the slope functionals of `u` at each radius in `radii`.
///
/// `S_r⁺ = (max(max_{S_r} u, m⁺) − m⁺)/r` with the discrete sphere
/// `S_r = {x : |x| ∈ [r−h, r+h]}`, `m⁺` the obstacle-boundary max; `S_r⁻`
/// symmetric from below. `lip` is the pairwise Lipschitz constant over the
/// truncated exterior `|x| ≥ r`, computed exactly on a ≤[`MAX_LIP_SUBSAMPLE`]
/// stride subsample plus all stencil-adjacent pairs (local pairs dominate for
/// midrange fixed points). Radii are sorted ascending; tail estimates are the
/// values at the largest radius.
pub fn slope_profile(u: &SolutionField, radii: &[f64]) -> Result<SlopeProfile, AsymptoticsError> {
    if radii.is_empty() {
        return Err(AsymptoticsError::InvalidInput("radii list is empty".into()));
    }
    if u.domain.obstacle_boundary.is_empty() {
        return Err(AsymptoticsError::InvalidInput("obstacle boundary is empty".into()));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| a.partial_cmp(b).expect("radii must not be NaN"));
    radii.dedup();
    for &r in &radii {
        validate_radius(u, r)?;
    }

    let d = &u.domain;
    let h = d.spec.h;
    let m_plus = d
        .obstacle_boundary
        .iter()
        .map(|&i| u.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let m_minus = d
        .obstacle_boundary
        .iter()
        .map(|&i| u.values[i])
        .fold(f64::INFINITY, f64::min);

    let mut samples = Vec::with_capacity(radii.len());
    for &r in &radii {
        let (mut sphere_max, mut sphere_min) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut exterior: Vec<usize> = Vec::new();
        for i in d.live_nodes() {
            let rad = d.radius_of(i);
            if rad >= r - h && rad <= r + h {
                sphere_max = sphere_max.max(u.values[i]);
                sphere_min = sphere_min.min(u.values[i]);
            }
            if rad >= r {
                exterior.push(i);
            }
        }
        if !sphere_max.is_finite() {
            return Err(AsymptoticsError::RadiusOutOfDomain {
                radius: r,
                min: h,
                max: d.spec.outer_radius,
            });
        }
        let s_plus = (sphere_max.max(m_plus) - m_plus) / r;
        let s_minus = (m_minus - sphere_min.min(m_minus)) / r;
        let lip = exterior_lipschitz(u, &exterior);
        samples.push(ProfileSample { r, s_plus, s_minus, lip });
    }

    let last = samples.last().expect("radii nonempty");
    let (s_inf_plus, s_inf_minus) = (last.s_plus, last.s_minus);
    Ok(SlopeProfile {
        m_plus,
        m_minus,
        samples,
        s_inf_plus,
        s_inf_minus,
        s_inf: s_inf_plus.max(s_inf_minus),
    })
}

/// Largest difference quotient `|u(x)−u(y)|/|x−y|` over the given node set:
/// exact pairwise on a deterministic stride subsample, plus every
/// stencil-adjacent pair inside the set.
fn exterior_lipschitz(u: &SolutionField, nodes: &[usize]) -> f64 {
    if nodes.len() < 2 {
        return 0.0;
    }
    let d = &u.domain;
    let stride = nodes.len().div_ceil(MAX_LIP_SUBSAMPLE);
    let sub: Vec<usize> = nodes.iter().copied().step_by(stride).collect();
    let points: Vec<Point> = sub.iter().map(|&i| d.point(i)).collect();
    let dim = d.spec.dim;

    let pairwise = sub
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut best = 0.0f64;
            let pi = points[k];
            for (l, &j) in sub.iter().enumerate().skip(k + 1) {
                let pj = points[l];
                let mut dist2 = 0.0;
                for c in 0..dim {
                    dist2 += (pi[c] - pj[c]) * (pi[c] - pj[c]);
                }
                let q = (u.values[i] - u.values[j]).abs() / dist2.sqrt();
                best = best.max(q);
            }
            best
        })
        .reduce(|| 0.0, f64::max);

    // Stencil-adjacent pairs over the full set: the discrete Lipschitz
    // constant of a midrange fixed point is attained locally.
    let in_set: std::collections::HashSet<usize> = nodes.iter().copied().collect();
    let offsets = &d.stencil.offsets;
    let h = d.spec.h;
    let local = nodes
        .par_iter()
        .map(|&i| {
            let lat = d.lattice(i);
            let mut best = 0.0f64;
            for off in offsets {
                let mut tgt = lat;
                for c in 0..3 {
                    tgt[c] += off[c];
                }
                let Some(j) = d.linear_checked(tgt) else { continue };
                if !in_set.contains(&j) {
                    continue;
                }
                let mut dist2 = 0.0;
                for c in 0..dim {
                    dist2 += (off[c] as f64 * h) * (off[c] as f64 * h);
                }
                best = best.max((u.values[i] - u.values[j]).abs() / dist2.sqrt());
            }
            best
        })
        .reduce(|| 0.0, f64::max);

    pairwise.max(local)
}

/// Rescales the field at dilation radius `r_k` and fits plane and cone models.
///
/// Sample points are the domain nodes `y` with `|y|` inside the dilated
/// annulus, mapped to `x = y/r_k` (so the nearest-node lookup of `r_k·x` is
/// exact). Both fits are least squares with a free intercept, evaluated in
/// sup norm over the samples.
pub fn blow_down(
    u: &SolutionField,
    r_k: f64,
    annulus: (f64, f64),
) -> Result<BlowDownFit, AsymptoticsError> {
    let (rho_in, rho_out) = annulus;
    if !(rho_in >= 0.5 && rho_out > rho_in) {
        return Err(AsymptoticsError::InvalidInput(format!(
            "reference annulus ({rho_in}, {rho_out}) must satisfy 0.5 <= rho_in < rho_out"
        )));
    }
    if !(r_k > 0.0) || r_k * rho_out > u.domain.spec.outer_radius + GEOM_EPS {
        return Err(AsymptoticsError::RadiusOutOfDomain {
            radius: r_k,
            min: 0.0,
            max: u.domain.spec.outer_radius / rho_out,
        });
    }

    let d = &u.domain;
    let dim = d.spec.dim;
    let (lo, hi) = (r_k * rho_in, r_k * rho_out);
    let mut samples: Vec<(Point, f64)> = Vec::new();
    for i in d.live_nodes() {
        let rad = d.radius_of(i);
        if rad >= lo && rad <= hi {
            let p = d.point(i);
            let mut x = [0.0f64; 3];
            for c in 0..dim {
                x[c] = p[c] / r_k;
            }
            samples.push((x, u.values[i] / r_k));
        }
    }
    if samples.len() < dim + 2 {
        return Err(AsymptoticsError::InvalidInput(format!(
            "only {} sample nodes on the annulus ({lo:.3}, {hi:.3})",
            samples.len()
        )));
    }

    // Plane: v ≈ a·x + b, least squares over (a, b).
    let n = dim + 1;
    let mut ata = vec![0.0f64; n * n];
    let mut atb = vec![0.0f64; n];
    for (x, v) in &samples {
        let mut row = [0.0f64; 4];
        row[..dim].copy_from_slice(&x[..dim]);
        row[dim] = 1.0;
        for i in 0..n {
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
            atb[i] += row[i] * v;
        }
    }
    let sol = solve_dense(&mut ata, &mut atb, n).ok_or_else(|| {
        AsymptoticsError::InvalidInput("degenerate plane-fit system".into())
    })?;
    let mut best_plane = [0.0f64; 3];
    best_plane[..dim].copy_from_slice(&sol[..dim]);
    let intercept = sol[dim];
    let plane_error = samples
        .iter()
        .map(|(x, v)| {
            let mut pred = intercept;
            for c in 0..dim {
                pred += best_plane[c] * x[c];
            }
            (v - pred).abs()
        })
        .fold(0.0f64, f64::max);

    // Cone: v ≈ s·|x| + b, least squares in the basis {|x|, 1}.
    let (mut srr, mut sr, mut s1, mut srv, mut sv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (x, v) in &samples {
        let r = norm(x, dim);
        srr += r * r;
        sr += r;
        s1 += 1.0;
        srv += r * v;
        sv += v;
    }
    let det = srr * s1 - sr * sr;
    if det.abs() < 1e-30 {
        return Err(AsymptoticsError::InvalidInput("degenerate cone-fit system".into()));
    }
    let cone_slope = (srv * s1 - sv * sr) / det;
    let cone_intercept = (srr * sv - sr * srv) / det;
    let cone_error = samples
        .iter()
        .map(|(x, v)| (v - (cone_slope * norm(x, dim) + cone_intercept)).abs())
        .fold(0.0f64, f64::max);

    Ok(BlowDownFit { r_k, samples, best_plane, plane_error, cone_slope, cone_error })
}

/// Gaussian elimination with partial pivoting on an `n×n` system stored
/// row-major. Returns `None` for a singular matrix.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).expect("finite")
        })?;
        if a[pivot * n + col].abs() < 1e-30 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Assigns the growth regime from a slope profile and blow-down fits.
///
/// Decision order: `Bounded` if `S_∞ < ε`; `ConeUp`/`ConeDown` if the
/// up/down tail slopes separate by more than `ε` (cone slope taken from the
/// largest-radius fit, where the O(1/r) offset bias is smallest); otherwise
/// `Plane`, which additionally requires the plane-fit errors to decrease
/// across the fit radii and the recovered |a| to agree with `S_∞` within `ε`.
pub fn classify(
    profile: &SlopeProfile,
    fits: &[BlowDownFit],
    eps_class: f64,
) -> Result<AsymptoticClass, AsymptoticsError> {
    if profile.samples.len() < 3 {
        return Err(AsymptoticsError::InvalidInput(format!(
            "profile has {} samples; need at least 3",
            profile.samples.len()
        )));
    }
    if fits.len() < 2 || fits.windows(2).any(|w| w[1].r_k <= w[0].r_k) {
        return Err(AsymptoticsError::InvalidInput(
            "need at least 2 blow-down fits at increasing radii".into(),
        ));
    }
    if !(eps_class > 0.0) {
        return Err(AsymptoticsError::InvalidInput("eps_class must be positive".into()));
    }

    let plane_errors: Vec<f64> = fits.iter().map(|f| f.plane_error).collect();
    let cone_errors: Vec<f64> = fits.iter().map(|f| f.cone_error).collect();
    let decreasing = plane_errors
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + FIT_TREND_SLACK);
    let gap = profile.s_inf_plus - profile.s_inf_minus;
    let last = fits.last().expect("fits nonempty");
    let diagnostics = ClassDiagnostics {
        s_inf_plus: profile.s_inf_plus,
        s_inf_minus: profile.s_inf_minus,
        s_inf: profile.s_inf,
        gap,
        eps_class,
        plane_errors,
        plane_errors_decreasing: decreasing,
        cone_errors,
    };

    let regime = if profile.s_inf < eps_class {
        Regime::Bounded
    } else if gap > eps_class {
        Regime::ConeUp { slope: last.cone_slope }
    } else if -gap > eps_class {
        Regime::ConeDown { slope: -last.cone_slope }
    } else {
        if !decreasing {
            return Err(AsymptoticsError::Inconclusive {
                reason: format!(
                    "tail slopes agree (gap {gap:.3e} within eps {eps_class:.3e}) but \
                     plane-fit errors do not decrease: {:?}",
                    diagnostics.plane_errors
                ),
            });
        }
        let a = last.best_plane;
        // Trailing components of lower-dimensional gradients are exactly
        // zero, so the 3-component norm is always correct.
        let a_len = norm(&a, 3);
        if (a_len - profile.s_inf).abs() > eps_class {
            return Err(AsymptoticsError::Inconclusive {
                reason: format!(
                    "plane gradient magnitude {a_len:.4} disagrees with tail slope \
                     {:.4} beyond eps {eps_class:.3e}",
                    profile.s_inf
                ),
            });
        }
        Regime::Plane { a }
    };
    Ok(AsymptoticClass { regime, diagnostics })
}

/// Cross-checks a blow-down fit against the Lipschitz bound: a rescaled field
/// explained by neither model is inconsistent with the structure theory and
/// gets flagged (noise or solver artifact). Also records whether the fitted
/// gradient saturates the Lipschitz constant — the regime where two-sided
/// linear growth forces an exact plane.
pub fn check_blow_down_linearity(fit: &BlowDownFit, lip: f64, tol: f64) -> LinearityDiagnostic {
    let flagged = fit.plane_error > tol && fit.cone_error > tol;
    let a_len = norm(&fit.best_plane, 3);
    let slope_saturates_lip = lip > 0.0 && (a_len - lip).abs() <= 0.25 * lip.max(1.0);
    let detail = format!(
        "plane_error={:.3e} cone_error={:.3e} tol={tol:.3e} |a|={a_len:.4} lip={lip:.4}",
        fit.plane_error, fit.cone_error
    );
    LinearityDiagnostic { flagged, slope_saturates_lip, detail }
}
