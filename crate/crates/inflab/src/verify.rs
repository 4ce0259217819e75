//! Property checkers that turn the structure theory into assertions on
//! discrete fields: comparison with cones, the exterior comparison principle,
//! extremal-location checks, reflection symmetry, growth envelopes, and an
//! independent small-grid reference solver.
//!
//! Violations are data, not errors: checkers return records describing where
//! and by how much a property failed, and callers decide severity.

use crate::grid::{norm, Domain, Lattice, NodeClass, Point};
use crate::solver::{BoundaryCondition, FarFieldSpec, SolutionField};
use crate::asymptotics::SlopeProfile;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

/// Node budget for [`oracle_solve`]; the reference solver is deliberately
/// naive and only meant for cross-validation grids.
pub const ORACLE_MAX_NODES: usize = 2500;
/// Fixed-point tolerance of the reference solver.
pub const ORACLE_TOL: f64 = 1e-12;
/// Iteration cap of the reference solver.
pub const ORACLE_MAX_ITER: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("fields live on different domains: {0}")]
    ProfileMismatch(String),
    #[error("domain is not symmetric under reflection of axis {axis}: node {node:?}")]
    AsymmetricDomain { axis: usize, node: Lattice },
    #[error("reference solve did not converge: last update {last_update:.3e} after {iterations} iterations")]
    OracleNotConverged { iterations: u64, last_update: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Euclidean cone `c(x) = slope·|x − vertex| + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeFunction {
    pub slope: f64,
    pub vertex: Point,
    pub offset: f64,
}

impl ConeFunction {
    pub fn eval(&self, p: Point, dim: usize) -> f64 {
        let mut d = [0.0f64; 3];
        for c in 0..dim {
            d[c] = p[c] - self.vertex[c];
        }
        self.slope * norm(&d, dim) + self.offset
    }
}

/// What kind of property a violation record breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Field exceeds the extremal cone fitted from above.
    CcpAbove,
    /// Field dips below the extremal cone fitted from below.
    CcpBelow,
    Comparison,
    Envelope,
    Extremal,
    Reflection,
}

impl ViolationKind {
    /// Stable lowercase name used in reports and log lines.
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::CcpAbove => "ccp_above",
            ViolationKind::CcpBelow => "ccp_below",
            ViolationKind::Comparison => "comparison",
            ViolationKind::Envelope => "envelope",
            ViolationKind::Extremal => "extremal",
            ViolationKind::Reflection => "reflection",
        }
    }
}

/// One property failure: where, by how much, and in which context.
#[derive(Debug, Clone)]
pub struct ViolationRecord {
    pub kind: ViolationKind,
    /// Lattice coordinates of the offending node.
    pub location: Lattice,
    /// Size of the breach beyond the construction (not beyond the tolerance):
    /// e.g. `u(x) − c(x)` for a cone check.
    pub magnitude: f64,
    /// Human-readable description of the cone / subdomain / field pair.
    pub context: String,
}

/// Inclusive lattice box used as a comparison subdomain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeBox {
    pub lo: Lattice,
    pub hi: Lattice,
}

impl LatticeBox {
    fn nodes(&self, dim: usize) -> Vec<Lattice> {
        let mut out = Vec::new();
        let mut z = self.lo;
        loop {
            out.push(z);
            let mut c = 0;
            loop {
                z[c] += 1;
                if z[c] <= self.hi[c] {
                    break;
                }
                z[c] = self.lo[c];
                c += 1;
                if c == dim {
                    return out;
                }
            }
        }
    }

    fn is_boundary(&self, z: Lattice, dim: usize) -> bool {
        (0..dim).any(|c| z[c] == self.lo[c] || z[c] == self.hi[c])
    }
}

/// Default dyadic subdomain family: boxes of side 4h, 8h, 16h anchored at
/// strides of half their side, keeping only boxes made entirely of interior
/// nodes (so every checked value is a solved one).
pub fn dyadic_boxes(domain: &Domain) -> Vec<LatticeBox> {
    let dim = domain.spec.dim;
    let mut out = Vec::new();
    for size in [4i32, 8, 16] {
        let stride = (size / 2).max(1);
        let half = domain.half;
        let lo_bound = -half;
        let hi_bound = half - size;
        if hi_bound < lo_bound {
            continue;
        }
        let anchors_1d: Vec<i32> = (lo_bound..=hi_bound).step_by(stride as usize).collect();
        let mut anchor = [0usize; 3];
        let counts = [anchors_1d.len(), anchors_1d.len(), if dim == 3 { anchors_1d.len() } else { 1 }];
        'anchors: loop {
            let mut lo = [0i32; 3];
            for c in 0..dim {
                lo[c] = anchors_1d[anchor[c]];
            }
            let mut hi = lo;
            for h in hi.iter_mut().take(dim) {
                *h += size;
            }
            let bx = LatticeBox { lo, hi };
            let all_interior = bx.nodes(dim).into_iter().all(|z| {
                domain
                    .linear_checked(z)
                    .is_some_and(|i| domain.class_of(i) == NodeClass::Interior)
            });
            if all_interior {
                out.push(bx);
            }
            let mut c = 0;
            loop {
                anchor[c] += 1;
                if anchor[c] < counts[c] {
                    break;
                }
                anchor[c] = 0;
                c += 1;
                if c == 3 {
                    break 'anchors;
                }
            }
        }
    }
    out
}

/// Interior nodes lying in at least one box — the population the family can
/// actually vouch for. Fault injection draws from here: a bump outside every
/// box is invisible to the cone checks by construction.
pub fn box_covered_interior(domain: &Domain, boxes: &[LatticeBox]) -> Vec<usize> {
    let dim = domain.spec.dim;
    let mut mask = vec![false; domain.node_count()];
    for bx in boxes {
        for z in bx.nodes(dim) {
            mask[domain.linear(z)] = true;
        }
    }
    domain.interior.iter().copied().filter(|&i| mask[i]).collect()
}

/// Comparison-with-cones check. For every box `V` and every node `x₀` of the
/// box (boundary included), builds the extremal cone through `u(x₀)` whose
/// slope is the largest boundary difference quotient over `∂V \ {x₀}` — by
/// construction the tightest cone lying above `u` on `∂V` — and reports
/// interior nodes where `u` still exceeds it by more than `tol`; symmetrically
/// from below. Records are deduplicated per (node, kind) keeping the worst
/// breach, and sorted by location then magnitude for deterministic output.
pub fn check_ccp(u: &SolutionField, boxes: &[LatticeBox], tol: f64) -> Vec<ViolationRecord> {
    let d = &u.domain;
    let dim = d.spec.dim;
    let mut records: Vec<ViolationRecord> = boxes
        .par_iter()
        .flat_map_iter(|bx| {
            let nodes = bx.nodes(dim);
            let mut nodes_info = Vec::with_capacity(nodes.len());
            let (mut boundary, mut inner) = (Vec::new(), Vec::new());
            for &z in &nodes {
                let idx = d.linear(z);
                let entry = (z, idx, d.point(idx));
                nodes_info.push(entry);
                if bx.is_boundary(z, dim) {
                    boundary.push(entry);
                } else {
                    inner.push(entry);
                }
            }
            let mut found = Vec::new();
            // Cone vertices range over every node of the box, boundary
            // included; the slope comes from boundary quotients excluding
            // the vertex itself.
            for &(z0, i0, p0) in &nodes_info {
                let u0 = u.values[i0];
                let (mut hi_slope, mut lo_slope) = (f64::NEG_INFINITY, f64::INFINITY);
                for &(zb, ib, pb) in &boundary {
                    if zb == z0 {
                        continue;
                    }
                    let mut dist2 = 0.0;
                    for c in 0..dim {
                        dist2 += (pb[c] - p0[c]) * (pb[c] - p0[c]);
                    }
                    let q = (u.values[ib] - u0) / dist2.sqrt();
                    hi_slope = hi_slope.max(q);
                    lo_slope = lo_slope.min(q);
                }
                for &(z, i, p) in &inner {
                    if i == i0 {
                        continue;
                    }
                    let mut dist2 = 0.0;
                    for c in 0..dim {
                        dist2 += (p[c] - p0[c]) * (p[c] - p0[c]);
                    }
                    let dist = dist2.sqrt();
                    let above = u.values[i] - (u0 + hi_slope * dist);
                    if above > tol {
                        found.push(ViolationRecord {
                            kind: ViolationKind::CcpAbove,
                            location: z,
                            magnitude: above,
                            context: format!(
                                "box {:?}..{:?}, vertex {:?}, cone slope {hi_slope:.6}",
                                bx.lo, bx.hi, z0
                            ),
                        });
                    }
                    let below = (u0 + lo_slope * dist) - u.values[i];
                    if below > tol {
                        found.push(ViolationRecord {
                            kind: ViolationKind::CcpBelow,
                            location: z,
                            magnitude: below,
                            context: format!(
                                "box {:?}..{:?}, vertex {:?}, cone slope {lo_slope:.6}",
                                bx.lo, bx.hi, z0
                            ),
                        });
                    }
                }
            }
            found
        })
        .collect();

    // Keep the worst breach per (node, kind), then order deterministically.
    records.sort_by(|a, b| {
        (a.location, a.kind as u8)
            .cmp(&(b.location, b.kind as u8))
            .then(b.magnitude.partial_cmp(&a.magnitude).expect("finite"))
    });
    records.dedup_by(|next, kept| {
        kept.location == next.location && kept.kind == next.kind
    });
    records.sort_by(|a, b| {
        a.location
            .cmp(&b.location)
            .then(a.magnitude.partial_cmp(&b.magnitude).expect("finite"))
    });
    records
}

fn same_domain(a: &SolutionField, b: &SolutionField) -> Result<(), VerifyError> {
    if Arc::ptr_eq(&a.domain, &b.domain) || a.domain.spec == b.domain.spec {
        Ok(())
    } else {
        Err(VerifyError::ProfileMismatch(format!(
            "{:?} vs {:?}",
            a.domain.spec, b.domain.spec
        )))
    }
}

/// Exterior comparison principle: `max (u−v)` over interior nodes well inside
/// the truncation (`|x| ≤ 0.8·R`) must not exceed the obstacle-boundary max
/// of `u−v` by more than `tol`. The artificial outer ring is excluded — the
/// principle concerns the genuine exterior boundary.
pub fn check_comparison(
    u: &SolutionField,
    v: &SolutionField,
    tol: f64,
) -> Result<Option<ViolationRecord>, VerifyError> {
    same_domain(u, v)?;
    let d = &u.domain;
    let cut = 0.8 * d.spec.outer_radius;
    let boundary_max = d
        .obstacle_boundary
        .iter()
        .map(|&i| u.values[i] - v.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut worst: Option<(usize, f64)> = None;
    for &i in &d.interior {
        if d.radius_of(i) > cut {
            continue;
        }
        let diff = u.values[i] - v.values[i];
        if diff > boundary_max + tol && worst.map_or(true, |(_, w)| diff - boundary_max > w) {
            worst = Some((i, diff - boundary_max));
        }
    }
    Ok(worst.map(|(i, magnitude)| ViolationRecord {
        kind: ViolationKind::Comparison,
        location: d.lattice(i),
        magnitude,
        context: format!("interior excess over obstacle-boundary max {boundary_max:.6}"),
    }))
}

/// Checks that `φ = u − (far-field base)` attains its max and min over
/// `|x| ≤ 0.8·R` at obstacle-boundary nodes, within `tol`. Returns the worse
/// side's record when either side drifts to an interior node.
pub fn check_extremal_location(
    u: &SolutionField,
    far: &FarFieldSpec,
    tol: f64,
) -> Option<ViolationRecord> {
    let d = &u.domain;
    let dim = d.spec.dim;
    let cut = 0.8 * d.spec.outer_radius;
    let phi = |i: usize| u.values[i] - far.base(d.point(i), dim);

    let (mut ob_max, mut ob_min) = (f64::NEG_INFINITY, f64::INFINITY);
    for &i in &d.obstacle_boundary {
        let p = phi(i);
        ob_max = ob_max.max(p);
        ob_min = ob_min.min(p);
    }
    let mut worst: Option<(usize, f64, &str)> = None;
    for i in d.live_nodes() {
        if d.radius_of(i) > cut {
            continue;
        }
        let p = phi(i);
        let over = p - ob_max;
        let under = ob_min - p;
        let (mag, side) = if over >= under { (over, "max") } else { (under, "min") };
        if mag > tol && worst.map_or(true, |(_, w, _)| mag > w) {
            worst = Some((i, mag, side));
        }
    }
    worst.map(|(i, magnitude, side)| ViolationRecord {
        kind: ViolationKind::Extremal,
        location: d.lattice(i),
        magnitude,
        context: format!(
            "{side} of u − far-field drifts off the obstacle boundary (|x| ≤ {cut:.2})"
        ),
    })
}

/// Odd reflection `V(x', x_axis) = −u(x', −x_axis)`. The domain must be
/// closed under the flip with identical node classification; symmetric
/// stencils then commute with the reflection, so the residual of `V` equals
/// the residual of `u` exactly.
pub fn reflect_field(u: &SolutionField, axis: usize) -> Result<SolutionField, VerifyError> {
    let d = &u.domain;
    let dim = d.spec.dim;
    if axis >= dim {
        return Err(VerifyError::InvalidInput(format!(
            "axis {axis} out of range for dim {dim}"
        )));
    }
    let flip = |mut z: Lattice| {
        z[axis] = -z[axis];
        z
    };
    for i in 0..d.node_count() {
        let z = d.lattice(i);
        let j = d
            .linear_checked(flip(z))
            .ok_or(VerifyError::AsymmetricDomain { axis, node: z })?;
        if d.class_of(i) != d.class_of(j) {
            return Err(VerifyError::AsymmetricDomain { axis, node: z });
        }
    }
    let mut values = vec![f64::NAN; d.node_count()];
    for i in 0..d.node_count() {
        if d.class_of(i) == NodeClass::Excluded {
            continue;
        }
        let j = d.linear(flip(d.lattice(i)));
        values[i] = -u.values[j];
    }
    let mut out = SolutionField {
        domain: Arc::clone(&u.domain),
        values,
        iterations: u.iterations,
        residual_max: 0.0,
        tol: u.tol,
        converged: u.converged,
    };
    out.residual_max = out.recompute_residual_max();
    Ok(out)
}

/// Copies a field onto a smaller concentric domain with the same lattice
/// (same spacing, stencil, and obstacle; outer radius at most the field's).
/// Values transfer node-for-node by lattice coordinate; the small domain's
/// outer ring reads the large field's values there, making the result a
/// legitimate Dirichlet field on the small domain. This is how two
/// exhaustion runs ending at different radii become comparable.
pub fn restrict_field(
    u: &SolutionField,
    small: &Arc<Domain>,
) -> Result<SolutionField, VerifyError> {
    let big = &u.domain;
    let (bs, ss) = (&big.spec, &small.spec);
    if bs.dim != ss.dim
        || bs.h != ss.h
        || bs.stencil_width != ss.stencil_width
        || bs.obstacle != ss.obstacle
        || bs.outer != ss.outer
    {
        return Err(VerifyError::ProfileMismatch(format!(
            "restriction target must differ only in outer radius (have {:?}, want {:?})",
            bs, ss
        )));
    }
    if ss.outer_radius > bs.outer_radius {
        return Err(VerifyError::InvalidInput(format!(
            "target radius {} exceeds the field's {}",
            ss.outer_radius, bs.outer_radius
        )));
    }
    let mut values = vec![f64::NAN; small.node_count()];
    for i in small.live_nodes() {
        let z = small.lattice(i);
        let j = big.linear_checked(z).ok_or_else(|| {
            VerifyError::InvalidInput(format!("node {z:?} missing from the source lattice"))
        })?;
        if big.class_of(j) == NodeClass::Excluded {
            return Err(VerifyError::InvalidInput(format!(
                "node {z:?} is excluded in the source domain"
            )));
        }
        values[i] = u.values[j];
    }
    SolutionField::from_values(small, values)
        .map_err(|e| VerifyError::InvalidInput(e.to_string()))
}

/// Growth-envelope check: every live node must satisfy
/// `m⁻ − S⁻∞·|x| − eps ≤ u(x) ≤ m⁺ + S⁺∞·|x| + eps`.
pub fn check_growth_envelope(
    u: &SolutionField,
    profile: &SlopeProfile,
    eps: f64,
) -> Vec<ViolationRecord> {
    let d = &u.domain;
    let mut out = Vec::new();
    for i in d.live_nodes() {
        let r = d.radius_of(i);
        let v = u.values[i];
        let hi = profile.m_plus + profile.s_inf_plus * r + eps;
        let lo = profile.m_minus - profile.s_inf_minus * r - eps;
        let breach = (v - hi).max(lo - v);
        if breach > 0.0 {
            out.push(ViolationRecord {
                kind: ViolationKind::Envelope,
                location: d.lattice(i),
                magnitude: breach,
                context: format!("envelope [{lo:.6}, {hi:.6}] at radius {r:.4}"),
            });
        }
    }
    out.sort_by(|a, b| {
        a.location
            .cmp(&b.location)
            .then(a.magnitude.partial_cmp(&b.magnitude).expect("finite"))
    });
    out
}

/// Independent reference solver: plain simultaneous (Jacobi) midrange
/// iteration with full-stencil scans, no warm start, no ordering tricks.
/// Kept deliberately separate from the production path so the two
/// implementations can cross-validate each other on small grids.
pub fn oracle_solve(
    domain: &Arc<Domain>,
    bc: &BoundaryCondition,
) -> Result<SolutionField, VerifyError> {
    let live = domain.live_nodes().count();
    if live > ORACLE_MAX_NODES {
        return Err(VerifyError::InvalidInput(format!(
            "domain has {live} live nodes; the reference solver allows {ORACLE_MAX_NODES}"
        )));
    }
    let mut u = vec![f64::NAN; domain.node_count()];
    let (mut bsum, mut bcount) = (0.0f64, 0usize);
    for (k, &i) in domain.obstacle_boundary.iter().enumerate() {
        u[i] = bc.obstacle[k];
        bsum += bc.obstacle[k];
        bcount += 1;
    }
    for (k, &i) in domain.outer_boundary.iter().enumerate() {
        u[i] = bc.outer[k];
        bsum += bc.outer[k];
        bcount += 1;
    }
    let mean = bsum / bcount as f64;
    for &i in &domain.interior {
        u[i] = mean;
    }

    let offsets: Vec<isize> = domain.deltas.clone();
    let mut next = u.clone();
    let mut iterations = 0u64;
    loop {
        let mut max_update = 0.0f64;
        for &i in &domain.interior {
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for &off in &offsets {
                let v = u[(i as isize + off) as usize];
                hi = hi.max(v);
                lo = lo.min(v);
            }
            let mid = 0.5 * (hi + lo);
            max_update = max_update.max((mid - u[i]).abs());
            next[i] = mid;
        }
        std::mem::swap(&mut u, &mut next);
        iterations += 1;
        if max_update < ORACLE_TOL {
            break;
        }
        if iterations >= ORACLE_MAX_ITER {
            return Err(VerifyError::OracleNotConverged { iterations, last_update: max_update });
        }
    }

    let mut out = SolutionField {
        domain: Arc::clone(domain),
        values: u,
        iterations,
        residual_max: 0.0,
        tol: ORACLE_TOL,
        converged: true,
    };
    out.residual_max = out.recompute_residual_max();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, GridSpec, ObstacleShape, OuterShape};
    use crate::solver::{solve_dirichlet, AnalyticForm, SolverOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annulus(h: f64, outer: f64, m: usize) -> Arc<Domain> {
        Arc::new(
            build_domain(&GridSpec {
                dim: 2,
                h,
                outer_radius: outer,
                stencil_width: m,
                obstacle: ObstacleShape::Ball { radius: 1.0 },
                outer: OuterShape::Ball,
            })
            .unwrap(),
        )
    }

    fn boxed_field(d: &Arc<Domain>, f: impl Fn(Point) -> f64) -> SolutionField {
        SolutionField::from_fn(d, f).unwrap()
    }

    #[test]
    fn dyadic_boxes_are_interior_and_cover_sizes() {
        let d = annulus(0.1, 4.0, 1);
        let boxes = dyadic_boxes(&d);
        assert!(!boxes.is_empty());
        let mut sides: Vec<i32> = boxes.iter().map(|b| b.hi[0] - b.lo[0]).collect();
        sides.dedup();
        for b in &boxes {
            for z in b.nodes(2) {
                let i = d.linear_checked(z).unwrap();
                assert_eq!(d.class_of(i), NodeClass::Interior);
            }
        }
        assert!(boxes.iter().any(|b| b.hi[0] - b.lo[0] == 4));
        assert!(boxes.iter().any(|b| b.hi[0] - b.lo[0] == 8));
    }

    #[test]
    fn axis_plane_and_constant_fields_satisfy_ccp_exactly() {
        let d = annulus(0.1, 4.0, 1);
        let boxes = dyadic_boxes(&d);
        // Axis-aligned plane: a boundary node exactly aligned with the
        // gradient exists in every box, so the extremal cone is tight.
        for f in [
            Box::new(|p: Point| p[0]) as Box<dyn Fn(Point) -> f64>,
            Box::new(|p: Point| p[1] * -2.0),
            Box::new(|_| 3.75),
        ] {
            let u = boxed_field(&d, f);
            let violations = check_ccp(&u, &boxes, 1e-9);
            assert!(violations.is_empty(), "unexpected: {:?}", violations.first());
        }
    }

    #[test]
    fn cone_fields_pass_ccp_at_the_measured_angular_slack() {
        // Cones centered at the origin are exact solutions away from the
        // vertex, but the extremal-cone slope is built from boundary nodes
        // whose directions only approximate the gradient direction; the
        // resulting slack scales like h²/diam per the aligned-node gap.
        let d = annulus(0.1, 4.0, 1);
        let boxes = dyadic_boxes(&d);
        let u = boxed_field(&d, |p| norm(&p, 2));
        let tight = check_ccp(&u, &boxes, 1e-9);
        // The angular gap is a real effect: the tight tolerance must report
        // it (guards against the checker silently weakening).
        assert!(!tight.is_empty(), "angular slack unexpectedly below 1e-9");
        let worst = tight.iter().map(|v| v.magnitude).fold(0.0f64, f64::max);
        // Measured worst breach for this geometry is 2.24e-3 (16h boxes
        // hugging the obstacle shell dominate).
        assert!(worst < 2.5e-3, "cone slack {worst} larger than expected");
        assert!(check_ccp(&u, &boxes, 2.5e-3).is_empty());
    }

    #[test]
    fn ccp_detects_a_bumped_node_in_every_containing_box() {
        let d = annulus(0.1, 4.0, 1);
        let boxes = dyadic_boxes(&d);
        let tol = 1e-7;
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        // Detection is only possible where the box family looks: restrict
        // the fault population to nodes belonging to at least one box (the
        // strided family leaves a thin corridor along the obstacle shell
        // uncovered — a coverage property, not a detector defect).
        let covered = box_covered_interior(&d, &boxes);
        for _ in 0..10 {
            let node = covered[rng.gen_range(0..covered.len())];
            let mut u = boxed_field(&d, |p| p[0]);
            u.values[node] += 10.0 * tol;
            let violations = check_ccp(&u, &boxes, tol);
            let z = d.lattice(node);
            assert!(!violations.is_empty(), "bump at {z:?} missed entirely");
            // Every record traces back to the bump: the above-check flags
            // the bumped node itself; the below-check (vertex at the bump)
            // flags gradient-aligned nodes left of it. Nothing off-axis can
            // breach at this tolerance against the plane's exact geometry.
            for v in &violations {
                assert_eq!(v.location[1], z[1], "off-axis record {v:?}");
            }
            let strictly_inside = boxes
                .iter()
                .any(|b| (0..2).all(|c| z[c] > b.lo[c] && z[c] < b.hi[c]));
            if strictly_inside {
                let above: Vec<_> = violations
                    .iter()
                    .filter(|v| v.kind == ViolationKind::CcpAbove)
                    .collect();
                assert!(
                    above.iter().all(|v| v.location == z) && !above.is_empty(),
                    "above-set should be exactly the bump: {above:?}"
                );
                let mag = above[0].magnitude;
                assert!(
                    (mag - 10.0 * tol).abs() <= 0.01 * tol,
                    "bump magnitude {mag} differs from the seeded 10·tol"
                );
            }
        }
    }

    #[test]
    fn comparison_holds_for_ordered_data_and_reports_forgeries() {
        let d = annulus(0.2, 3.0, 1);
        let bc1 = BoundaryCondition::from_fns(&d, |p| 0.2 * p[0], |p| 0.1 * norm(&p, 2)).unwrap();
        let bc2 = BoundaryCondition::from_fns(
            &d,
            |p| 0.2 * p[0] + 0.3,
            |p| 0.1 * norm(&p, 2) + 0.3,
        )
        .unwrap();
        let opts = SolverOptions { tol: 1e-10, ..Default::default() };
        let u1 = solve_dirichlet(&d, &bc1, &opts, None).unwrap();
        let u2 = solve_dirichlet(&d, &bc2, &opts, None).unwrap();
        // Monotonicity: raising all data by 0.3 raises the solution.
        for &i in &d.interior {
            assert!(u2.values[i] >= u1.values[i] - 1e-9);
        }
        assert!(check_comparison(&u1, &u2, 2e-9).unwrap().is_none());
        assert!(check_comparison(&u2, &u1, 2e-9).unwrap().is_none());
        // A forged interior bump breaks the principle.
        let mut forged = u1.clone();
        let mid = d.interior[d.interior.len() / 2];
        forged.values[mid] += 1.0;
        let rec = check_comparison(&forged, &u1, 1e-9).unwrap().expect("violation");
        assert_eq!(rec.kind, ViolationKind::Comparison);
        assert_eq!(rec.location, d.lattice(mid));

        let other = annulus(0.25, 3.0, 1);
        let w = boxed_field(&other, |p| p[0]);
        assert!(matches!(
            check_comparison(&u1, &w, 1e-9),
            Err(VerifyError::ProfileMismatch(_))
        ));
    }

    #[test]
    fn extremal_location_of_anchored_forms_is_on_the_obstacle() {
        let d = annulus(0.1, 4.0, 1);
        // φ = u − |x| constant: extremes everywhere, in particular on ∂Ω.
        let cone = boxed_field(&d, |p| norm(&p, 2) - 1.0);
        let far = FarFieldSpec::Cone { lambda: 1.0 };
        assert!(check_extremal_location(&cone, &far, 1e-9).is_none());

        let plane = boxed_field(&d, |p| p[0]);
        let farp = FarFieldSpec::Plane { a: [1.0, 0.0, 0.0] };
        assert!(check_extremal_location(&plane, &farp, 1e-9).is_none());

        // A field growing faster than the far-field form puts the max inside.
        let bulge = boxed_field(&d, |p| norm(&p, 2) * 1.2 - 1.2);
        let rec = check_extremal_location(&bulge, &far, 1e-6).expect("drift");
        assert_eq!(rec.kind, ViolationKind::Extremal);
        assert!(rec.magnitude > 0.1);
    }

    #[test]
    fn reflection_is_an_involution_and_preserves_the_residual_bitwise() {
        let d = annulus(0.1, 3.0, 2);
        let bc = BoundaryCondition::from_fns(
            &d,
            |p| (2.0 * p[1].atan2(p[0])).sin() * 0.3,
            |p| p[1] * 0.5,
        )
        .unwrap();
        let u = solve_dirichlet(&d, &bc, &SolverOptions::default(), None).unwrap();
        for axis in [0usize, 1] {
            let v = reflect_field(&u, axis).unwrap();
            assert_eq!(v.residual_max.to_bits(), u.residual_max.to_bits());
            let w = reflect_field(&v, axis).unwrap();
            for i in d.live_nodes() {
                assert_eq!(w.values[i].to_bits(), u.values[i].to_bits());
            }
        }
        assert!(matches!(
            reflect_field(&u, 2),
            Err(VerifyError::InvalidInput(_))
        ));
    }

    #[test]
    fn odd_plane_is_fixed_by_reflection_and_cone_flips_sign() {
        let d = annulus(0.2, 3.0, 1);
        let plane = boxed_field(&d, |p| p[1]);
        let v = reflect_field(&plane, 1).unwrap();
        for i in d.live_nodes() {
            assert!((v.values[i] - plane.values[i]).abs() <= 1e-12);
        }
        let cone = boxed_field(&d, |p| norm(&p, 2));
        let w = reflect_field(&cone, 0).unwrap();
        for i in d.live_nodes() {
            assert!((w.values[i] + cone.values[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn asymmetric_obstacles_refuse_reflection() {
        let d = Arc::new(
            build_domain(&GridSpec {
                dim: 2,
                h: 0.2,
                outer_radius: 3.0,
                stencil_width: 1,
                obstacle: ObstacleShape::PointSet(vec![[0.0, 0.0, 0.0], [0.4, 0.2, 0.0]]),
                outer: OuterShape::Ball,
            })
            .unwrap(),
        );
        let u = boxed_field(&d, |p| p[0]);
        assert!(matches!(
            reflect_field(&u, 1),
            Err(VerifyError::AsymmetricDomain { axis: 1, .. })
        ));
    }

    #[test]
    fn envelope_checker_reports_fast_growth() {
        let d = annulus(0.1, 6.0, 1);
        let u = boxed_field(&d, |p| norm(&p, 2) - 1.0);
        let prof = crate::asymptotics::slope_profile(&u, &[2.0, 3.0, 4.5]).unwrap();
        assert!(check_growth_envelope(&u, &prof, 5.0 * 0.1).is_empty());
        // Quadratic growth escapes every envelope of linear slope.
        let q = boxed_field(&d, |p| norm(&p, 2).powi(2));
        let prof_q = crate::asymptotics::slope_profile(&q, &[2.0, 3.0, 4.5]).unwrap();
        // Tail slope is measured at r=4.5 but growth continues to r=6.
        let viol = check_growth_envelope(&q, &prof_q, 0.01);
        assert!(!viol.is_empty());
        assert_eq!(viol[0].kind, ViolationKind::Envelope);
    }

    #[test]
    fn oracle_matches_closed_forms_and_the_production_solver() {
        // 9x9 box with plane data: exact to reference tolerance.
        let box_domain = Arc::new(
            build_domain(&GridSpec {
                dim: 2,
                h: 0.5,
                outer_radius: 2.0,
                stencil_width: 1,
                obstacle: ObstacleShape::PointSet(vec![[0.0, 0.0, 0.0]]),
                outer: OuterShape::Box,
            })
            .unwrap(),
        );
        let bc = BoundaryCondition::from_form(
            &box_domain,
            &AnalyticForm::Linear([1.0, 0.0, 0.0]),
        )
        .unwrap();
        let u = oracle_solve(&box_domain, &bc).unwrap();
        for i in box_domain.live_nodes() {
            let p = box_domain.point(i);
            assert!((u.values[i] - p[0]).abs() <= 1e-11, "plane deviation at {p:?}");
        }

        // Constant data: exact fixed point.
        let c = BoundaryCondition::from_form(&box_domain, &AnalyticForm::Constant(4.0)).unwrap();
        let uc = oracle_solve(&box_domain, &c).unwrap();
        for i in box_domain.live_nodes() {
            assert_eq!(uc.values[i], 4.0);
        }

        // 21x21 annulus with cone data: agrees with the production solver.
        let d = annulus(0.2, 2.0, 1);
        assert!(d.live_nodes().count() <= ORACLE_MAX_NODES);
        let bc = BoundaryCondition::from_form(
            &d,
            &AnalyticForm::Radial { alpha: 1.0, beta: -1.0 },
        )
        .unwrap();
        let tol = 1e-11;
        let opts = SolverOptions { tol, max_sweeps: 2_000_000, ..Default::default() };
        let fast = solve_dirichlet(&d, &bc, &opts, None).unwrap();
        let slow = oracle_solve(&d, &bc).unwrap();
        for &i in &d.interior {
            assert!(
                (fast.values[i] - slow.values[i]).abs() <= 10.0 * tol,
                "node {i}: {} vs {}",
                fast.values[i],
                slow.values[i]
            );
        }
    }

    #[test]
    fn oracle_monotonicity_in_the_boundary_data() {
        let d = annulus(0.25, 2.0, 1);
        let bc1 = BoundaryCondition::from_fns(&d, |p| 0.1 * p[0], |p| 0.2 * p[1]).unwrap();
        let mut outer2 = bc1.outer.clone();
        let mid = outer2.len() / 2;
        outer2[mid] += 0.5;
        let bc2 = BoundaryCondition::from_values(&d, bc1.obstacle.clone(), outer2).unwrap();
        let u1 = oracle_solve(&d, &bc1).unwrap();
        let u2 = oracle_solve(&d, &bc2).unwrap();
        for &i in &d.interior {
            assert!(u2.values[i] >= u1.values[i] - 1e-12);
        }
    }

    #[test]
    fn oracle_refuses_big_domains() {
        let d = annulus(0.05, 4.0, 1);
        let bc = BoundaryCondition::from_form(&d, &AnalyticForm::Constant(0.0)).unwrap();
        assert!(matches!(
            oracle_solve(&d, &bc),
            Err(VerifyError::InvalidInput(_))
        ));
    }

    #[test]
    fn restriction_copies_values_onto_the_smaller_concentric_domain() {
        let big = annulus(0.2, 3.0, 1);
        let small = annulus(0.2, 2.0, 1);
        let u = boxed_field(&big, |p| 1.5 * norm(&p, 2) - 0.25 * p[0]);
        let v = restrict_field(&u, &small).unwrap();
        for i in small.live_nodes() {
            let j = big.linear(small.lattice(i));
            assert_eq!(v.values[i].to_bits(), u.values[j].to_bits());
        }
        // Identical fields compare clean in both directions.
        assert!(check_comparison(&v, &v, 1e-12).unwrap().is_none());

        let wrong_h = annulus(0.25, 2.0, 1);
        assert!(matches!(
            restrict_field(&u, &wrong_h),
            Err(VerifyError::ProfileMismatch(_))
        ));
        let too_big = annulus(0.2, 4.0, 1);
        assert!(matches!(
            restrict_field(&u, &too_big),
            Err(VerifyError::InvalidInput(_))
        ));
    }
}
