//! Lattice domains for bounded and truncated-exterior Dirichlet problems.
//!
//! A [`Domain`] is a box of lattice nodes `x = h*z` classified into interior
//! nodes, obstacle-boundary nodes, outer-boundary nodes, and excluded nodes.
//! Interior nodes are exactly those whose full wide stencil stays on
//! non-excluded nodes, so a solver can sweep them without bounds checks.

use std::fmt;
use std::path::{Path, PathBuf};

/// Maximum supported spatial dimension. Coordinates use fixed-size arrays;
/// entries past `dim` are zero.
pub const MAX_DIM: usize = 3;

/// Integer lattice coordinates (units of `h`).
pub type Lattice = [i32; MAX_DIM];

/// World coordinates.
pub type Point = [f64; MAX_DIM];

/// Absolute slack for geometric membership tests, small against any grid
/// spacing we accept but large against f64 rounding of `i * h`.
pub const GEOM_EPS: f64 = 1e-9;

/// Errors from grid construction and validation.
#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("obstacle does not fit inside the closed unit ball: {0}")]
    ObstacleTooLarge(String),
    #[error("no interior nodes after classification")]
    EmptyInterior,
    #[error("obstacle mask {path}: {reason}")]
    Mask { path: PathBuf, reason: String },
}

/// Compact obstacle description. Every variant must fit inside the closed
/// unit ball and contain (a node within `h` of) the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleShape {
    /// Closed ball of the given radius centered at the origin, `0 < r <= 1`.
    /// Nodes strictly inside become excluded; data lives on the shell of
    /// outside nodes that see them through the stencil.
    Ball { radius: f64 },
    /// Explicit points, snapped to the nearest node. The snapped nodes
    /// themselves carry Dirichlet data (no excluded core).
    PointSet(Vec<Point>),
    /// Plain-text 0/1 grid, row-major, one row per line, odd width and
    /// height, center cell at the origin, columns along +x1, rows along -x2.
    /// The 1-cells behave like a `PointSet`. Two-dimensional grids only.
    MaskFile(PathBuf),
}

/// Shape of the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterShape {
    /// Euclidean ball `|x| <= R` (truncated exterior domains).
    Ball,
    /// Axis box `max_k |x_k| <= R` (bounded test domains).
    Box,
}

/// Everything needed to build a [`Domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Grid spacing, `h > 0`.
    pub h: f64,
    /// Outer radius `R > 1`.
    pub outer_radius: f64,
    /// Stencil width `m` in lattice steps, `1 <= m <= R/h`.
    pub stencil_width: usize,
    pub obstacle: ObstacleShape,
    pub outer: OuterShape,
}

impl GridSpec {
    /// Checks the scalar invariants that do not require touching the
    /// filesystem. Mask files are validated during [`build_domain`].
    pub fn validate(&self) -> Result<(), GridError> {
        if self.dim < 2 || self.dim > MAX_DIM {
            return Err(GridError::InvalidSpec(format!(
                "dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(GridError::InvalidSpec(format!("h must be positive, got {}", self.h)));
        }
        if !(self.outer_radius.is_finite() && self.outer_radius > 1.0) {
            return Err(GridError::InvalidSpec(format!(
                "outer radius must exceed 1, got {}",
                self.outer_radius
            )));
        }
        let m = self.stencil_width;
        if m < 1 || m as f64 > self.outer_radius / self.h + GEOM_EPS {
            return Err(GridError::InvalidSpec(format!(
                "stencil width must satisfy 1 <= m <= R/h, got m={m} with R/h={}",
                self.outer_radius / self.h
            )));
        }
        match &self.obstacle {
            ObstacleShape::Ball { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(GridError::InvalidSpec(format!(
                        "ball obstacle radius must be positive, got {radius}"
                    )));
                }
                if *radius > 1.0 + GEOM_EPS {
                    return Err(GridError::ObstacleTooLarge(format!("ball radius {radius} > 1")));
                }
            }
            ObstacleShape::PointSet(points) => {
                if points.is_empty() {
                    return Err(GridError::InvalidSpec("point-set obstacle is empty".into()));
                }
            }
            ObstacleShape::MaskFile(path) => {
                if self.dim != 2 {
                    return Err(GridError::InvalidSpec(format!(
                        "mask obstacles are two-dimensional, spec has dim={}",
                        self.dim
                    )));
                }
                if path.as_os_str().is_empty() {
                    return Err(GridError::InvalidSpec("mask path is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// Classification of a lattice node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeClass {
    /// Solved by the scheme; full stencil lies on non-excluded nodes.
    Interior,
    /// Carries obstacle Dirichlet data.
    ObstacleBoundary,
    /// Carries outer (far-field) Dirichlet data.
    OuterBoundary,
    /// Outside the outer region or inside a ball obstacle; never read by
    /// interior updates.
    Excluded,
}

/// Symmetric set of lattice offsets with max-norm reach `m`.
///
/// One offset per direction class: each primitive direction `p` is scaled by
/// `floor(m / |p|_inf)`, the longest multiple that stays inside the max-norm
/// ball, so directions whose reach divides `m` extend to the stencil radius
/// exactly. No offset is a positive multiple of another.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilSet {
    /// Lattice offsets, lexicographically sorted.
    pub offsets: Vec<Lattice>,
    /// Stencil radius `rho_s = m * h`.
    pub radius: f64,
}

fn gcd(a: i32, b: i32) -> i32 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Enumerates the deduplicated, scaled direction classes for the given
/// dimension and width. See [`StencilSet`] for the exact construction.
pub fn stencil_directions(dim: usize, m: usize) -> Vec<Lattice> {
    assert!((2..=MAX_DIM).contains(&dim), "dimension must be 2 or 3");
    assert!(m >= 1, "stencil width must be at least 1");
    let m = m as i32;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    let range = -m..=m;
    let zs: Vec<i32> = range.collect();
    let push = |d: Lattice, seen: &mut std::collections::BTreeSet<Lattice>, out: &mut Vec<Lattice>| {
        let g = d.iter().fold(0, |acc, &c| gcd(acc, c));
        if g == 0 {
            return;
        }
        let prim = [d[0] / g, d[1] / g, d[2] / g];
        if seen.insert(prim) {
            let reach = prim.iter().map(|c| c.abs()).max().unwrap();
            let k = m / reach;
            out.push([prim[0] * k, prim[1] * k, prim[2] * k]);
        }
    };
    if dim == 2 {
        for &a in &zs {
            for &b in &zs {
                push([a, b, 0], &mut seen, &mut out);
            }
        }
    } else {
        for &a in &zs {
            for &b in &zs {
                for &c in &zs {
                    push([a, b, c], &mut seen, &mut out);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

impl StencilSet {
    pub fn new(dim: usize, m: usize, h: f64) -> Self {
        StencilSet { offsets: stencil_directions(dim, m), radius: m as f64 * h }
    }
}

/// A classified lattice domain plus its stencil.
///
/// Nodes live in a padded box of side `2*(N+m)+1` lattice steps,
/// `N = floor(R/h)`, so stencil lookups from any non-excluded node stay in
/// bounds. Linear indices follow `sum_k (z_k + half) * side^k`.
#[derive(Debug, Clone)]
pub struct Domain {
    pub spec: GridSpec,
    /// Padded half-width in lattice steps (`N + m`).
    pub half: i32,
    /// Nodes per side of the padded box.
    pub side: usize,
    /// Node classification, one entry per padded-box node.
    pub class: Vec<NodeClass>,
    pub stencil: StencilSet,
    /// Linear-index deltas matching `stencil.offsets`.
    pub deltas: Vec<isize>,
    /// Ascending linear indices per class.
    pub interior: Vec<usize>,
    pub obstacle_boundary: Vec<usize>,
    pub outer_boundary: Vec<usize>,
}

impl Domain {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn h(&self) -> f64 {
        self.spec.h
    }

    /// Total nodes in the padded box (including excluded padding).
    pub fn node_count(&self) -> usize {
        self.class.len()
    }

    pub fn linear(&self, z: Lattice) -> usize {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for k in 0..self.spec.dim {
            idx += (z[k] + self.half) as usize * stride;
            stride *= self.side;
        }
        idx
    }

    /// Linear index of a lattice point, or `None` outside the padded box.
    pub fn linear_checked(&self, z: Lattice) -> Option<usize> {
        for k in 0..self.spec.dim {
            let v = z[k] + self.half;
            if v < 0 || v as usize >= self.side {
                return None;
            }
        }
        Some(self.linear(z))
    }

    pub fn lattice(&self, mut idx: usize) -> Lattice {
        let mut z = [0i32; MAX_DIM];
        for zk in z.iter_mut().take(self.spec.dim) {
            *zk = (idx % self.side) as i32 - self.half;
            idx /= self.side;
        }
        z
    }

    /// World coordinates of a node.
    pub fn point(&self, idx: usize) -> Point {
        let z = self.lattice(idx);
        let h = self.spec.h;
        [z[0] as f64 * h, z[1] as f64 * h, z[2] as f64 * h]
    }

    /// Euclidean norm of a node's position.
    pub fn radius_of(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        norm(&p, self.spec.dim)
    }

    pub fn class_of(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }

    /// All boundary (data) nodes: obstacle first, then outer, each ascending.
    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.obstacle_boundary.iter().chain(self.outer_boundary.iter()).copied()
    }

    /// Nodes that participate in the problem (anything non-excluded).
    pub fn live_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.class
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != NodeClass::Excluded)
            .map(|(i, _)| i)
    }
}

pub fn norm(p: &Point, dim: usize) -> f64 {
    p.iter().take(dim).map(|c| c * c).sum::<f64>().sqrt()
}

fn parse_mask(path: &Path) -> Result<Vec<Lattice>, GridError> {
    let err = |reason: String| GridError::Mask { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(format!("cannot read: {e}")))?;
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let cells: Result<Vec<bool>, GridError> = line
            .split_whitespace()
            .collect::<String>()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(err(format!("line {}: invalid cell {other:?}", lineno + 1))),
            })
            .collect();
        let cells = cells?;
        if !cells.is_empty() {
            rows.push(cells);
        }
    }
    if rows.is_empty() {
        return Err(err("mask is empty".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(err("ragged mask: rows differ in length".into()));
    }
    let height = rows.len();
    if width % 2 == 0 || height % 2 == 0 {
        return Err(err(format!(
            "mask must have odd width and height so a center cell exists, got {width}x{height}"
        )));
    }
    let (cx, cy) = ((width / 2) as i32, (height / 2) as i32);
    let mut nodes = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if on {
                nodes.push([c as i32 - cx, cy - r as i32, 0]);
            }
        }
    }
    if nodes.is_empty() {
        return Err(err("mask has no 1-cells".into()));
    }
    Ok(nodes)
}

/// Obstacle nodes that carry data directly (point-like obstacles).
fn snapped_obstacle_nodes(spec: &GridSpec) -> Result<Option<Vec<Lattice>>, GridError> {
    let h = spec.h;
    let nodes = match &spec.obstacle {
        ObstacleShape::Ball { .. } => return Ok(None),
        ObstacleShape::PointSet(points) => {
            let mut nodes: Vec<Lattice> = points
                .iter()
                .map(|p| {
                    let mut z = [0i32; MAX_DIM];
                    for k in 0..spec.dim {
                        z[k] = (p[k] / h).round() as i32;
                    }
                    z
                })
                .collect();
            nodes.sort_unstable();
            nodes.dedup();
            nodes
        }
        ObstacleShape::MaskFile(path) => parse_mask(path)?,
    };
    for z in &nodes {
        let r = norm(&[z[0] as f64 * h, z[1] as f64 * h, z[2] as f64 * h], spec.dim);
        if r > 1.0 + GEOM_EPS {
            return Err(GridError::ObstacleTooLarge(format!(
                "snapped obstacle node at distance {r:.6} from the origin"
            )));
        }
    }
    if !nodes
        .iter()
        .any(|z| norm(&[z[0] as f64 * h, z[1] as f64 * h, z[2] as f64 * h], spec.dim) <= h + GEOM_EPS)
    {
        return Err(GridError::InvalidSpec(
            "obstacle must contain a node within h of the origin".into(),
        ));
    }
    Ok(Some(nodes))
}

/// Builds and classifies the domain for a spec.
///
/// Classification is forced by the interior-stencil invariant: a candidate
/// node whose stencil reaches an excluded obstacle node becomes obstacle
/// boundary, one whose stencil leaves the outer region becomes outer
/// boundary (obstacle wins if both apply), and the rest are interior.
pub fn build_domain(spec: &GridSpec) -> Result<Domain, GridError> {
    spec.validate()?;
    let dim = spec.dim;
    let h = spec.h;
    let r_outer = spec.outer_radius;
    let m = spec.stencil_width as i32;
    let n = (r_outer / h + GEOM_EPS).floor() as i32;
    let half = n + m;
    let side = (2 * half + 1) as usize;
    let total = side.pow(dim as u32);

    let stencil = StencilSet::new(dim, spec.stencil_width, h);
    let point_nodes = snapped_obstacle_nodes(spec)?;

    // Scratch codes: 0 candidate, 1 excluded (outside), 2 excluded
    // (obstacle core), 3 obstacle data node.
    const CAND: u8 = 0;
    const OUT: u8 = 1;
    const CORE: u8 = 2;
    const DATA: u8 = 3;
    let mut code = vec![OUT; total];

    let domain_probe = Domain {
        spec: spec.clone(),
        half,
        side,
        class: Vec::new(),
        stencil: stencil.clone(),
        deltas: Vec::new(),
        interior: Vec::new(),
        obstacle_boundary: Vec::new(),
        outer_boundary: Vec::new(),
    };

    for idx in 0..total {
        let z = domain_probe.lattice(idx);
        if z.iter().take(dim).any(|c| c.abs() > n) {
            continue; // padding stays excluded-outside
        }
        let p = [z[0] as f64 * h, z[1] as f64 * h, z[2] as f64 * h];
        let inside_outer = match spec.outer {
            OuterShape::Ball => norm(&p, dim) <= r_outer + GEOM_EPS,
            OuterShape::Box => (0..dim).all(|k| p[k].abs() <= r_outer + GEOM_EPS),
        };
        if !inside_outer {
            continue;
        }
        code[idx] = match &spec.obstacle {
            ObstacleShape::Ball { radius } => {
                if norm(&p, dim) <= radius + GEOM_EPS {
                    CORE
                } else {
                    CAND
                }
            }
            _ => CAND,
        };
    }
    if let Some(nodes) = &point_nodes {
        for z in nodes {
            let idx = domain_probe.linear(*z);
            if code[idx] == CAND {
                code[idx] = DATA;
            }
        }
    }

    let deltas: Vec<isize> = stencil
        .offsets
        .iter()
        .map(|d| {
            let mut delta = 0isize;
            let mut stride = 1isize;
            for k in 0..dim {
                delta += d[k] as isize * stride;
                stride *= side as isize;
            }
            delta
        })
        .collect();

    let mut class = vec![NodeClass::Excluded; total];
    let mut interior = Vec::new();
    let mut obstacle_boundary = Vec::new();
    let mut outer_boundary = Vec::new();
    for idx in 0..total {
        match code[idx] {
            DATA => {
                class[idx] = NodeClass::ObstacleBoundary;
                obstacle_boundary.push(idx);
            }
            CAND => {
                let mut sees_core = false;
                let mut sees_out = false;
                for &d in &deltas {
                    match code[(idx as isize + d) as usize] {
                        CORE => sees_core = true,
                        OUT => sees_out = true,
                        _ => {}
                    }
                }
                if sees_core {
                    class[idx] = NodeClass::ObstacleBoundary;
                    obstacle_boundary.push(idx);
                } else if sees_out {
                    class[idx] = NodeClass::OuterBoundary;
                    outer_boundary.push(idx);
                } else {
                    class[idx] = NodeClass::Interior;
                    interior.push(idx);
                }
            }
            _ => {}
        }
    }

    if interior.is_empty() {
        return Err(GridError::EmptyInterior);
    }
    if obstacle_boundary.is_empty() {
        return Err(GridError::InvalidSpec(
            "no obstacle-boundary nodes; obstacle is invisible at this resolution".into(),
        ));
    }
    if outer_boundary.is_empty() {
        return Err(GridError::InvalidSpec("no outer-boundary nodes".into()));
    }

    Ok(Domain {
        spec: spec.clone(),
        half,
        side,
        class,
        stencil,
        deltas,
        interior,
        obstacle_boundary,
        outer_boundary,
    })
}

/// Builds a solid-ball domain `|x| <= radius` with no obstacle: interior
/// nodes plus the outer shell whose stencils poke past the sphere. Used for
/// entire-envelope solves, where the obstacle is deliberately ignored.
pub fn build_ball_domain(dim: usize, h: f64, radius: f64, m: usize) -> Result<Domain, GridError> {
    let spec = GridSpec {
        dim,
        h,
        outer_radius: radius,
        stencil_width: m,
        obstacle: ObstacleShape::Ball { radius: 1.0 },
        outer: OuterShape::Ball,
    };
    spec.validate()?;
    let n = (radius / h + GEOM_EPS).floor() as i32;
    let half = n + m as i32;
    let side = (2 * half + 1) as usize;
    let total = side.pow(dim as u32);
    let stencil = StencilSet::new(dim, m, h);
    let mut domain = Domain {
        spec,
        half,
        side,
        class: vec![NodeClass::Excluded; total],
        stencil,
        deltas: Vec::new(),
        interior: Vec::new(),
        obstacle_boundary: Vec::new(),
        outer_boundary: Vec::new(),
    };
    domain.deltas = domain
        .stencil
        .offsets
        .iter()
        .map(|d| {
            let mut delta = 0isize;
            let mut stride = 1isize;
            for k in 0..dim {
                delta += d[k] as isize * stride;
                stride *= side as isize;
            }
            delta
        })
        .collect();
    let mut inside = vec![false; total];
    for (idx, flag) in inside.iter_mut().enumerate() {
        let z = domain.lattice(idx);
        if z.iter().take(dim).any(|c| c.abs() > n) {
            continue;
        }
        let p = [z[0] as f64 * h, z[1] as f64 * h, z[2] as f64 * h];
        *flag = norm(&p, dim) <= radius + GEOM_EPS;
    }
    for idx in 0..total {
        if !inside[idx] {
            continue;
        }
        let full = domain.deltas.iter().all(|&d| inside[(idx as isize + d) as usize]);
        if full {
            domain.class[idx] = NodeClass::Interior;
            domain.interior.push(idx);
        } else {
            domain.class[idx] = NodeClass::OuterBoundary;
            domain.outer_boundary.push(idx);
        }
    }
    if domain.interior.is_empty() {
        return Err(GridError::EmptyInterior);
    }
    Ok(domain)
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeClass::Interior => "interior",
            NodeClass::ObstacleBoundary => "obstacle_boundary",
            NodeClass::OuterBoundary => "outer_boundary",
            NodeClass::Excluded => "excluded",
        };
        f.write_str(s)
    }
}
