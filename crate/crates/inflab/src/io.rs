//! Plain-text serialization for solved fields and plot series.
//!
//! # Field file format
//!
//! Line 1 is a header: `dim h R` — dimension, grid spacing, and outer radius
//! separated by single spaces. Every following line is `index value`: the
//! linear node index and the node's value. Only live nodes (boundary and
//! interior) appear, in ascending index order. Numbers are written with
//! Rust's shortest round-trip formatting, so writing and re-reading a field
//! reproduces every bit; headers are compared exactly on load.
//!
//! # CSV series
//!
//! Profiles: header `r,S_plus,S_minus,lip`, one row per profile radius.
//! Sweeps: header `h,max_error,iterations,residual_max`, one row per grid
//! spacing. Same number formatting as field files, `.` decimal point, no
//! locale dependence.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::asymptotics::SlopeProfile;
use crate::grid::{Domain, NodeClass};
use crate::solver::SolutionField;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("field does not match the domain: {0}")]
    Mismatch(String),
}

fn format_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Format { line, message: message.into() }
}

/// One row of an h-refinement sweep series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub max_error: f64,
    pub iterations: u64,
    pub residual_max: f64,
}

/// Writes a field in the documented text format.
pub fn write_field(path: &Path, field: &SolutionField) -> Result<(), IoError> {
    let spec = &field.domain.spec;
    let mut out = String::new();
    out.push_str(&format!("{} {} {}\n", spec.dim, spec.h, spec.outer_radius));
    for idx in field.domain.live_nodes() {
        out.push_str(&format!("{} {}\n", idx, field.values[idx]));
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a field written by [`write_field`] back onto `domain`, checking the
/// header against the domain spec and requiring exactly the live node set.
pub fn load_field(path: &Path, domain: &Arc<Domain>) -> Result<SolutionField, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format_err(1, "empty field file"))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 3 {
        return Err(format_err(1, format!("header needs `dim h R`, got `{header}`")));
    }
    let dim: usize = parts[0].parse().map_err(|e| format_err(1, format!("dim: {e}")))?;
    let h: f64 = parts[1].parse().map_err(|e| format_err(1, format!("h: {e}")))?;
    let r: f64 = parts[2].parse().map_err(|e| format_err(1, format!("R: {e}")))?;
    let spec = &domain.spec;
    if dim != spec.dim || h != spec.h || r != spec.outer_radius {
        return Err(IoError::Mismatch(format!(
            "file is dim={dim} h={h} R={r}; domain is dim={} h={} R={}",
            spec.dim, spec.h, spec.outer_radius
        )));
    }

    let mut values = vec![f64::NAN; domain.node_count()];
    let mut seen = vec![false; domain.node_count()];
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (idx_s, val_s) = line
            .split_once(' ')
            .ok_or_else(|| format_err(lineno + 1, format!("need `index value`, got `{line}`")))?;
        let idx: usize =
            idx_s.parse().map_err(|e| format_err(lineno + 1, format!("index: {e}")))?;
        let val: f64 = val_s.parse().map_err(|e| format_err(lineno + 1, format!("value: {e}")))?;
        if idx >= domain.node_count() {
            return Err(format_err(lineno + 1, format!("index {idx} out of range")));
        }
        if domain.class_of(idx) == NodeClass::Excluded {
            return Err(format_err(lineno + 1, format!("node {idx} is excluded in this domain")));
        }
        if seen[idx] {
            return Err(format_err(lineno + 1, format!("duplicate index {idx}")));
        }
        seen[idx] = true;
        values[idx] = val;
    }
    for idx in domain.live_nodes() {
        if !seen[idx] {
            return Err(IoError::Mismatch(format!("live node {idx} missing from the file")));
        }
    }
    SolutionField::from_values(domain, values).map_err(|e| IoError::Mismatch(e.to_string()))
}

/// Writes the slope-profile series for plotting.
pub fn write_profile_csv(path: &Path, profile: &SlopeProfile) -> Result<(), IoError> {
    let mut out = String::from("r,S_plus,S_minus,lip\n");
    for s in &profile.samples {
        out.push_str(&format!("{},{},{},{}\n", s.r, s.s_plus, s.s_minus, s.lip));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes an h-refinement error series for plotting.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), IoError> {
    let mut out = String::from("h,max_error,iterations,residual_max\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.h, row.max_error, row.iterations, row.residual_max
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Write-then-rename so readers never observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, GridSpec, ObstacleShape, OuterShape};
    use crate::solver::{solve_dirichlet, BoundaryCondition, SolverOptions};

    fn small_domain() -> Arc<Domain> {
        Arc::new(
            build_domain(&GridSpec {
                dim: 2,
                h: 0.25,
                outer_radius: 2.0,
                stencil_width: 1,
                obstacle: ObstacleShape::Ball { radius: 1.0 },
                outer: OuterShape::Ball,
            })
            .unwrap(),
        )
    }

    #[test]
    fn field_files_round_trip_bitwise() {
        let d = small_domain();
        let bc = BoundaryCondition::from_fns(&d, |p| p[0] * 0.3, |p| p[1].sin()).unwrap();
        let u = solve_dirichlet(&d, &bc, &SolverOptions::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.txt");
        write_field(&path, &u).unwrap();
        let v = load_field(&path, &d).unwrap();
        for i in d.live_nodes() {
            assert_eq!(u.values[i].to_bits(), v.values[i].to_bits(), "node {i}");
        }
        // Writing the loaded field reproduces the file byte for byte.
        let path2 = dir.path().join("field2.txt");
        write_field(&path2, &v).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn loader_rejects_mismatched_headers_and_broken_bodies() {
        let d = small_domain();
        let u = SolutionField::from_fn(&d, |p| p[0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.txt");
        write_field(&path, &u).unwrap();

        let other = Arc::new(
            build_domain(&GridSpec {
                dim: 2,
                h: 0.25,
                outer_radius: 2.5,
                stencil_width: 1,
                obstacle: ObstacleShape::Ball { radius: 1.0 },
                outer: OuterShape::Ball,
            })
            .unwrap(),
        );
        assert!(matches!(load_field(&path, &other), Err(IoError::Mismatch(_))));

        let text = fs::read_to_string(&path).unwrap();
        // Drop one body line: a live node goes missing.
        let truncated: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
        fs::write(&path, truncated.join("\n")).unwrap();
        assert!(matches!(load_field(&path, &d), Err(IoError::Mismatch(_))));

        // Corrupt a value: located format error.
        let broken = text.replacen(" 1.", " one.", 1);
        fs::write(&path, broken).unwrap();
        match load_field(&path, &d) {
            Err(IoError::Format { line, .. }) => assert!(line >= 2),
            other => panic!("expected format error, got {other:?}"),
        }

        // Duplicate an entry.
        let mut lines: Vec<&str> = text.lines().collect();
        lines.push(lines[1]);
        fs::write(&path, lines.join("\n")).unwrap();
        match load_field(&path, &d) {
            Err(IoError::Format { message, .. }) => {
                assert!(message.contains("duplicate"), "{message}")
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn csv_series_use_roundtrip_number_formatting() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow { h: 0.1, max_error: 0.03145926, iterations: 209, residual_max: 9.7e-12 },
            SweepRow { h: 0.05, max_error: 1.0 / 3.0, iterations: 896, residual_max: 0.0 },
        ];
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("h,max_error,iterations,residual_max"));
        for (line, row) in lines.zip(&rows) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0].parse::<f64>().unwrap().to_bits(), row.h.to_bits());
            assert_eq!(cols[1].parse::<f64>().unwrap().to_bits(), row.max_error.to_bits());
            assert_eq!(cols[2].parse::<u64>().unwrap(), row.iterations);
            assert_eq!(cols[3].parse::<f64>().unwrap().to_bits(), row.residual_max.to_bits());
        }
    }
}
