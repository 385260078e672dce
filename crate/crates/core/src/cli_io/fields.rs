//! Nodal field files: CSV (`x,y,u`, 17 significant digits) and legacy
//! ASCII VTK unstructured grids.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::geometry::{DiscreteField, FeSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    Csv,
    Vtk,
}

impl FieldFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FieldFormat::Csv => "csv",
            FieldFormat::Vtk => "vtk",
        }
    }
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {found} rows for a mesh with {expected} nodes")]
    NodeCount { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: row {row} at ({x}, {y}) does not match mesh node ({mx}, {my})")]
    Coordinates {
        path: PathBuf,
        row: usize,
        x: f64,
        y: f64,
        mx: f64,
        my: f64,
    },
}

pub fn field_to_csv(field: &DiscreteField) -> String {
    let mut out = String::from("x,y,u\n");
    for (p, u) in field.space().mesh().nodes().iter().zip(field.values()) {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", p[0], p[1], u);
    }
    out
}

pub fn field_to_vtk(field: &DiscreteField, title: &str) -> String {
    let mesh = field.space().mesh();
    let (n, m) = (mesh.num_nodes(), mesh.num_triangles());
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {n} double");
    for p in mesh.nodes() {
        let _ = writeln!(out, "{:.16e} {:.16e} 0", p[0], p[1]);
    }
    let _ = writeln!(out, "CELLS {m} {}", 4 * m);
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {m}");
    for _ in 0..m {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "POINT_DATA {n}\nSCALARS u double 1\nLOOKUP_TABLE default");
    for u in field.values() {
        let _ = writeln!(out, "{u:.16e}");
    }
    out
}

pub fn write_field(field: &DiscreteField, format: FieldFormat, path: &Path) -> Result<(), FieldError> {
    let text = match format {
        FieldFormat::Csv => field_to_csv(field),
        FieldFormat::Vtk => field_to_vtk(field, "apx nodal field u"),
    };
    std::fs::write(path, text).map_err(|source| FieldError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a CSV written by [`write_field`] back onto `space`, checking that
/// rows and mesh nodes correspond.
pub fn read_field_csv(path: &Path, space: &Arc<FeSpace>) -> Result<DiscreteField, FieldError> {
    let text = std::fs::read_to_string(path).map_err(|source| FieldError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| FieldError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,u" => {}
        _ => return Err(parse_err(1, "expected header `x,y,u`".into())),
    }
    let nodes = space.mesh().nodes();
    let mut values = Vec::with_capacity(nodes.len());
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_err(k + 1, format!("expected 3 columns, found {}", cols.len())));
        }
        let mut nums = [0.0; 3];
        for (slot, c) in nums.iter_mut().zip(&cols) {
            *slot = c.parse().map_err(|_| parse_err(k + 1, format!("not a number: {c:?}")))?;
        }
        let row = values.len();
        if let Some(node) = nodes.get(row) {
            let tol = 1e-12 * (1.0 + node[0].abs().max(node[1].abs()));
            if (nums[0] - node[0]).abs() > tol || (nums[1] - node[1]).abs() > tol {
                return Err(FieldError::Coordinates {
                    path: path.to_path_buf(),
                    row,
                    x: nums[0],
                    y: nums[1],
                    mx: node[0],
                    my: node[1],
                });
            }
        }
        values.push(nums[2]);
    }
    if values.len() != nodes.len() {
        return Err(FieldError::NodeCount {
            path: path.to_path_buf(),
            expected: nodes.len(),
            found: values.len(),
        });
    }
    Ok(DiscreteField::from_values(space, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::structured_square_mesh;

    #[test]
    fn zero_field_csv() {
        let space = FeSpace::new(structured_square_mesh(1), 1).unwrap();
        let csv = field_to_csv(&DiscreteField::zeros(&space));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "x,y,u");
        assert!(lines[1..].iter().all(|l| l.ends_with(",0.0000000000000000e0")));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let space = FeSpace::new(structured_square_mesh(5), 1).unwrap();
        let u = DiscreteField::interpolate(&space, |x, y| (x * 7.3).sin() / 3.0 + y.exp() * 1e-7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        write_field(&u, FieldFormat::Csv, &path).unwrap();
        let back = read_field_csv(&path, &space).unwrap();
        assert_eq!(u, back);
    }

    #[test]
    fn csv_shape_mismatch_rejected() {
        let small = FeSpace::new(structured_square_mesh(2), 1).unwrap();
        let big = FeSpace::new(structured_square_mesh(3), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        write_field(&DiscreteField::zeros(&small), FieldFormat::Csv, &path).unwrap();
        assert!(read_field_csv(&path, &big).is_err());
    }

    #[test]
    fn vtk_cell_types() {
        let space = FeSpace::new(structured_square_mesh(3), 1).unwrap();
        let vtk = field_to_vtk(&DiscreteField::zeros(&space), "t");
        let lines: Vec<&str> = vtk.lines().collect();
        let at = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
        assert_eq!(lines[at], "CELL_TYPES 18");
        assert!(lines[at + 1..at + 19].iter().all(|l| *l == "5"));
        assert!(vtk.contains("POINTS 16 double\n"));
        assert!(vtk.contains("CELLS 18 72\n"));
        assert!(vtk.contains("SCALARS u double 1\n"));
    }
}
