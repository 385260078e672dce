//! Triangle meshes, quadrature on triangles, and the P1 finite-element space
//! with homogeneous Dirichlet constraints.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::linalg::{CsrMatrix, EnvelopeSymbolic};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {triangle} references node {index}, but the mesh has {nodes} nodes")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        nodes: usize,
    },
    #[error("triangle {triangle} has non-positive signed area {area:e}")]
    NonPositiveArea { triangle: usize, area: f64 },
    #[error("edge ({a}, {b}) is not conforming: {reason}")]
    NonConforming { a: usize, b: usize, reason: String },
    #[error("node {node} lies inside boundary edge ({a}, {b}) (hanging node)")]
    HangingNode { node: usize, a: usize, b: usize },
    #[error("node {0} is not referenced by any triangle")]
    UnusedNode(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("quadrature degree {0} is not supported (maximum 5)")]
    QuadratureDegree(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Conforming, counter-clockwise triangulation of a 2D polygonal domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    areas: Vec<f64>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Validates and builds a mesh. Boundary nodes are the endpoints of
    /// edges owned by exactly one triangle.
    pub fn new(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Mesh, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let n = nodes.len();
        let mut used = vec![false; n];
        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        nodes: n,
                    });
                }
                used[i] = true;
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(MeshError::NonPositiveArea { triangle: t, area });
            }
            areas.push(area);
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(MeshError::UnusedNode(i));
        }

        // Directed edge -> owner count. A shared interior edge must appear once
        // in each direction.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut boundary_edges = Vec::new();
        for (&(a, b), &count) in &directed {
            if count > 1 {
                return Err(MeshError::NonConforming {
                    a,
                    b,
                    reason: "edge traversed twice in the same direction (overlap or inconsistent orientation)".into(),
                });
            }
            if !directed.contains_key(&(b, a)) {
                boundary_edges.push((a, b));
            }
        }
        boundary_edges.sort_unstable();

        let mut boundary = vec![false; n];
        for &(a, b) in &boundary_edges {
            boundary[a] = true;
            boundary[b] = true;
        }

        // A hanging node shows up as a boundary-edge node sitting strictly
        // inside another boundary edge.
        let bnodes: Vec<usize> = (0..n).filter(|&i| boundary[i]).collect();
        for &(a, b) in &boundary_edges {
            let (pa, pb) = (nodes[a], nodes[b]);
            let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
            for &c in &bnodes {
                if c == a || c == b {
                    continue;
                }
                let pc = nodes[c];
                let cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
                if cross.abs() > 1e-12 * len2 {
                    continue;
                }
                let t = ((pc[0] - pa[0]) * (pb[0] - pa[0]) + (pc[1] - pa[1]) * (pb[1] - pa[1])) / len2;
                if t > 1e-12 && t < 1.0 - 1e-12 {
                    return Err(MeshError::HangingNode { node: c, a, b });
                }
            }
        }

        Ok(Mesh {
            nodes,
            triangles,
            boundary,
            areas,
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn element_areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Longest edge over all triangles.
    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in 0..self.num_triangles() {
            let v = self.vertices(t);
            for k in 0..3 {
                let (p, q) = (v[k], v[(k + 1) % 3]);
                h = h.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        h
    }

    /// Smallest interior angle in degrees.
    pub fn min_angle_degrees(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for t in 0..self.num_triangles() {
            let v = self.vertices(t);
            for k in 0..3 {
                let (p, q, r) = (v[k], v[(k + 1) % 3], v[(k + 2) % 3]);
                let u = [q[0] - p[0], q[1] - p[1]];
                let w = [r[0] - p[0], r[1] - p[1]];
                let c = (u[0] * w[0] + u[1] * w[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (w[0] * w[0] + w[1] * w[1]).sqrt());
                worst = worst.min(c.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        worst
    }

    /// Uniform red refinement: every triangle is split into four by its edge
    /// midpoints. Existing nodes keep their indices.
    pub fn refine_uniform(&self) -> Mesh {
        let mut nodes = self.nodes.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut nodes);
            let bc = mid(b, c, &mut nodes);
            let ca = mid(c, a, &mut nodes);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Mesh::new(nodes, triangles).expect("red refinement preserves conformity")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
        Mesh::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, message: String| MeshError::Parse { line, message };
        let last_line = text.lines().count();

        let mut header = |keyword: &str| -> Result<usize, MeshError> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(last_line, format!("missing `{keyword}` header")))?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(keyword) {
                return Err(err(ln, format!("expected `{keyword} <count>`")));
            }
            parts
                .next()
                .and_then(|c| c.parse().ok())
                .filter(|_| parts.next().is_none())
                .ok_or_else(|| err(ln, format!("expected `{keyword} <count>`")))
        };
        let n_nodes = header("nodes")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(last_line, "unexpected end of file in node list".into()))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
            if vals.len() != 2 || !vals.iter().all(|v| v.is_finite()) {
                return Err(err(ln, "expected two finite coordinates `x y`".into()));
            }
            nodes.push([vals[0], vals[1]]);
        }
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_line, "missing `triangles` header".into()))?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some("triangles") {
            return Err(err(ln, "expected `triangles <count>`".into()));
        }
        let n_tri: usize = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err(ln, "expected `triangles <count>`".into()))?;
        let mut triangles = Vec::with_capacity(n_tri);
        for _ in 0..n_tri {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(last_line, "unexpected end of file in triangle list".into()))?;
            let idx: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(ln, format!("bad node index: {e}")))?;
            if idx.len() != 3 {
                return Err(err(ln, "expected three node indices `i j k`".into()));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content after triangle list".into()));
        }
        Mesh::new(nodes, triangles)
    }
}

/// Unit square split into `n × n` cells, each cut along its SW–NE diagonal.
pub fn structured_square_mesh(n: usize) -> Mesh {
    assert!(n >= 1, "structured_square_mesh needs n >= 1");
    let m = n + 1;
    let h = 1.0 / n as f64;
    let nodes = (0..m)
        .flat_map(|j| (0..m).map(move |i| [i as f64 * h, j as f64 * h]))
        .map(|[x, y]| [x.min(1.0), y.min(1.0)])
        .collect();
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let sw = j * m + i;
            let se = sw + 1;
            let nw = sw + m;
            let ne = nw + 1;
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }
    Mesh::new(nodes, triangles).expect("structured mesh is valid")
}

/// Fan triangulation of the regular `n_boundary`-gon inscribed in the unit
/// circle, refined `refinement` times with boundary nodes pushed back onto
/// the circle after each pass.
pub fn polygonal_disk_mesh(n_boundary: usize, refinement: usize) -> Mesh {
    assert!(n_boundary >= 8, "polygonal_disk_mesh needs n_boundary >= 8");
    let mut nodes = vec![[0.0, 0.0]];
    for k in 0..n_boundary {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n_boundary as f64;
        nodes.push([theta.cos(), theta.sin()]);
    }
    let triangles = (0..n_boundary)
        .map(|k| [0, 1 + k, 1 + (k + 1) % n_boundary])
        .collect();
    let mut mesh = Mesh::new(nodes, triangles).expect("fan mesh is valid");
    for _ in 0..refinement {
        let refined = mesh.refine_uniform();
        let mut nodes = refined.nodes.clone();
        for (i, p) in nodes.iter_mut().enumerate() {
            if refined.boundary[i] {
                let r = p[0].hypot(p[1]);
                *p = [p[0] / r, p[1] / r];
            }
        }
        mesh = Mesh::new(nodes, refined.triangles).expect("projection keeps triangles valid");
    }
    mesh
}

/// Symmetric quadrature rule on the reference triangle in barycentric form.
/// Weights sum to one; they are scaled by the element area on use.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    degree: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

fn orbit3(a: f64, w: f64, pts: &mut Vec<[f64; 3]>, wts: &mut Vec<f64>) {
    let b = 1.0 - 2.0 * a;
    for p in [[b, a, a], [a, b, a], [a, a, b]] {
        pts.push(p);
        wts.push(w);
    }
}

impl QuadratureRule {
    /// Smallest built-in rule of at least the requested degree.
    pub fn with_degree(degree: usize) -> Result<QuadratureRule, MeshError> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let exact = match degree {
            0 | 1 => {
                points.push([1.0 / 3.0; 3]);
                weights.push(1.0);
                1
            }
            2 => {
                orbit3(1.0 / 6.0, 1.0 / 3.0, &mut points, &mut weights);
                2
            }
            3 | 4 => {
                orbit3(0.445948490915965, 0.223381589678011, &mut points, &mut weights);
                orbit3(0.091576213509771, 0.109951743655322, &mut points, &mut weights);
                4
            }
            5 => {
                points.push([1.0 / 3.0; 3]);
                weights.push(0.225);
                orbit3(0.470142064105115, 0.132394152788506, &mut points, &mut weights);
                orbit3(0.101286507323456, 0.125939180544827, &mut points, &mut weights);
                5
            }
            d => return Err(MeshError::QuadratureDegree(d)),
        };
        Ok(QuadratureRule {
            degree: exact,
            points,
            weights,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integral of `f` over a triangle given by its vertices.
    pub fn integrate(&self, v: [[f64; 2]; 3], f: impl Fn(f64, f64) -> f64) -> f64 {
        let area = signed_area(v[0], v[1], v[2]).abs();
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| {
                let x = l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0];
                let y = l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1];
                w * f(x, y)
            })
            .sum::<f64>()
            * area
    }
}

/// Marker for nodes without a free degree of freedom.
pub const CONSTRAINED: usize = usize::MAX;

/// P1 space on a mesh with cached quadrature data and the free-node sparsity
/// pattern. Quadrature points are stored element-major: point `q` of element
/// `e` lives at `e * rule.len() + q`.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Mesh,
    rule: QuadratureRule,
    qp_coords: Vec<[f64; 2]>,
    qp_weights: Vec<f64>,
    basis_grads: Vec<[[f64; 2]; 3]>,
    free_of: Vec<usize>,
    free_nodes: Vec<usize>,
    pattern: CsrMatrix,
    element_slots: Vec<[usize; 9]>,
    symbolic: OnceLock<EnvelopeSymbolic>,
}

impl FeSpace {
    pub fn new(mesh: Mesh, quadrature_degree: usize) -> Result<Arc<FeSpace>, MeshError> {
        let rule = QuadratureRule::with_degree(quadrature_degree)?;
        let nq = rule.len();
        let ne = mesh.num_triangles();
        let mut qp_coords = Vec::with_capacity(ne * nq);
        let mut qp_weights = Vec::with_capacity(ne * nq);
        let mut basis_grads = Vec::with_capacity(ne);
        for e in 0..ne {
            let v = mesh.vertices(e);
            let area = mesh.areas[e];
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                qp_coords.push([
                    l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
                    l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
                ]);
                qp_weights.push(w * area);
            }
            let a2 = 2.0 * area;
            basis_grads.push([
                [(v[1][1] - v[2][1]) / a2, (v[2][0] - v[1][0]) / a2],
                [(v[2][1] - v[0][1]) / a2, (v[0][0] - v[2][0]) / a2],
                [(v[0][1] - v[1][1]) / a2, (v[1][0] - v[0][0]) / a2],
            ]);
        }

        let mut free_of = vec![CONSTRAINED; mesh.num_nodes()];
        let mut free_nodes = Vec::new();
        for i in 0..mesh.num_nodes() {
            if !mesh.boundary[i] {
                free_of[i] = free_nodes.len();
                free_nodes.push(i);
            }
        }
        let nf = free_nodes.len();
        let mut rows = vec![Vec::new(); nf];
        for tri in &mesh.triangles {
            for &a in tri {
                for &b in tri {
                    if free_of[a] != CONSTRAINED && free_of[b] != CONSTRAINED {
                        rows[free_of[a]].push(free_of[b]);
                    }
                }
            }
        }
        let pattern = CsrMatrix::from_pattern(nf, &rows);
        let element_slots = mesh
            .triangles
            .iter()
            .map(|tri| {
                let mut slots = [CONSTRAINED; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        let (fa, fb) = (free_of[tri[a]], free_of[tri[b]]);
                        if fa != CONSTRAINED && fb != CONSTRAINED {
                            slots[3 * a + b] = pattern.position(fa, fb).expect("in pattern");
                        }
                    }
                }
                slots
            })
            .collect();

        Ok(Arc::new(FeSpace {
            mesh,
            rule,
            qp_coords,
            qp_weights,
            basis_grads,
            free_of,
            free_nodes,
            pattern,
            element_slots,
            symbolic: OnceLock::new(),
        }))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn points_per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn num_qps(&self) -> usize {
        self.qp_coords.len()
    }

    pub fn qp_coords(&self) -> &[[f64; 2]] {
        &self.qp_coords
    }

    /// Quadrature weights including the element area.
    pub fn qp_weights(&self) -> &[f64] {
        &self.qp_weights
    }

    /// Gradients of the three barycentric basis functions of element `e`.
    pub fn basis_gradients(&self, e: usize) -> &[[f64; 2]; 3] {
        &self.basis_grads[e]
    }

    pub fn num_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    /// Free index of a node, or [`CONSTRAINED`].
    pub fn free_index(&self, node: usize) -> usize {
        self.free_of[node]
    }

    /// Zero-valued matrix with the P1 sparsity pattern over free nodes.
    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// Value-array positions of the 3×3 element block inside [`Self::pattern`],
    /// row-major, [`CONSTRAINED`] where a row or column is a Dirichlet node.
    pub fn element_slots(&self, e: usize) -> &[usize; 9] {
        &self.element_slots[e]
    }

    /// Fill-reducing ordering and envelope of [`Self::pattern`], computed once.
    pub fn symbolic_factorization(&self) -> &EnvelopeSymbolic {
        self.symbolic.get_or_init(|| EnvelopeSymbolic::new(&self.pattern))
    }

    /// Evaluates `f(x, y)` at every quadrature point.
    pub fn sample_qps<T>(&self, f: impl Fn(f64, f64) -> T) -> Vec<T> {
        self.qp_coords.iter().map(|p| f(p[0], p[1])).collect()
    }
}

/// P1 finite-element function: one value per mesh node.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    space: Arc<FeSpace>,
    values: Vec<f64>,
}

impl PartialEq for DiscreteField {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.space, &other.space) && self.values == other.values
    }
}

impl DiscreteField {
    pub fn zeros(space: &Arc<FeSpace>) -> DiscreteField {
        DiscreteField {
            space: space.clone(),
            values: vec![0.0; space.mesh.num_nodes()],
        }
    }

    pub fn from_values(space: &Arc<FeSpace>, values: Vec<f64>) -> DiscreteField {
        assert_eq!(values.len(), space.mesh.num_nodes(), "one value per node");
        DiscreteField {
            space: space.clone(),
            values,
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(space: &Arc<FeSpace>, f: impl Fn(f64, f64) -> f64) -> DiscreteField {
        let values = space.mesh.nodes.iter().map(|p| f(p[0], p[1])).collect();
        DiscreteField {
            space: space.clone(),
            values,
        }
    }

    /// Field with the given free-node values and zeros on the boundary.
    pub fn from_free(space: &Arc<FeSpace>, free: &[f64]) -> DiscreteField {
        assert_eq!(free.len(), space.num_free());
        let mut values = vec![0.0; space.mesh.num_nodes()];
        for (k, &node) in space.free_nodes.iter().enumerate() {
            values[node] = free[k];
        }
        DiscreteField {
            space: space.clone(),
            values,
        }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.space.free_nodes.iter().map(|&i| self.values[i]).collect()
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        self.space.mesh.boundary_mask()
    }

    /// True if the field vanishes on every Dirichlet node.
    pub fn satisfies_dirichlet(&self) -> bool {
        self.values
            .iter()
            .zip(self.dirichlet_mask())
            .all(|(&v, &b)| !b || v == 0.0)
    }

    /// Constant gradient of the linear interpolant on triangle `e`.
    pub fn gradient_on_element(&self, e: usize) -> [f64; 2] {
        let tri = self.space.mesh.triangles[e];
        let g = &self.space.basis_grads[e];
        let mut out = [0.0; 2];
        for k in 0..3 {
            let u = self.values[tri[k]];
            out[0] += u * g[k][0];
            out[1] += u * g[k][1];
        }
        out
    }

    pub fn element_gradients(&self) -> Vec<[f64; 2]> {
        (0..self.space.mesh.num_triangles())
            .map(|e| self.gradient_on_element(e))
            .collect()
    }

    /// Values at all quadrature points (element-major).
    pub fn values_at_qps(&self) -> Vec<f64> {
        let rule = &self.space.rule;
        let mut out = Vec::with_capacity(self.space.num_qps());
        for tri in &self.space.mesh.triangles {
            let (a, b, c) = (self.values[tri[0]], self.values[tri[1]], self.values[tri[2]]);
            for l in &rule.points {
                out.push(l[0] * a + l[1] * b + l[2] * c);
            }
        }
        out
    }

    fn check_space(&self, other: &DiscreteField) {
        assert!(
            Arc::ptr_eq(&self.space, &other.space),
            "fields live on different spaces"
        );
    }

    pub fn scaled(&self, t: f64) -> DiscreteField {
        DiscreteField {
            space: self.space.clone(),
            values: self.values.iter().map(|v| t * v).collect(),
        }
    }

    /// `self + t * other`.
    pub fn add_scaled(&self, t: f64, other: &DiscreteField) -> DiscreteField {
        self.check_space(other);
        DiscreteField {
            space: self.space.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + t * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &DiscreteField) -> DiscreteField {
        self.add_scaled(-1.0, other)
    }

    /// `(1 - theta) * self + theta * other`.
    pub fn lerp(&self, theta: f64, other: &DiscreteField) -> DiscreteField {
        self.check_space(other);
        DiscreteField {
            space: self.space.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::norm_inf(&self.values)
    }
}

/// Scalar samples on a uniform rectilinear grid, read back by bilinear
/// interpolation. Points outside the grid are clamped to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    origin: [f64; 2],
    spacing: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl GridField {
    /// `values[j * nx + i]` is the sample at `origin + spacing * (i, j)`.
    pub fn new(origin: [f64; 2], spacing: f64, nx: usize, ny: usize, values: Vec<f64>) -> GridField {
        assert!(nx >= 2 && ny >= 2 && values.len() == nx * ny && spacing > 0.0);
        GridField {
            origin,
            spacing,
            nx,
            ny,
            values,
        }
    }

    pub fn sample_grid(
        origin: [f64; 2],
        spacing: f64,
        nx: usize,
        ny: usize,
        f: impl Fn(f64, f64) -> f64 + Sync + Send,
    ) -> GridField {
        let values = crate::exec::map_range(nx * ny, |k| {
            let (i, j) = (k % nx, k / nx);
            f(origin[0] + spacing * i as f64, origin[1] + spacing * j as f64)
        });
        GridField::new(origin, spacing, nx, ny, values)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + self.spacing * i as f64,
            self.origin[1] + self.spacing * j as f64,
        ]
    }

    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin[0]) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin[1]) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (s, t) = (fx - i as f64, fy - j as f64);
        (1.0 - s) * (1.0 - t) * self.at(i, j)
            + s * (1.0 - t) * self.at(i + 1, j)
            + (1.0 - s) * t * self.at(i, j + 1)
            + s * t * self.at(i + 1, j + 1)
    }
}
