//! Discrete energy of the frozen-coefficient problem, its gradient (the
//! weak-form residual against free-node hat functions) and its Hessian.
//!
//! With `ξ = ∇u`, `Q = ⟨Aξ, ξ⟩` and `α = α(x, v(x))` for the frozen `v`:
//!
//! ```text
//! J(u)       = ∫ α/p Q^{p/2} - ∫ f u
//! J'(u)·φ    = ∫ α Q^{(p-2)/2} ⟨Aξ, ∇φ⟩ - ∫ f φ
//! J''(u)     : α [(p-2) Q_ε^{(p-4)/2} (Aξ)(Aξ)ᵀ + Q_ε^{(p-2)/2} A],  Q_ε = Q + ε²
//! ```
//!
//! The regularization `ε` only enters the Hessian.

use std::sync::Arc;

use thiserror::Error;

use crate::coefficients::{sym_apply, sym_quad, AlphaCoefficient, CoefficientError, MatrixField, SourceTerm, Sym2};
use crate::exec;
use crate::geometry::{DiscreteField, FeSpace, CONSTRAINED};
use crate::linalg::CsrMatrix;
use crate::varexp::ExponentField;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error("exponent field was sampled on a different space")]
    SpaceMismatch,
}

/// Everything except the frozen argument of `α`.
#[derive(Debug, Clone)]
pub struct ProblemData {
    space: Arc<FeSpace>,
    exponent: ExponentField,
    matrix: MatrixField,
    matrix_qp: Vec<Sym2>,
    alpha: AlphaCoefficient,
    source: SourceTerm,
    source_qp: Vec<f64>,
    load: Vec<f64>,
}

impl ProblemData {
    pub fn new(
        exponent: ExponentField,
        matrix: MatrixField,
        alpha: AlphaCoefficient,
        source: SourceTerm,
    ) -> Result<ProblemData, AssemblyError> {
        let space = exponent.space().clone();
        let matrix_qp = matrix.sample_checked(&space)?;
        let source_qp = source.sample(&space)?;
        let load = load_vector(&space, &source_qp);
        Ok(ProblemData {
            space,
            exponent,
            matrix,
            matrix_qp,
            alpha,
            source,
            source_qp,
            load,
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn exponent(&self) -> &ExponentField {
        &self.exponent
    }

    pub fn matrix(&self) -> &MatrixField {
        &self.matrix
    }

    pub fn matrix_qp(&self) -> &[Sym2] {
        &self.matrix_qp
    }

    pub fn alpha(&self) -> &AlphaCoefficient {
        &self.alpha
    }

    pub fn source(&self) -> &SourceTerm {
        &self.source
    }

    pub fn source_qp(&self) -> &[f64] {
        &self.source_qp
    }

    /// `∫ f φᵢ` for every free node.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// Fixes the second argument of `α` at `v`.
    pub fn freeze(&self, v: &DiscreteField) -> Result<FrozenProblem<'_>, AssemblyError> {
        if !Arc::ptr_eq(v.space(), &self.space) {
            return Err(AssemblyError::SpaceMismatch);
        }
        let alpha_qp = self.alpha.sample_frozen(&self.space, &v.values_at_qps())?;
        Ok(FrozenProblem { data: self, alpha_qp })
    }

    /// `∫ f u`.
    pub fn source_pairing(&self, u: &DiscreteField) -> f64 {
        u.values_at_qps()
            .iter()
            .zip(&self.source_qp)
            .zip(self.space.qp_weights())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }
}

fn load_vector(space: &FeSpace, f_qp: &[f64]) -> Vec<f64> {
    let nq = space.points_per_element();
    let rule = space.rule();
    let w = space.qp_weights();
    let local = exec::map_range(space.mesh().num_triangles(), |e| {
        let mut out = [0.0; 3];
        for (q, l) in rule.points().iter().enumerate() {
            let k = e * nq + q;
            for a in 0..3 {
                out[a] += w[k] * f_qp[k] * l[a];
            }
        }
        out
    });
    let mut load = vec![0.0; space.num_free()];
    for (e, vals) in local.iter().enumerate() {
        for (a, &node) in space.mesh().triangles()[e].iter().enumerate() {
            let i = space.free_index(node);
            if i != CONSTRAINED {
                load[i] += vals[a];
            }
        }
    }
    load
}

/// Frozen-coefficient problem: `α` evaluated once at `α(x, v(x))`.
#[derive(Debug, Clone)]
pub struct FrozenProblem<'a> {
    data: &'a ProblemData,
    alpha_qp: Vec<f64>,
}

/// Energy value with its gradient over free nodes.
#[derive(Debug, Clone)]
pub struct EnergyEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl<'a> FrozenProblem<'a> {
    pub fn data(&self) -> &'a ProblemData {
        self.data
    }

    pub fn space(&self) -> &'a Arc<FeSpace> {
        &self.data.space
    }

    pub fn alpha_qp(&self) -> &[f64] {
        &self.alpha_qp
    }

    fn check(&self, u: &DiscreteField) {
        assert!(Arc::ptr_eq(u.space(), &self.data.space), "field lives on another space");
    }

    /// `J(u)`.
    pub fn energy(&self, u: &DiscreteField) -> f64 {
        self.check(u);
        let space = &*self.data.space;
        let nq = space.points_per_element();
        let w = space.qp_weights();
        let p = self.data.exponent.values();
        let tris = space.mesh().triangles();
        let points = space.rule().points();
        let vals = u.values();
        exec::sum_range(tris.len(), |e| {
            let g = u.gradient_on_element(e);
            let tri = tris[e];
            let mut s = 0.0;
            for (q, l) in points.iter().enumerate() {
                let k = e * nq + q;
                let quad = sym_quad(&self.data.matrix_qp[k], g);
                let uq = l[0] * vals[tri[0]] + l[1] * vals[tri[1]] + l[2] * vals[tri[2]];
                let stored = if quad > 0.0 {
                    self.alpha_qp[k] / p[k] * quad.powf(0.5 * p[k])
                } else {
                    0.0
                };
                s += w[k] * (stored - self.data.source_qp[k] * uq);
            }
            s
        })
    }

    /// Per-element flux `Σ_q w α Q^{(p-2)/2} A ξ`.
    fn element_flux(&self, e: usize, g: [f64; 2]) -> [f64; 2] {
        let space = &*self.data.space;
        let nq = space.points_per_element();
        let w = space.qp_weights();
        let p = self.data.exponent.values();
        let mut flux = [0.0; 2];
        for q in 0..nq {
            let k = e * nq + q;
            let a = &self.data.matrix_qp[k];
            let quad = sym_quad(a, g);
            if quad <= 0.0 {
                continue;
            }
            let c = w[k] * self.alpha_qp[k] * quad.powf(0.5 * (p[k] - 2.0));
            let ag = sym_apply(a, g);
            flux[0] += c * ag[0];
            flux[1] += c * ag[1];
        }
        flux
    }

    /// `⟨J'(u), φᵢ⟩` for every free node `i`.
    pub fn residual(&self, u: &DiscreteField) -> Vec<f64> {
        self.check(u);
        let space = &*self.data.space;
        let tris = space.mesh().triangles();
        let local = exec::map_range(tris.len(), |e| {
            let flux = self.element_flux(e, u.gradient_on_element(e));
            let grads = space.basis_gradients(e);
            [0, 1, 2].map(|a| flux[0] * grads[a][0] + flux[1] * grads[a][1])
        });
        let mut r: Vec<f64> = self.data.load.iter().map(|l| -l).collect();
        for (e, vals) in local.iter().enumerate() {
            for (a, &node) in tris[e].iter().enumerate() {
                let i = space.free_index(node);
                if i != CONSTRAINED {
                    r[i] += vals[a];
                }
            }
        }
        r
    }

    pub fn evaluate(&self, u: &DiscreteField) -> EnergyEvaluation {
        EnergyEvaluation {
            value: self.energy(u),
            gradient: self.residual(u),
        }
    }

    /// Hessian over free nodes with the curvature regularized by `eps_reg`.
    pub fn hessian(&self, u: &DiscreteField, eps_reg: f64) -> CsrMatrix {
        self.check(u);
        let space = &*self.data.space;
        let nq = space.points_per_element();
        let w = space.qp_weights();
        let p = self.data.exponent.values();
        let eps2 = eps_reg * eps_reg;
        let local = exec::map_range(space.mesh().num_triangles(), |e| {
            let g = u.gradient_on_element(e);
            // Accumulate the 2x2 symmetric tangent [m11, m12, m22].
            let mut m = [0.0; 3];
            for q in 0..nq {
                let k = e * nq + q;
                let a = &self.data.matrix_qp[k];
                let qr = sym_quad(a, g) + eps2;
                if qr <= 0.0 {
                    continue;
                }
                let c = w[k] * self.alpha_qp[k];
                let iso = c * qr.powf(0.5 * (p[k] - 2.0));
                for (mi, ai) in m.iter_mut().zip(a) {
                    *mi += iso * ai;
                }
                let ag = sym_apply(a, g);
                if p[k] != 2.0 && (ag[0] != 0.0 || ag[1] != 0.0) {
                    let aniso = c * (p[k] - 2.0) * qr.powf(0.5 * (p[k] - 4.0));
                    m[0] += aniso * ag[0] * ag[0];
                    m[1] += aniso * ag[0] * ag[1];
                    m[2] += aniso * ag[1] * ag[1];
                }
            }
            let grads = space.basis_gradients(e);
            let mut block = [0.0; 9];
            for a in 0..3 {
                let mg = sym_apply(&m, grads[a]);
                for b in 0..3 {
                    block[3 * a + b] = mg[0] * grads[b][0] + mg[1] * grads[b][1];
                }
            }
            block
        });
        let mut h = space.pattern().clone();
        let vals = h.values_mut();
        for (e, block) in local.iter().enumerate() {
            for (slot, v) in space.element_slots(e).iter().zip(block) {
                if *slot != CONSTRAINED {
                    vals[*slot] += v;
                }
            }
        }
        h
    }
}

/// P1 stiffness matrix `∫ ∇φᵢ·∇φⱼ` over free nodes.
pub fn stiffness_matrix(space: &FeSpace) -> CsrMatrix {
    let mut k = space.pattern().clone();
    let vals = k.values_mut();
    for e in 0..space.mesh().num_triangles() {
        let area = space.mesh().element_areas()[e];
        let g = space.basis_gradients(e);
        for (ab, slot) in space.element_slots(e).iter().enumerate() {
            if *slot != CONSTRAINED {
                let (a, b) = (ab / 3, ab % 3);
                vals[*slot] += area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    k
}

/// Consistent P1 mass matrix `∫ φᵢ φⱼ` over free nodes.
pub fn mass_matrix(space: &FeSpace) -> CsrMatrix {
    let mut m = space.pattern().clone();
    let vals = m.values_mut();
    for e in 0..space.mesh().num_triangles() {
        let area = space.mesh().element_areas()[e];
        for (ab, slot) in space.element_slots(e).iter().enumerate() {
            if *slot != CONSTRAINED {
                let diag = ab / 3 == ab % 3;
                vals[*slot] += area * if diag { 1.0 / 6.0 } else { 1.0 / 12.0 };
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::structured_square_mesh;
    use crate::varexp::ExponentMode;

    fn data(n: usize, p: f64, f: f64) -> ProblemData {
        let space = FeSpace::new(structured_square_mesh(n), 4).unwrap();
        let mode = if p == 2.0 { ExponentMode::Diagnostic } else { ExponentMode::Solver };
        ProblemData::new(
            ExponentField::constant(&space, p, mode).unwrap(),
            MatrixField::identity(),
            AlphaCoefficient::constant(1.0),
            SourceTerm::constant(f),
        )
        .unwrap()
    }

    #[test]
    fn zero_field() {
        let d = data(4, 3.0, 1.0);
        let v = DiscreteField::zeros(d.space());
        let fp = d.freeze(&v).unwrap();
        let u = DiscreteField::zeros(d.space());
        assert_eq!(fp.energy(&u), 0.0);
        let r = fp.residual(&u);
        for (ri, li) in r.iter().zip(d.load()) {
            assert_eq!(*ri, -li);
        }
        let d0 = data(4, 3.0, 0.0);
        let fp0 = d0.freeze(&DiscreteField::zeros(d0.space())).unwrap();
        assert!(fp0.residual(&DiscreteField::zeros(d0.space())).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn energy_of_center_hat_matches_elementwise_sum() {
        let d = data(2, 4.0, 0.0);
        let space = d.space();
        let fp = d.freeze(&DiscreteField::zeros(space)).unwrap();
        let mut vals = vec![0.0; space.mesh().num_nodes()];
        vals[4] = 1.0;
        let hat = DiscreteField::from_values(space, vals);
        // Oracle: per-element gradient from the edge-difference system.
        let m = space.mesh();
        let oracle: f64 = (0..m.num_triangles())
            .map(|e| {
                let v = m.vertices(e);
                let t = m.triangles()[e];
                let val = |k: usize| hat.values()[t[k]];
                let (d1, d2) = ([v[1][0] - v[0][0], v[1][1] - v[0][1]], [v[2][0] - v[0][0], v[2][1] - v[0][1]]);
                let (b1, b2) = (val(1) - val(0), val(2) - val(0));
                let det = d1[0] * d2[1] - d1[1] * d2[0];
                let g = [(b1 * d2[1] - b2 * d1[1]) / det, (d1[0] * b2 - d2[0] * b1) / det];
                m.element_areas()[e] / 4.0 * (g[0] * g[0] + g[1] * g[1]).powi(2)
            })
            .sum();
        assert!((fp.energy(&hat) - oracle).abs() < 1e-13);
        // Four triangles with |∇u| = 2 and two with |∇u| = 2√2.
        assert!((oracle - 6.0).abs() < 1e-13);
    }

    #[test]
    fn linear_case_hessian_is_stiffness() {
        let d = data(5, 2.0, 1.0);
        let space = d.space();
        let fp = d.freeze(&DiscreteField::zeros(space)).unwrap();
        let u = DiscreteField::interpolate(space, |x, y| x * (1.0 - x) * y * (1.0 - y) * 3.0);
        let h = fp.hessian(&u, 1e-8);
        let k = stiffness_matrix(space);
        for (a, b) in h.values().iter().zip(k.values()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
        assert_eq!(h.asymmetry(), 0.0);
    }

    #[test]
    fn mass_matrix_integrates_constants() {
        let space = FeSpace::new(structured_square_mesh(1).refine_uniform(), 4).unwrap();
        let m = mass_matrix(&space);
        // Only the center node is free; it touches six triangles of area 1/8,
        // each contributing area/6 on the diagonal.
        assert_eq!(m.dim(), 1);
        assert!((m.values()[0] - 0.125).abs() < 1e-15);
    }
}
