//! Compressed sparse row storage and an envelope Cholesky factorization
//! with reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

/// Square sparse matrix in CSR format with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero matrix with the given sparsity; `rows[i]` lists the
    /// column indices of row `i` (duplicates allowed).
    pub fn from_pattern(n: usize, rows: &[Vec<usize>]) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows.iter().take(n) {
            let mut cols = row.clone();
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend(cols);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Position of entry `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, a)| a * x[j]).sum())
            .collect()
    }

    /// Largest absolute difference between `A` and `Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, a) in self.row(i) {
                row[j] += a;
            }
        }
        d
    }
}

/// Reverse Cuthill-McKee ordering of the matrix graph. Returns `perm` with
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    while order.len() < n {
        // Start each component from an unvisited node of minimum degree.
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .expect("unvisited node exists");
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            let mut nbrs: Vec<usize> = a
                .row(i)
                .map(|(j, _)| j)
                .filter(|&j| !visited[j])
                .collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Symbolic part of the envelope factorization, reusable for every matrix
/// sharing one sparsity pattern.
#[derive(Debug, Clone)]
pub struct EnvelopeSymbolic {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first_col: Vec<usize>,
    row_start: Vec<usize>,
}

impl EnvelopeSymbolic {
    pub fn new(a: &CsrMatrix) -> EnvelopeSymbolic {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first_col: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv_perm[old_i];
            for (old_j, _) in a.row(old_i) {
                let j = inv_perm[old_j];
                if j < i {
                    first_col[i] = first_col[i].min(j);
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for i in 0..n {
            let len = i - first_col[i] + 1;
            row_start.push(row_start[i] + len);
        }
        EnvelopeSymbolic {
            perm,
            inv_perm,
            first_col,
            row_start,
        }
    }

    pub fn envelope_size(&self) -> usize {
        *self.row_start.last().unwrap_or(&0)
    }

    pub fn factor(&self, a: &CsrMatrix) -> Result<EnvelopeCholesky, LinalgError> {
        let n = self.perm.len();
        if a.dim() != n {
            return Err(LinalgError::Dimension {
                expected: n,
                found: a.dim(),
            });
        }
        let mut l = vec![0.0; self.envelope_size()];
        // Scatter the lower triangle of the permuted matrix into the envelope.
        for old_i in 0..n {
            let i = self.inv_perm[old_i];
            for (old_j, v) in a.row(old_i) {
                let j = self.inv_perm[old_j];
                if j <= i {
                    l[self.row_start[i] + j - self.first_col[i]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = self.first_col[i];
            let ri = self.row_start[i];
            for j in fi..i {
                let fj = self.first_col[j];
                let rj = self.row_start[j];
                let k0 = fi.max(fj);
                let mut s = l[ri + j - fi];
                for k in k0..j {
                    s -= l[ri + k - fi] * l[rj + k - fj];
                }
                l[ri + j - fi] = s / l[rj + j - fj];
            }
            let mut d = l[ri + i - fi];
            for k in fi..i {
                let v = l[ri + k - fi];
                d -= v * v;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite {
                    row: self.perm[i],
                    pivot: d,
                });
            }
            l[ri + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            symbolic: self.clone(),
            l,
        })
    }
}

/// `P A Pᵀ = L Lᵀ` with `L` stored row-wise inside its envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    symbolic: EnvelopeSymbolic,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<EnvelopeCholesky, LinalgError> {
        EnvelopeSymbolic::new(a).factor(a)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        let n = s.perm.len();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = s.first_col[i];
            let ri = s.row_start[i];
            let mut v = y[i];
            for k in fi..i {
                v -= self.l[ri + k - fi] * y[k];
            }
            y[i] = v / self.l[ri + i - fi];
        }
        for i in (0..n).rev() {
            let fi = s.first_col[i];
            let ri = s.row_start[i];
            y[i] /= self.l[ri + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.l[ri + k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D Laplacian with a shuffled numbering so the ordering has work to do.
    fn shuffled_laplacian(n: usize) -> (CsrMatrix, Vec<usize>) {
        let label: Vec<usize> = (0..n).map(|i| (i * 7) % n).collect();
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            let li = label[i];
            rows[li].push(li);
            if i > 0 {
                rows[li].push(label[i - 1]);
            }
            if i + 1 < n {
                rows[li].push(label[i + 1]);
            }
        }
        let mut a = CsrMatrix::from_pattern(n, &rows);
        for i in 0..n {
            let li = label[i];
            let k = a.position(li, li).unwrap();
            a.values_mut()[k] = 2.0;
            for nb in [i.wrapping_sub(1), i + 1] {
                if nb < n {
                    let k = a.position(li, label[nb]).unwrap();
                    a.values_mut()[k] = -1.0;
                }
            }
        }
        (a, label)
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let n = 50;
        let (a, _) = shuffled_laplacian(n);
        assert_eq!(a.asymmetry(), 0.0);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let b = a.mul_vec(&x_true);
        let chol = EnvelopeCholesky::factor(&a).unwrap();
        let x = chol.solve(&b);
        let err = x.iter().zip(&x_true).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn rcm_recovers_narrow_band() {
        let (a, _) = shuffled_laplacian(40);
        let sym = EnvelopeSymbolic::new(&a);
        // A path graph has a bandwidth-1 ordering: envelope = 2n - 1.
        assert_eq!(sym.envelope_size(), 2 * 40 - 1);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = CsrMatrix::from_pattern(2, &[vec![0, 1], vec![0, 1]]);
        a.values_mut().copy_from_slice(&[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            EnvelopeCholesky::factor(&a),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }
}
