use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use super::OcclusionError;

/// Symmetric sparse matrix in compressed column form (both triangles stored).
#[derive(Debug, Clone)]
pub struct SparseSym {
    mat: CsMat<f64>,
}

/// LDLᵀ factorisation with a fill-reducing ordering.
pub struct Factor {
    ldl: LdlNumeric<f64, usize>,
}

impl Factor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.ldl.solve(rhs)
    }
}

impl SparseSym {
    /// Sums duplicate `(i, j, v)` entries. The caller supplies both triangles.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut tri = TriMat::with_capacity((n, n), triplets.len());
        for &(i, j, v) in triplets {
            tri.add_triplet(i, j, v);
        }
        Self { mat: tri.to_csc() }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.mat
    }

    /// Iterates stored `(row, col, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.mat.iter().map(|(&v, (r, c))| (r, c, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (r, c, v) in self.entries() {
            y[r] += v * x[c];
        }
        y
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> SparseSym {
        let n = self.dim();
        let mut t: Vec<(usize, usize, f64)> = self.entries().collect();
        t.extend((0..n).filter(|&i| d[i] != 0.0).map(|i| (i, i, d[i])));
        Self::from_triplets(n, &t)
    }

    /// Factorises with reverse Cuthill-McKee ordering. A zero or negative pivot
    /// from roundoff triggers one retry with a `1e-9` diagonal shift.
    pub fn factorize(&self) -> Result<Factor, OcclusionError> {
        let attempt = |m: &CsMat<f64>| {
            Ldl::new()
                .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
                .check_symmetry(SymmetryCheck::DontCheckSymmetry)
                .numeric(m.view())
                .ok()
                .filter(|f| f.d().iter().all(|&p| p > 0.0 && p.is_finite()))
        };
        if let Some(ldl) = attempt(&self.mat) {
            return Ok(Factor { ldl });
        }
        log::warn!("non-positive pivot, retrying with diagonal shift");
        let shifted = self.add_diagonal(&vec![1e-9; self.dim()]);
        attempt(&shifted.mat)
            .map(|ldl| Factor { ldl })
            .ok_or_else(|| OcclusionError::Factorization("matrix is not positive definite".into()))
    }
}
