//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra` dynamic matrices. Symmetric positive
//! definite systems are always solved through a validated Cholesky factor,
//! never through an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative pivot floor for accepting a Cholesky factor: every squared pivot
/// must exceed this fraction of the largest diagonal entry.
pub const PIVOT_RTOL: f64 = 1e-13;

/// Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    /// Factor `matrix`, treating near-zero pivots as failure.
    pub fn new(matrix: &DMatrix<f64>, what: &str, ridge: f64) -> Result<Self> {
        let fail = || Error::NotPositiveDefinite {
            what: what.to_string(),
            ridge,
        };
        if !matrix.is_square() || matrix.iter().any(|v| !v.is_finite()) {
            return Err(fail());
        }
        let max_diag = matrix.diagonal().iter().cloned().fold(0.0_f64, f64::max);
        if max_diag <= 0.0 {
            return Err(fail());
        }
        let chol = Cholesky::new(matrix.clone()).ok_or_else(fail)?;
        let floor = PIVOT_RTOL * max_diag;
        if chol.l_dirty().diagonal().iter().any(|l| !(l * l > floor)) {
            return Err(fail());
        }
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `L w = v`, so that `|w|^2 = v' A^{-1} v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("validated Cholesky factor has nonzero pivots")
    }

    /// Applies [`SpdFactor::whiten`] to every column of `b`.
    pub fn whiten_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("validated Cholesky factor has nonzero pivots")
    }

    /// Quadratic form `v' A^{-1} v`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    /// The explicit inverse; used only where a weighting matrix itself is required.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Column means of an `n x p` matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance (denominator `n - 1`) of the rows of `x`.
///
/// Sums run in row order so the result depends only on the multiset of rows up
/// to floating-point reassociation.
pub fn sample_covariance(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = x.shape();
    let mean = column_means(x);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let da = x[(i, a)] - mean[a];
            for b in a..p {
                cov[(a, b)] += da * (x[(i, b)] - mean[b]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (cov, mean)
}

/// Helmert contrast basis: `h x (h-1)`, orthonormal columns orthogonal to `1_h`.
pub fn helmert(h: usize) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(h, h.saturating_sub(1));
    for j in 1..h {
        let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            a[(i, j - 1)] = scale;
        }
        a[(j, j - 1)] = -(j as f64) * scale;
    }
    a
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, dropping eigenvalues
/// below `rtol` times the largest magnitude.
pub fn sym_pinv(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    if max == 0.0 {
        return out;
    }
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > rtol * max {
            let v = eig.eigenvectors.column(idx);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}

/// Orthonormal basis of the column space of `a`, or an error when `a` is
/// numerically rank deficient.
pub fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, k) = a.shape();
    if k == 0 || k > p {
        return Err(Error::Shape(format!(
            "cannot orthonormalize a {p}x{k} basis"
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::Singular("basis is rank deficient".into()));
    }
    Ok(qr.q())
}

/// Principal angles (radians, ascending) between the column spaces of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    let cosines = (qa.transpose() * &qb).singular_values();
    let mut angles: Vec<f64> = cosines.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    Ok(angles)
}

/// Largest principal angle between `span(a)` and `span(b)`, computed through
/// sines so that small angles keep full relative precision.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let sines = residual.singular_values();
    let s = sines.iter().cloned().fold(0.0_f64, f64::max).min(1.0);
    Ok(s.asin())
}

/// Singular value decomposition with singular triplets sorted descending.
pub fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let u_sorted = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let vt_sorted = DMatrix::from_rows(&order.iter().map(|&i| vt.row(i)).collect::<Vec<_>>());
    let s_sorted = DVector::from_iterator(s.len(), order.iter().map(|&i| s[i]));
    (u_sorted, s_sorted, vt_sorted)
}
