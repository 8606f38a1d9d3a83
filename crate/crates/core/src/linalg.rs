//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `log Σ exp(x_i)`; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Smallest eigenvalue of the symmetric part of `m`; `+inf` for 0×0.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    SymmetricEigen::new(symmetrized(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factor of a symmetric positive-definite matrix together with a
/// cheap reciprocal condition estimate `(min diag L / max diag L)^2`.
pub struct SpdFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub rcond: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(symmetrized(m))?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..l.nrows() {
            let d = l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let rcond = if m.nrows() == 0 {
            1.0
        } else if hi > 0.0 {
            (lo / hi).powi(2)
        } else {
            0.0
        };
        Some(SpdFactor { chol, rcond })
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `log N(x; mean, Σ)` where `Σ` is the factored matrix.
    pub fn log_density(&self, x: &DVector<f64>, mean: &DVector<f64>) -> f64 {
        let r = x - mean;
        let quad = r.dot(&self.solve_vec(&r));
        -0.5 * (r.len() as f64 * LN_2PI + self.log_det() + quad)
    }
}

/// `log N(x; mean, cov)`; errors when `cov` is not positive definite.
pub fn log_gaussian_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let f = SpdFactor::new(cov)
        .ok_or_else(|| Error::Singular("covariance is not positive definite".into()))?;
    Ok(f.log_density(x, mean))
}

/// Symmetrizes `m` and raises every eigenvalue to at least `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrized(m);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetric square root factor `S` with `S Sᵀ = m` for a PSD `m`
/// (negative roundoff eigenvalues are clamped to zero).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix, treating
/// eigenvalues below `rtol · max(λ)` as zero.
pub fn pinv_psd(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let cut = rtol * top;
    let inv = eig
        .eigenvalues
        .map(|l| if top > 0.0 && l > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Counts eigenvalues at or below `rtol · max(|λ|)` (all of them for a zero matrix).
pub fn deficient_directions(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    let top = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0_f64, f64::max);
    if top == 0.0 {
        return m.nrows();
    }
    eig.eigenvalues.iter().filter(|&&l| l <= rtol * top).count()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "matrix rows must all have {ncols} columns"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
