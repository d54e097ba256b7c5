//! Small dense linear-algebra helpers shared by the models and the objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as roundoff and clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

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

pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Symmetrizes `m` and makes it PSD: eigenvalues in `[-PSD_TOLERANCE, 0)`
/// are clamped to zero, anything more negative is rejected.
pub fn clamp_psd(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetrize(&mut m);
    if m.clone().cholesky().is_some() {
        return Ok(m);
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    if min >= 0.0 {
        return Ok(m);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// A factor `A` with `A Aᵀ = m` for a PSD (possibly singular) matrix.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(l) = cholesky_lower(m) {
        return Ok(l);
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let scale = s.diagonal().amax().max(1.0);
    let eig = s.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

pub fn quad_form(m: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(m * w))
}
