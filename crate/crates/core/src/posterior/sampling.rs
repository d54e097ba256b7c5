use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Gamma draw parameterized by shape and rate.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Degenerate(format!("gamma(shape={shape}, rate={rate}): {e}")))?;
    Ok(g.sample(rng))
}

pub fn chi_squared<R: Rng + ?Sized>(rng: &mut R, df: f64) -> Result<f64> {
    gamma(rng, 0.5 * df, 0.5)
}

/// Returns `B` with `B Bᵀ ~ InverseWishart(nu, U Uᵀ)` where `scale_lower`
/// is the lower Cholesky factor `U` of the scale matrix.
///
/// Bartlett: if `A` is lower triangular with `A_ii² ~ χ²(nu - i)` and
/// standard normal entries below the diagonal, then `U^{-T} A Aᵀ U^{-1}` is
/// Wishart(nu, (U Uᵀ)^{-1}), so its inverse is `(U A^{-T})(U A^{-T})ᵀ`.
pub fn inverse_wishart_factor<R: Rng + ?Sized>(rng: &mut R, nu: f64, scale_lower: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = scale_lower.nrows();
    if nu <= p as f64 - 1.0 {
        return Err(Error::DegreesOfFreedom {
            nu,
            min: p as f64 - 1.0,
        });
    }
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = chi_squared(rng, nu - i as f64)?.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let a_inv = a
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Degenerate("singular Bartlett factor".into()))?;
    Ok(scale_lower * a_inv.transpose())
}

/// `X Xᵀ` with both triangles filled from the same sums, so the result is
/// exactly symmetric.
pub fn outer_self(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = x.row(i).dot(&x.row(j));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Multivariate Student-t with `df` degrees of freedom, location `m` and
/// scale `L Lᵀ`.
pub fn multivariate_t<R: Rng + ?Sized>(rng: &mut R, df: f64, m: &DVector<f64>, scale_lower: &DMatrix<f64>) -> Result<DVector<f64>> {
    let z = std_normal_vec(rng, m.len());
    let w = chi_squared(rng, df)? / df;
    Ok(m + scale_lower * z / w.sqrt())
}

/// Standard normal truncated to `[lower, ∞)`.
pub fn truncated_std_normal<R: Rng + ?Sized>(rng: &mut R, lower: f64) -> f64 {
    if lower < 0.5 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= lower {
                return z;
            }
        }
    }
    // exponential proposal with the optimal rate (Robert, 1995)
    let alpha = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = lower + e / alpha;
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - alpha) * (z - alpha)).exp() {
            return z;
        }
    }
}

/// Normal(mean, sd²) truncated to `(0, ∞)`.
pub fn positive_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z = truncated_std_normal(rng, -mean / sd);
    (mean + sd * z).max(f64::MIN_POSITIVE)
}
