//! The posterior-integrated mean-variance loss in least-squares form.
//!
//! With `Σ̄ = L Lᵀ`, `½ wᵀΣ̄w − wᵀμ̄ = ½‖Lᵀw − L⁻¹μ̄‖² − ½ μ̄ᵀΣ̄⁻¹μ̄`, so the
//! penalized program is a lasso with design `Lᵀ` and response `L⁻¹μ̄`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::posterior::MomentDraw;

const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForm {
    /// `Lᵀ`, upper triangular.
    pub design: DMatrix<f64>,
    /// `L⁻¹μ̄`.
    pub response: DVector<f64>,
    /// Per-asset multipliers on λ; zero marks an unpenalized asset.
    pub penalty_weights: DVector<f64>,
}

impl RegressionForm {
    pub fn dim(&self) -> usize {
        self.response.len()
    }

    /// `designᵀ design`, the Σ̄ actually used (including any jitter).
    pub fn gram(&self) -> DMatrix<f64> {
        self.design.tr_mul(&self.design)
    }

    /// `designᵀ response`, which equals μ̄.
    pub fn correlation(&self) -> DVector<f64> {
        self.design.tr_mul(&self.response)
    }

    /// `½‖design·w − response‖²`.
    pub fn residual_loss(&self, w: &DVector<f64>) -> f64 {
        0.5 * (&self.design * w - &self.response).norm_squared()
    }

    pub fn penalized_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.penalty_weights[j] > 0.0).collect()
    }

    /// One block per matrix: `design` rows, then `response` and
    /// `penalty_weights` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.dim();
        let mut header = vec!["block".to_owned(), "row".to_owned()];
        header.extend((0..n).map(|j| format!("c{j}")));
        w.write_record(&header)?;
        for i in 0..n {
            let mut rec = vec!["design".to_owned(), i.to_string()];
            rec.extend(self.design.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        for (name, v) in [("response", &self.response), ("penalty_weights", &self.penalty_weights)] {
            let mut rec = vec![name.to_owned(), String::new()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<form writer>", e))?;
        Ok(())
    }
}

fn penalty_weights(n: usize, unpenalized: &[usize]) -> Result<DVector<f64>> {
    let mut p = DVector::from_element(n, 1.0);
    for &j in unpenalized {
        if j >= n {
            return Err(Error::Dimension(format!("unpenalized index {j} out of range for {n} assets")));
        }
        p[j] = 0.0;
    }
    Ok(p)
}

/// Cholesky of Σ̄, retrying once with a `1e-8·tr(Σ̄)/N` ridge.
fn factor_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(l) = linalg::cholesky_lower(sigma) {
        return Ok(l);
    }
    let n = sigma.nrows();
    let ridge = JITTER * sigma.trace() / n as f64;
    let jittered = sigma + DMatrix::identity(n, n) * ridge;
    linalg::cholesky_lower(&jittered).ok_or(Error::Factorization)
}

fn form_from(mean: &DVector<f64>, sigma: &DMatrix<f64>, unpenalized: &[usize], risk_aversion: f64) -> Result<RegressionForm> {
    if !(risk_aversion > 0.0) {
        return Err(Error::Config(format!("risk aversion must be positive, got {risk_aversion}")));
    }
    let l = factor_covariance(&(sigma * risk_aversion))?;
    let response = linalg::forward_substitute(&l, mean);
    Ok(RegressionForm {
        design: l.transpose(),
        response,
        penalty_weights: penalty_weights(mean.len(), unpenalized)?,
    })
}

pub fn build_regression_form(moments: &MomentDraw, unpenalized: &[usize]) -> Result<RegressionForm> {
    build_regression_form_with(moments, unpenalized, 1.0)
}

/// As [`build_regression_form`] for the loss `½γ wᵀΣ̄w − wᵀμ̄`.
pub fn build_regression_form_with(moments: &MomentDraw, unpenalized: &[usize], risk_aversion: f64) -> Result<RegressionForm> {
    form_from(moments.mu(), moments.sigma(), unpenalized, risk_aversion)
}

/// Minimum-variance variant: μ̄ replaced by the all-ones vector.
pub fn minvar_form(moments: &MomentDraw, unpenalized: &[usize]) -> Result<RegressionForm> {
    let ones = DVector::from_element(moments.dim(), 1.0);
    form_from(&ones, moments.sigma(), unpenalized, 1.0)
}

/// `½wᵀΣ̄w − wᵀμ̄ + λ Σⱼ pⱼ|wⱼ|`.
pub fn loss_eval(w: &DVector<f64>, moments: &MomentDraw, lambda: f64, penalty_weights: &DVector<f64>) -> f64 {
    let penalty: f64 = w.iter().zip(penalty_weights.iter()).map(|(x, p)| p * x.abs()).sum();
    0.5 * linalg::quad_form(moments.sigma(), w) - w.dot(moments.mu()) + lambda * penalty
}

/// Net-of-fee moments: μ̄ − τ, Σ̄ unchanged. `tau` must be in the same
/// per-period units as μ̄.
pub fn fee_adjust(moments: &MomentDraw, tau: &DVector<f64>) -> Result<MomentDraw> {
    if tau.len() != moments.dim() {
        return Err(Error::Dimension(format!("{} fees for {} assets", tau.len(), moments.dim())));
    }
    if let Some(j) = tau.iter().position(|&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::Config(format!("fee {} for asset {j} must be nonnegative", tau[j])));
    }
    MomentDraw::new(moments.mu() - tau, moments.sigma().clone())
}

/// Converts an annual expense ratio to a per-period rate at
/// `periods_per_year` periods (0.12 annual → 0.01 monthly).
pub fn per_period_fee(annual: f64, periods_per_year: u32) -> f64 {
    annual / f64::from(periods_per_year)
}
