//! Conjugate normal-inverse-Wishart model.
//!
//! `sigma` holds the covariance guess; the inverse-Wishart scale matrix is
//! `nu * sigma`, so `Σ ~ IW(nu, nu·sigma)` with mean `nu·sigma / (nu - N - 1)`
//! and `μ | Σ ~ N(mu, Σ / kappa)`. With this convention the posterior of an
//! update can be fed straight back in as the prior for the next batch.

use nalgebra::{DMatrix, DVector};

use super::sampling::{inverse_wishart_factor, std_normal_vec};
use super::{ModelTag, MomentDraw, MomentPosterior};
use crate::error::{Error, Result};
use crate::market_data::ReturnPanel;
use crate::{linalg, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct NiwParams {
    pub mu: DVector<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub sigma: DMatrix<f64>,
}

impl NiwParams {
    pub fn new(mu: DVector<f64>, kappa: f64, nu: f64, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 || sigma.shape() != (n, n) {
            return Err(Error::Dimension(format!("mu has {n} entries, sigma is {:?}", sigma.shape())));
        }
        if !(kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
        }
        if !(nu > n as f64 - 1.0) {
            return Err(Error::DegreesOfFreedom {
                nu,
                min: n as f64 - 1.0,
            });
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::Config("sigma must be symmetric".into()));
        }
        let sigma = linalg::clamp_psd(sigma)?;
        Ok(Self { mu, kappa, nu, sigma })
    }

    /// Weak proper prior centered at zero: `kappa = 0.01`, `nu = N + 2` and
    /// `sigma` the identity times the average per-asset sample variance.
    pub fn weak(data: &ReturnPanel) -> Result<Self> {
        let n = data.n_assets();
        let t = data.n_periods() as f64;
        let mut var = 0.0;
        for col in data.values().column_iter() {
            let m = col.mean();
            var += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
        }
        var /= n as f64;
        if !(var > 0.0) {
            var = 1e-4;
        }
        Self::new(DVector::zeros(n), 0.01, n as f64 + 2.0, DMatrix::identity(n, n) * var)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Inverse-Wishart scale matrix `V = nu * sigma`.
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        &self.sigma * self.nu
    }

    /// Marginal posterior mean of Σ, defined for `nu > N + 1`.
    pub fn mean_sigma(&self) -> Option<DMatrix<f64>> {
        let denom = self.nu - self.dim() as f64 - 1.0;
        (denom > 0.0).then(|| self.scale_matrix() / denom)
    }
}

pub fn niw_update(prior: &NiwParams, data: &ReturnPanel) -> Result<NiwParams> {
    niw_update_rows(prior, data.values())
}

/// Conjugate update on the rows of a T×N matrix (T may be zero).
pub fn niw_update_rows(prior: &NiwParams, rows: &DMatrix<f64>) -> Result<NiwParams> {
    let n = prior.dim();
    if rows.ncols() != n {
        return Err(Error::Dimension(format!("prior has {n} assets, data has {}", rows.ncols())));
    }
    let count = rows.nrows();
    if count == 0 {
        return Ok(prior.clone());
    }
    let t = count as f64;
    let mean: DVector<f64> = rows.row_mean().transpose();
    let mut scatter = DMatrix::zeros(n, n);
    for r in rows.row_iter() {
        let d = r.transpose() - &mean;
        scatter += &d * d.transpose();
    }
    let kappa = prior.kappa + t;
    let nu = prior.nu + t;
    let shift = &mean - &prior.mu;
    let v = prior.scale_matrix() + scatter + (&shift * shift.transpose()) * (prior.kappa * t / kappa);
    let mu = (&prior.mu * prior.kappa + &mean * t) / kappa;
    NiwParams::new(mu, kappa, nu, v / nu)
}

/// Draws `Σ ~ IW(nu, V)` by Bartlett decomposition, then `μ | Σ ~ N(mu, Σ/kappa)`.
pub fn niw_sample(params: &NiwParams, n_draws: usize, seed: u64) -> Result<MomentPosterior> {
    if n_draws == 0 {
        return Err(Error::Config("need at least one draw".into()));
    }
    let n = params.dim();
    if params.nu <= n as f64 - 1.0 {
        return Err(Error::DegreesOfFreedom {
            nu: params.nu,
            min: n as f64 - 1.0,
        });
    }
    let scale_lower = linalg::psd_factor(&params.scale_matrix())?;
    let mut rng = rng::substream(seed, "niw", 0);
    let root_kappa = params.kappa.sqrt();
    let draws = (0..n_draws)
        .map(|_| {
            let b = inverse_wishart_factor(&mut rng, params.nu, &scale_lower)?;
            let sigma = super::sampling::outer_self(&b);
            let mu = &params.mu + &b * std_normal_vec(&mut rng, n) / root_kappa;
            MomentDraw::new(mu, sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    MomentPosterior::new(draws, ModelTag::Niw)
}
