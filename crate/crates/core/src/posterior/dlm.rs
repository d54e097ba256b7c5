//! Discount-factor dynamic linear models.
//!
//! Each asset follows a dynamic regression on the pricing factors,
//! `r_t^i = β_tᵀ x_t + ε_t`, with an unknown, discounted observation
//! precision. The factors follow a multivariate local-level model with a
//! full unknown covariance (matrix-normal / inverse-Wishart). Both are
//! filtered with the closed-form West–Harrison discount recursions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::sampling::{gamma, inverse_wishart_factor, multivariate_t, outer_self, std_normal_vec};
use super::{ModelTag, MomentDraw, MomentPosterior};
use crate::error::{Error, Result};
use crate::linalg;

fn check_discount(name: &str, delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {delta}")))
    }
}

/// Posterior for one asset's regression: `β ~ T_n(m, C)` and observation
/// precision `φ ~ Ga(n/2, d/2)`. `C` is on the scale of the variance
/// estimate `S = d/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmAssetState {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
    pub n: f64,
    pub d: f64,
    pub delta_beta: f64,
    pub delta_eps: f64,
}

impl DlmAssetState {
    pub fn new(m: DVector<f64>, c: DMatrix<f64>, n: f64, d: f64, delta_beta: f64, delta_eps: f64) -> Result<Self> {
        if c.shape() != (m.len(), m.len()) {
            return Err(Error::Dimension(format!("m has {} entries, C is {:?}", m.len(), c.shape())));
        }
        if !(n > 0.0) || !(d > 0.0) {
            return Err(Error::Config(format!("need n > 0 and d > 0, got n={n}, d={d}")));
        }
        check_discount("delta_beta", delta_beta)?;
        check_discount("delta_eps", delta_eps)?;
        Ok(Self {
            m,
            c: linalg::clamp_psd(c)?,
            n,
            d,
            delta_beta,
            delta_eps,
        })
    }

    /// Point estimate `S = d/n` of the observation variance.
    pub fn variance(&self) -> f64 {
        self.d / self.n
    }
}

/// One step of the discount recursion for an asset given its return `y`
/// and the factor returns `x` of the same period.
pub fn dlm_filter_asset(state: &DlmAssetState, y: f64, x: &DVector<f64>) -> Result<DlmAssetState> {
    if x.len() != state.m.len() {
        return Err(Error::Dimension(format!("x has {} entries, state has {}", x.len(), state.m.len())));
    }
    if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite observation".into()));
    }
    let s_old = state.variance();
    let r = &state.c / state.delta_beta;
    let rx = &r * x;
    let q = x.dot(&rx) + s_old;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Degenerate(format!("forecast variance q={q}")));
    }
    let e = y - x.dot(&state.m);
    let a = rx / q;
    let n = state.delta_eps * state.n + 1.0;
    let d = state.delta_eps * state.d + s_old * e * e / q;
    let s_new = d / n;
    let mut c = (r - &a * a.transpose() * q) * (s_new / s_old);
    linalg::symmetrize(&mut c);
    Ok(DlmAssetState {
        m: &state.m + a * e,
        c,
        n,
        d,
        delta_beta: state.delta_beta,
        delta_eps: state.delta_eps,
    })
}

/// Posterior for the factor local-level model:
/// `Σ ~ IW` with point estimate `S` and `n` degrees of freedom, and
/// `μ | Σ ~ N(m, c·Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmFactorState {
    pub m: DVector<f64>,
    pub c: f64,
    pub s: DMatrix<f64>,
    pub n: f64,
    pub delta_f: f64,
    pub delta_c: f64,
}

impl DlmFactorState {
    pub fn new(m: DVector<f64>, c: f64, s: DMatrix<f64>, n: f64, delta_f: f64, delta_c: f64) -> Result<Self> {
        if s.shape() != (m.len(), m.len()) {
            return Err(Error::Dimension(format!("m has {} entries, S is {:?}", m.len(), s.shape())));
        }
        if !(c > 0.0) || !(n > 0.0) {
            return Err(Error::Config(format!("need c > 0 and n > 0, got c={c}, n={n}")));
        }
        check_discount("delta_f", delta_f)?;
        check_discount("delta_c", delta_c)?;
        Ok(Self {
            m,
            c,
            s: linalg::clamp_psd(s)?,
            n,
            delta_f,
            delta_c,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// One step of the matrix-normal / inverse-Wishart discount recursion.
pub fn dlm_filter_factors(state: &DlmFactorState, rf: &DVector<f64>) -> Result<DlmFactorState> {
    if rf.len() != state.dim() {
        return Err(Error::Dimension(format!("factor return has {} entries, state has {}", rf.len(), state.dim())));
    }
    if rf.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite factor return".into()));
    }
    let r = state.c / state.delta_c;
    let q = r + 1.0;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Degenerate(format!("forecast scale q={q}")));
    }
    let e = rf - &state.m;
    let a = r / q;
    let n = state.delta_f * state.n + 1.0;
    // D = nS: D ← δ_F D + e eᵀ / q, i.e. S ← S + (eeᵀ/q − S)/n
    let mut s = (&state.s * (state.delta_f * state.n) + &e * e.transpose() / q) / n;
    linalg::symmetrize(&mut s);
    Ok(DlmFactorState {
        m: &state.m + e * a,
        c: r - a * a * q,
        s,
        n,
        delta_f: state.delta_f,
        delta_c: state.delta_c,
    })
}

/// Asset moments implied by the factor model: `μ = βᵀ μ_F` and
/// `Σ = βᵀ Σ_F β + diag(ψ)`, with `beta` p×N.
pub fn compose_moments(beta: &DMatrix<f64>, psi: &DVector<f64>, fstate: &DlmFactorState) -> Result<MomentDraw> {
    compose(beta, psi, &fstate.m, &fstate.s)
}

fn compose(beta: &DMatrix<f64>, psi: &DVector<f64>, mu_f: &DVector<f64>, sigma_f: &DMatrix<f64>) -> Result<MomentDraw> {
    let (p, n) = beta.shape();
    if psi.len() != n || mu_f.len() != p || sigma_f.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "beta is {p}x{n}, psi has {}, factor moments have {} and {:?}",
            psi.len(),
            mu_f.len(),
            sigma_f.shape()
        )));
    }
    if let Some(i) = psi.iter().position(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Data(format!("idiosyncratic variance {} of asset {i} is invalid", psi[i])));
    }
    let mu = beta.tr_mul(mu_f);
    let f_lower = linalg::psd_factor(sigma_f)?;
    // βᵀ Σ_F β = (βᵀ L)(βᵀ L)ᵀ
    let mut sigma = outer_self(&beta.tr_mul(&f_lower));
    for i in 0..n {
        sigma[(i, i)] += psi[i];
    }
    MomentDraw::new(mu, sigma)
}

/// Discount factors and initial priors for [`DlmModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DlmConfig {
    pub delta_beta: f64,
    pub delta_eps: f64,
    pub delta_c: f64,
    pub delta_f: f64,
    /// Prior scale of each β entry (C₀ = `beta_prior_var`·I).
    pub beta_prior_var: f64,
    /// Prior degrees of freedom for asset and factor variances.
    pub prior_dof: f64,
    /// Prior point value for asset residual variances.
    pub asset_prior_var: f64,
    /// Prior point value for factor variances (S₀ diagonal).
    pub factor_prior_var: f64,
    /// Prior scale of the factor mean relative to Σ_F.
    pub factor_mean_scale: f64,
}

impl Default for DlmConfig {
    fn default() -> Self {
        Self {
            delta_beta: 1.0,
            delta_eps: 0.999,
            delta_c: 1.0,
            delta_f: 0.999,
            beta_prior_var: 1.0,
            prior_dof: 1.0,
            asset_prior_var: 0.0025,
            factor_prior_var: 0.0025,
            factor_mean_scale: 1.0,
        }
    }
}

/// The joint asset/factor model: one regression filter per asset plus the
/// factor filter.
#[derive(Debug, Clone)]
pub struct DlmModel {
    assets: Vec<DlmAssetState>,
    factors: DlmFactorState,
}

impl DlmModel {
    pub fn new(n_assets: usize, n_factors: usize, cfg: &DlmConfig) -> Result<Self> {
        if n_assets == 0 || n_factors == 0 {
            return Err(Error::Config("need at least one asset and one factor".into()));
        }
        let asset = DlmAssetState::new(
            DVector::zeros(n_factors),
            DMatrix::identity(n_factors, n_factors) * cfg.beta_prior_var,
            cfg.prior_dof,
            cfg.prior_dof * cfg.asset_prior_var,
            cfg.delta_beta,
            cfg.delta_eps,
        )?;
        let factors = DlmFactorState::new(
            DVector::zeros(n_factors),
            cfg.factor_mean_scale,
            DMatrix::identity(n_factors, n_factors) * cfg.factor_prior_var,
            cfg.prior_dof,
            cfg.delta_f,
            cfg.delta_c,
        )?;
        Ok(Self {
            assets: vec![asset; n_assets],
            factors,
        })
    }

    pub fn asset_states(&self) -> &[DlmAssetState] {
        &self.assets
    }

    pub fn factor_state(&self) -> &DlmFactorState {
        &self.factors
    }

    /// Filters one period of asset and factor returns.
    pub fn update(&mut self, returns: &DVector<f64>, factor_returns: &DVector<f64>) -> Result<()> {
        if returns.len() != self.assets.len() {
            return Err(Error::Dimension(format!("{} returns for {} assets", returns.len(), self.assets.len())));
        }
        for (state, &y) in self.assets.iter_mut().zip(returns.iter()) {
            *state = dlm_filter_asset(state, y, factor_returns)?;
        }
        self.factors = dlm_filter_factors(&self.factors, factor_returns)?;
        Ok(())
    }

    /// p×N matrix of posterior mean loadings.
    pub fn loadings(&self) -> DMatrix<f64> {
        let p = self.factors.dim();
        DMatrix::from_fn(p, self.assets.len(), |k, i| self.assets[i].m[k])
    }

    /// Moments at the posterior point values (m, S, d/n).
    pub fn point_moments(&self) -> Result<MomentDraw> {
        let psi = DVector::from_iterator(self.assets.len(), self.assets.iter().map(DlmAssetState::variance));
        compose_moments(&self.loadings(), &psi, &self.factors)
    }

    /// Joint draws from the current conjugate posteriors: Student-t loadings,
    /// gamma precisions and a normal-inverse-Wishart factor mean/covariance.
    pub fn sample_posterior<R: Rng>(&self, rng: &mut R, n_draws: usize) -> Result<MomentPosterior> {
        if n_draws == 0 {
            return Err(Error::Config("need at least one draw".into()));
        }
        let p = self.factors.dim();
        let n = self.assets.len();
        let asset_lower = self
            .assets
            .iter()
            .map(|a| linalg::psd_factor(&a.c))
            .collect::<Result<Vec<_>>>()?;
        // W&H inverse-Wishart with n degrees of freedom ~ standard IW(n + p − 1, nS)
        let nu = self.factors.n + p as f64 - 1.0;
        let scale_lower = linalg::psd_factor(&(&self.factors.s * self.factors.n))?;
        let root_c = self.factors.c.sqrt();
        let mut draws = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let sigma_lower = inverse_wishart_factor(rng, nu, &scale_lower)?;
            let sigma_f = outer_self(&sigma_lower);
            let mu_f = &self.factors.m + &sigma_lower * std_normal_vec(rng, p) * root_c;
            let mut beta = DMatrix::zeros(p, n);
            let mut psi = DVector::zeros(n);
            for (i, a) in self.assets.iter().enumerate() {
                beta.set_column(i, &multivariate_t(rng, a.n, &a.m, &asset_lower[i])?);
                psi[i] = 1.0 / gamma(rng, 0.5 * a.n, 0.5 * a.d)?;
            }
            draws.push(compose(&beta, &psi, &mu_f, &sigma_f)?);
        }
        MomentPosterior::new(draws, ModelTag::Dlm)
    }
}
