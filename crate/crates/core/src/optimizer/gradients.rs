//! Closed-form gradients of the sum SE with respect to `(theta, beta, alpha)`.
//!
//! The objective depends on the surface only through the per-user scalars
//! `tau_k` (trace term), `zeta_k` (surface-noise gain) and the pilot-phase
//! dynamic-noise load `sum_j rho_j`. The adjoint of the SE is propagated
//! backwards through `S_k = T_k^2`, `I_k`, the eigen-spectra `psi_km`, and
//! finally through these scalars, which makes every coupling (including the
//! amplifier dependence of `Q_k`) explicit.
//!
//! Conventions:
//! - `g_theta_*` is the Euclidean gradient `dSE/dRe + i dSE/dIm`, i.e. twice
//!   the Wirtinger derivative with respect to `theta^*`.
//! - `dphi_*` is the derivative with respect to the phase angle
//!   (`theta_n = e^{j phi_n}`), and [`GradientBundle::tangent_theta`] is the
//!   corresponding tangent vector `j theta_n dphi_n` on the unit circle.

use num_complex::Complex64;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::{noise_power, spectral_terms, EstimationStatistics, SpectralTerms};
use crate::linalg::{self, CMat};
use crate::scenario::ScenarioStatistics;
use crate::spectral::{noise_weight, se_from_terms, SEResult};
use crate::surface::{Region, SurfaceState};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub g_theta_t: Vec<Complex64>,
    pub g_theta_r: Vec<Complex64>,
    pub dphi_t: Vec<f64>,
    pub dphi_r: Vec<f64>,
    pub g_beta_t: Vec<f64>,
    pub g_beta_r: Vec<f64>,
    pub g_alpha: Vec<f64>,
    pub aux: GradientAux,
}

/// Intermediate adjoints, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAux {
    pub se: SEResult,
    /// `dSE/dS_k`.
    pub d_signal: Vec<f64>,
    /// `dSE/dI_k`.
    pub d_interference: Vec<f64>,
    /// `dSE/dc_k` including the pilot-phase coupling through `T_i`, `V_i`.
    pub d_c: Vec<f64>,
    /// `dSE/dtau_k = beta_hat_k dSE/dc_k`.
    pub d_tau: Vec<f64>,
    /// `dSE/dzeta_k`.
    pub d_zeta: Vec<f64>,
    /// `dSE/de` for the dynamic-noise scale of the estimator.
    pub d_e: f64,
    /// `nu_k = dS_k/dtau_k` at fixed estimator noise.
    pub nu: Vec<f64>,
}

impl GradientBundle {
    pub fn g_theta(&self, region: Region) -> &[Complex64] {
        match region {
            Region::T => &self.g_theta_t,
            Region::R => &self.g_theta_r,
        }
    }

    pub fn dphi(&self, region: Region) -> &[f64] {
        match region {
            Region::T => &self.dphi_t,
            Region::R => &self.dphi_r,
        }
    }

    pub fn g_beta(&self, region: Region) -> &[f64] {
        match region {
            Region::T => &self.g_beta_t,
            Region::R => &self.g_beta_r,
        }
    }

    /// `j theta_n dSE/dphi_n`: the Euclidean gradient with its radial part removed.
    pub fn tangent_theta(&self, state: &SurfaceState, region: Region) -> Vec<Complex64> {
        state
            .theta(region)
            .iter()
            .zip(self.dphi(region))
            .map(|(t, d)| Complex64::new(0.0, *d) * t)
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.g_theta_t.iter().chain(&self.g_theta_r).all(|z| z.re.is_finite() && z.im.is_finite())
            && self
                .g_beta_t
                .iter()
                .chain(&self.g_beta_r)
                .chain(&self.g_alpha)
                .chain(&self.dphi_t)
                .chain(&self.dphi_r)
                .all(|x| x.is_finite());
        if finite {
            return Ok(());
        }
        let k = (0..self.aux.d_c.len())
            .find(|&k| !(self.aux.d_c[k].is_finite() && self.aux.d_zeta[k].is_finite()))
            .unwrap_or(0);
        Err(Error::Numeric(format!("non-finite gradient (user {k})")))
    }
}

/// Partial derivatives of `psi = c^2 l^2 / ((c + e) l + s)` with respect to `c` and `e`.
fn psi_partials(c: f64, e: f64, s: f64, l: f64) -> (f64, f64) {
    let den = (c + e) * l + s;
    if !(den > 0.0) {
        return (0.0, 0.0);
    }
    let den2 = den * den;
    (c * l * l * (2.0 * den - c * l) / den2, -c * c * l * l * l / den2)
}

/// Gradients for `state` from its (already computed) statistics.
pub fn gradients(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    stats: &EstimationStatistics,
    config: &ScenarioConfig,
) -> Result<GradientBundle> {
    gradients_from_terms(scenario, state, &stats.terms, config)
}

/// Computes the spectral terms and gradients in one pass.
pub fn evaluate_gradients(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<GradientBundle> {
    let terms = spectral_terms(scenario, state, config)?;
    gradients_from_terms(scenario, state, &terms, config)
}

pub fn gradients_from_terms(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    terms: &SpectralTerms,
    config: &ScenarioConfig,
) -> Result<GradientBundle> {
    let sys = &config.system;
    let se = se_from_terms(scenario, terms, config);
    let k_users = terms.k();
    let n = scenario.n();
    let scale = se.pre_log / std::f64::consts::LN_2;
    let d_signal: Vec<f64> = (0..k_users)
        .map(|k| scale / (se.interference[k] + se.signal[k]))
        .collect();
    let d_interference: Vec<f64> = (0..k_users)
        .map(|k| {
            let (s, i) = (se.signal[k], se.interference[k]);
            -scale * s / (i * (i + s))
        })
        .collect();

    let sum_t: f64 = terms.t.iter().sum();
    let sum_v: f64 = terms.v.iter().sum();
    let k_over_p = k_users as f64 / noise_power(config);
    let weights: Vec<f64> = (0..k_users).map(|k| noise_weight(scenario, terms, config, k)).collect();

    // I_k = c_k sum V + w_k (K/P) sum T.
    let noise_adj: f64 = (0..k_users).map(|k| d_interference[k] * weights[k] * k_over_p).sum();
    let v_adj: f64 = (0..k_users).map(|k| d_interference[k] * terms.c[k]).sum();
    let mut d_c: Vec<f64> = (0..k_users).map(|k| d_interference[k] * sum_v).collect();
    let d_zeta: Vec<f64> = (0..k_users)
        .map(|k| d_interference[k] * sys.sigma_v2 * scenario.users[k].beta_tilde * k_over_p * sum_t)
        .collect();
    let mut d_e = 0.0;
    let mut nu = Vec::with_capacity(k_users);
    for i in 0..k_users {
        let t_adj = 2.0 * d_signal[i] * terms.t[i] + noise_adj;
        let (mut dt_dc, mut dv_dc, mut dt_de, mut dv_de) = (0.0, 0.0, 0.0, 0.0);
        for &l in &terms.lambda {
            let (pc, pe) = psi_partials(terms.c[i], terms.e, terms.s, l);
            dt_dc += pc;
            dv_dc += l * pc;
            dt_de += pe;
            dv_de += l * pe;
        }
        d_c[i] += t_adj * dt_dc + v_adj * dv_dc;
        d_e += t_adj * dt_de + v_adj * dv_de;
        nu.push(2.0 * scenario.users[i].beta_hat * terms.t[i] * dt_dc);
    }
    let d_tau: Vec<f64> = (0..k_users).map(|k| scenario.users[k].beta_hat * d_c[k]).collect();
    let tau_p = sys.tau as f64 * sys.p_pilot;
    let d_rho_sum = d_e * scenario.beta_tilde_g * sys.sigma_v2 / tau_p;

    let d = scenario.ris_diagonal();
    let mut g_theta = [vec![linalg::ZERO; n], vec![linalg::ZERO; n]];
    let mut dphi = [vec![0.0; n], vec![0.0; n]];
    let mut g_beta = [vec![0.0; n], vec![0.0; n]];
    let mut g_alpha = vec![0.0; n];
    let counts = [scenario.users_in(Region::T).count() as f64, scenario.users_in(Region::R).count() as f64];

    for (k, u) in scenario.users.iter().enumerate() {
        let reg = u.region.index();
        let parts = &terms.trace_parts[k];
        let beta = state.beta(u.region);
        let theta = state.theta(u.region);
        for i in 0..n {
            let a = u.steering[i];
            let sa = state.alpha[i].sqrt();
            let g = parts.g[i];
            let off = parts.off[i];
            let a2 = a.norm_sqr();
            // Coefficient of theta_i in g_i.
            let kappa = a * (sa * beta[i]);
            g_theta[reg][i] += (kappa.conj() * off) * (2.0 * d_tau[k]);
            dphi[reg][i] += 2.0 * d_tau[k] * (g.conj() * off).im;
            let dtau_dbeta = 2.0 * d[i] * state.alpha[i] * beta[i] * a2 + 2.0 * ((a * theta[i] * sa).conj() * off).re;
            g_beta[reg][i] += d_tau[k] * dtau_dbeta + d_zeta[k] * 2.0 * state.alpha[i] * beta[i] * a2;
            let dtau_dalpha = d[i] * beta[i] * beta[i] * a2
                + if sa > 0.0 {
                    ((a * theta[i] * beta[i]).conj() * off).re / sa
                } else {
                    0.0
                };
            g_alpha[i] += d_tau[k] * dtau_dalpha + d_zeta[k] * beta[i] * beta[i] * a2;
        }
    }
    for i in 0..n {
        for (reg, region) in Region::BOTH.iter().enumerate() {
            let b = state.beta(*region)[i];
            g_beta[reg][i] += d_rho_sum * 2.0 * d[i] * state.alpha[i] * b * counts[reg];
            g_alpha[i] += d_rho_sum * d[i] * b * b * counts[reg];
        }
    }
    let [g_theta_t, g_theta_r] = g_theta;
    let [dphi_t, dphi_r] = dphi;
    let [g_beta_t, g_beta_r] = g_beta;
    let bundle = GradientBundle {
        g_theta_t,
        g_theta_r,
        dphi_t,
        dphi_r,
        g_beta_t,
        g_beta_r,
        g_alpha,
        aux: GradientAux {
            se,
            d_signal,
            d_interference,
            d_c,
            d_tau,
            d_zeta,
            d_e,
            nu,
        },
    };
    bundle.check_finite()?;
    Ok(bundle)
}

/// Which middle term to use in `nu_k = 2 beta_hat_k tr(Psi_k) tr((Q R + R Q - X) R_BS)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuVariant {
    /// `X = Q R^2 Q`.
    SquaredCovariance,
    /// `X = Q R Q`.
    SingleCovariance,
}

/// `nu_k` from the dense matrices of `stats`.
pub fn nu_dense(scenario: &ScenarioStatistics, stats: &EstimationStatistics, k: usize, variant: NuVariant) -> f64 {
    let q = &stats.q[k];
    let r = &stats.r[k];
    let x: CMat = match variant {
        NuVariant::SquaredCovariance => q * r * r * q,
        NuVariant::SingleCovariance => q * r * q,
    };
    let inner = q * r + r * q - x;
    2.0 * scenario.users[k].beta_hat * stats.terms.t[k] * linalg::trace_product(&inner, &scenario.r_bs).re
}
