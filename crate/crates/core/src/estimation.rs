//! Uplink pilot phase and MMSE estimation of the aggregated channels.
//!
//! All covariances share the eigenbasis of `R_BS = U diag(l) U^H`: with
//! `R_k = c_k R_BS`, the filter kernel is
//! `Q_k = U diag(1 / ((c_k + e) l_m + s)) U^H`, where `e` is the surface
//! dynamic-noise scale divided by `tau p` and `s = sigma^2 / (tau p)`. Hence
//! `Psi_k = R_k Q_k R_k` has eigenvalues `psi_km = c_k^2 l_m^2 / ((c_k + e) l_m + s)`.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{self, ChannelRealization, TraceParts};
use crate::config::{IncidentPower, NoiseScaling, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::scenario::{build_scenario, ScenarioStatistics};
use crate::surface::{Region, SurfaceState};

/// Per-state scalars and eigenvalue spectra from which every statistic follows.
#[derive(Debug, Clone)]
pub struct SpectralTerms {
    /// Eigenvalues of `R_BS` (clipped at zero).
    pub lambda: Vec<f64>,
    pub trace_parts: Vec<TraceParts>,
    /// `c_k = beta_bar_k + beta_hat_k tau_k`.
    pub c: Vec<f64>,
    /// `zeta_k = sum_n alpha_n (beta_n^{w_k})^2 |a_n|^2`.
    pub zeta: Vec<f64>,
    /// `rho_j = tr(R_RIS A^2 C_{w_j})`.
    pub rho: Vec<f64>,
    /// `beta_g sigma_v^2 sum_j rho_j`.
    pub active_noise: f64,
    /// `active_noise / (tau p)`.
    pub e: f64,
    /// `sigma^2 / (tau p)`.
    pub s: f64,
    /// Eigenvalues of `Psi_k` per user.
    pub psi: Vec<Vec<f64>>,
    /// `T_k = tr(Psi_k)`.
    pub t: Vec<f64>,
    /// `V_k = tr(R_BS Psi_k)`.
    pub v: Vec<f64>,
}

impl SpectralTerms {
    pub fn k(&self) -> usize {
        self.c.len()
    }

    pub fn trace_r_bs(&self) -> f64 {
        self.lambda.iter().sum()
    }
}

/// `psi = c^2 l^2 / ((c + e) l + s)`; zero on a null direction of the kernel.
pub(crate) fn psi_value(c: f64, e: f64, s: f64, l: f64) -> f64 {
    let den = (c + e) * l + s;
    if den > 0.0 {
        c * c * l * l / den
    } else {
        0.0
    }
}

/// `c l - psi = c l (e l + s) / ((c + e) l + s)`, free of cancellation.
pub(crate) fn mse_value(c: f64, e: f64, s: f64, l: f64) -> f64 {
    let den = (c + e) * l + s;
    if den > 0.0 {
        c * l * (e * l + s) / den
    } else {
        c * l
    }
}

fn kernel_value(c: f64, e: f64, s: f64, l: f64) -> f64 {
    let den = (c + e) * l + s;
    if den > 0.0 {
        1.0 / den
    } else {
        0.0
    }
}

/// `sum_n [R_RIS]_nn alpha_n (beta_n^{region})^2`.
pub(crate) fn region_load(scenario: &ScenarioStatistics, state: &SurfaceState, region: Region) -> f64 {
    let d = scenario.ris_diagonal();
    state.weighted_gain(region, Some(&d))
}

pub fn spectral_terms(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    config: &ScenarioConfig,
) -> Result<SpectralTerms> {
    let sys = &config.system;
    if state.n() != scenario.n() {
        return Err(Error::InvalidArgument(format!(
            "surface state has {} elements, scenario has {}",
            state.n(),
            scenario.n()
        )));
    }
    let lambda = scenario.bs_eigenvalues();
    let tau_p = sys.tau as f64 * sys.p_pilot;
    let trace_parts = channel::trace_parts_all(scenario, state)?;
    let mut c = Vec::with_capacity(scenario.k());
    let mut zeta = Vec::with_capacity(scenario.k());
    let mut rho = Vec::with_capacity(scenario.k());
    let loads = [region_load(scenario, state, Region::T), region_load(scenario, state, Region::R)];
    for (k, u) in scenario.users.iter().enumerate() {
        c.push(u.beta_bar + u.beta_hat * trace_parts[k].tau);
        let beta = state.beta(u.region);
        zeta.push(
            (0..scenario.n())
                .map(|n| state.alpha[n] * beta[n] * beta[n] * u.steering[n].norm_sqr())
                .sum(),
        );
        rho.push(loads[u.region.index()]);
    }
    let active_noise = scenario.beta_tilde_g * sys.sigma_v2 * rho.iter().sum::<f64>();
    let e = active_noise / tau_p;
    let s = sys.sigma2 / tau_p;
    if lambda.iter().all(|&l| (c.iter().cloned().fold(0.0, f64::max) + e) * l + s <= 0.0) {
        return Err(Error::Numeric("estimation kernel is singular: all variances are zero".into()));
    }
    let psi: Vec<Vec<f64>> = c
        .iter()
        .map(|&ck| lambda.iter().map(|&l| psi_value(ck, e, s, l)).collect())
        .collect();
    let t = psi.iter().map(|p| p.iter().sum()).collect();
    let v = psi
        .iter()
        .map(|p| p.iter().zip(&lambda).map(|(a, l)| a * l).sum())
        .collect();
    for (k, &ck) in c.iter().enumerate() {
        if !ck.is_finite() {
            return Err(Error::Numeric(format!("user {k}: non-finite covariance scale")));
        }
    }
    Ok(SpectralTerms {
        lambda,
        trace_parts,
        c,
        zeta,
        rho,
        active_noise,
        e,
        s,
        psi,
        t,
        v,
    })
}

/// Estimator statistics with every matrix materialized.
#[derive(Debug, Clone)]
pub struct EstimationStatistics {
    pub terms: SpectralTerms,
    /// `R_k`.
    pub r: Vec<CMat>,
    /// `Q_k`.
    pub q: Vec<CMat>,
    /// `Psi_k = R_k Q_k R_k`.
    pub psi: Vec<CMat>,
    /// `E_k = R_k - Psi_k`.
    pub mse: Vec<CMat>,
    /// MMSE filter `R_k Q_k` applied to the pilot observation.
    pub filter: Vec<CMat>,
    /// `beta_g sigma_v^2 sum_j tr(R_RIS A^2 C_{w_j})`.
    pub active_noise_scalar: f64,
}

fn from_eigen(vectors: &CMat, values: impl Iterator<Item = f64>) -> CMat {
    let mut scaled = vectors.clone();
    for (j, w) in values.enumerate() {
        scaled.column_mut(j).scale_mut(w);
    }
    let mut out = &scaled * vectors.adjoint();
    linalg::force_hermitian(&mut out);
    out
}

pub fn estimation_statistics(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    config: &ScenarioConfig,
) -> Result<EstimationStatistics> {
    let terms = spectral_terms(scenario, state, config)?;
    let u = scenario.bs_eigenvectors();
    let (e, s) = (terms.e, terms.s);
    let mut r = Vec::new();
    let mut q = Vec::new();
    let mut psi = Vec::new();
    let mut mse = Vec::new();
    let mut filter = Vec::new();
    for (k, &ck) in terms.c.iter().enumerate() {
        let l = &terms.lambda;
        r.push(&scenario.r_bs * Complex64::new(ck, 0.0));
        q.push(from_eigen(u, l.iter().map(|&x| kernel_value(ck, e, s, x))));
        psi.push(from_eigen(u, terms.psi[k].iter().copied()));
        mse.push(from_eigen(u, l.iter().map(|&x| mse_value(ck, e, s, x))));
        // The filter is not Hermitian-forced since it is applied, not stored as a covariance.
        let mut scaled = u.clone();
        for (j, &x) in l.iter().enumerate() {
            scaled.column_mut(j).scale_mut(ck * x * kernel_value(ck, e, s, x));
        }
        filter.push(&scaled * u.adjoint());
    }
    Ok(EstimationStatistics {
        active_noise_scalar: terms.active_noise,
        terms,
        r,
        q,
        psi,
        mse,
        filter,
    })
}

/// `1 - tr(Psi_k) / tr(R_k)`, evaluated as `tr(E_k) / tr(R_k)`.
pub fn nmse(stats: &EstimationStatistics, k: usize) -> Result<f64> {
    let t = &stats.terms;
    let tr_r = t.c[k] * t.trace_r_bs();
    if !(tr_r > 0.0) {
        return Err(Error::Numeric(format!("user {k}: tr(R_k) = 0")));
    }
    let tr_e: f64 = t.lambda.iter().map(|&l| mse_value(t.c[k], t.e, t.s, l)).sum();
    Ok((tr_e / tr_r).clamp(0.0, 1.0))
}

/// Scalar MSE under independent fading (`R_BS = l_bs I`, `R_RIS = l_ris I`):
/// `E_k = ebar n / (ebar + n) I` with `ebar = l_bs c_k` and
/// `n = l_bs (e + s / l_bs)`, i.e. the harmonic combination of signal and noise.
pub fn mse_independent_fading(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    config: &ScenarioConfig,
    k: usize,
) -> Result<f64> {
    let (l_bs, l_ris) = independent_fading_scales(scenario)?;
    let (ebar, noise) = independent_fading_scalars(scenario, state, config, k, l_bs, l_ris);
    Ok(ebar * noise / (ebar + noise))
}

/// NMSE under independent fading: `n / (ebar + n)` where `n` is the total
/// estimation noise (surface dynamic noise plus receiver noise).
pub fn nmse_independent_fading(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    config: &ScenarioConfig,
    k: usize,
) -> Result<f64> {
    let (l_bs, l_ris) = independent_fading_scales(scenario)?;
    let (ebar, noise) = independent_fading_scalars(scenario, state, config, k, l_bs, l_ris);
    Ok(noise / (ebar + noise))
}

/// Returns `(ebar_k, n)` where `ebar_k = l_bs (beta_bar + beta_hat l_ris sum alpha beta^2)`
/// and `n = l_bs beta_g sigma_v^2 l_ris sum_j sum_n alpha beta_{w_j}^2 / (tau p) + sigma^2 / (tau p)`.
pub(crate) fn independent_fading_scalars(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    config: &ScenarioConfig,
    k: usize,
    l_bs: f64,
    l_ris: f64,
) -> (f64, f64) {
    let sys = &config.system;
    let tau_p = sys.tau as f64 * sys.p_pilot;
    let u = &scenario.users[k];
    let gain_k: f64 = {
        let beta = state.beta(u.region);
        (0..scenario.n())
            .map(|n| state.alpha[n] * beta[n] * beta[n] * u.steering[n].norm_sqr())
            .sum()
    };
    let all: f64 = scenario
        .users
        .iter()
        .map(|w| state.weighted_gain(w.region, None))
        .sum();
    let ebar = l_bs * (u.beta_bar + u.beta_hat * l_ris * gain_k);
    let noise = l_bs * scenario.beta_tilde_g * sys.sigma_v2 * l_ris * all / tau_p + sys.sigma2 / tau_p;
    (ebar, noise)
}

/// Checks that both correlations are scaled identities and returns the scales.
pub(crate) fn independent_fading_scales(scenario: &ScenarioStatistics) -> Result<(f64, f64)> {
    let scale = |m: &CMat, name: &str| -> Result<f64> {
        let n = m.nrows();
        if n == 0 {
            return Ok(0.0);
        }
        let l = m[(0, 0)].re;
        let expected = CMat::identity(n, n) * Complex64::new(l, 0.0);
        if linalg::frobenius(&(m - expected)) > 1e-12 * l.abs().max(1.0) * n as f64 {
            return Err(Error::InvalidArgument(format!("{name} is not a scaled identity")));
        }
        Ok(l)
    };
    Ok((scale(&scenario.r_bs, "R_BS")?, scale(&scenario.r_ris, "R_RIS")?))
}

/// Result of one simulated pilot round.
#[derive(Debug, Clone)]
pub struct PilotEstimate {
    /// Observations `r_k`.
    pub observation: Vec<CVec>,
    /// Estimates `h_hat_k = R_k Q_k r_k`.
    pub h_hat: Vec<CVec>,
    /// Errors `h_k - h_hat_k`.
    pub h_tilde: Vec<CVec>,
}

/// Simulates `r_k = h_k + (1/sqrt(tau p)) sum_i G A Phi_{w_i} v_i + z_k / sqrt(tau p)`
/// and applies the MMSE filter. Each observation `r_k` gets its own
/// independent draws of `v_i ~ CN(0, sigma_v^2 I)` for every user `i` and of
/// `z_k ~ CN(0, sigma^2 I)`; this reproduces the noise covariance in `Q_k`.
pub fn simulate_pilot_estimate<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    stats: &EstimationStatistics,
    config: &ScenarioConfig,
    rng: &mut R,
) -> PilotEstimate {
    let sys = &config.system;
    let (m, n) = (scenario.m(), scenario.n());
    let inv = 1.0 / (sys.tau as f64 * sys.p_pilot).sqrt();
    let sv = sys.sigma_v2.sqrt();
    let sz = sys.sigma2.sqrt();
    let phis = [state.pbm_diagonal(Region::T), state.pbm_diagonal(Region::R)];
    let amp: Vec<f64> = state.alpha.iter().map(|a| a.sqrt()).collect();
    let mut observation = Vec::with_capacity(scenario.k());
    let mut h_hat = Vec::with_capacity(scenario.k());
    let mut h_tilde = Vec::with_capacity(scenario.k());
    for k in 0..scenario.k() {
        let mut surface_noise = CVec::zeros(n);
        if n > 0 && sys.sigma_v2 > 0.0 {
            for user in &scenario.users {
                let phi = &phis[user.region.index()];
                for i in 0..n {
                    surface_noise[i] += linalg::complex_gaussian(rng) * (phi[i] * amp[i] * sv);
                }
            }
        }
        let z = linalg::complex_gaussian_vec(rng, m) * Complex64::new(sz, 0.0);
        let noise = (&realization.g * surface_noise + z) * Complex64::new(inv, 0.0);
        let r = &realization.h[k] + noise;
        let est = &stats.filter[k] * &r;
        h_tilde.push(&realization.h[k] - &est);
        h_hat.push(est);
        observation.push(r);
    }
    PilotEstimate {
        observation,
        h_hat,
        h_tilde,
    }
}

/// Statistical or literal incident signal power per surface element.
pub fn incident_power(scenario: &ScenarioStatistics, stats: &EstimationStatistics, config: &ScenarioConfig) -> Vec<f64> {
    incident_power_from_terms(scenario, &stats.terms, config)
}

pub(crate) fn incident_power_from_terms(
    scenario: &ScenarioStatistics,
    terms: &SpectralTerms,
    config: &ScenarioConfig,
) -> Vec<f64> {
    let d = scenario.ris_diagonal();
    let total_t: f64 = terms.t.iter().sum();
    match config.options.incident_power {
        IncidentPower::Statistical => {
            // (lambda P / K) beta_g sum_i tr(R_BS Psi_i) [R_RIS]_nn with lambda = 1 / sum_i tr(Psi_i).
            let sys = &config.system;
            let lam = if total_t > 0.0 { 1.0 / total_t } else { 0.0 };
            let scale = lam * sys.p_data / terms.k() as f64 * scenario.beta_tilde_g * terms.v.iter().sum::<f64>();
            d.iter().map(|r| scale * r).collect()
        }
        IncidentPower::Literal => vec![total_t; scenario.n()],
    }
}

/// Downlink power entering the `K / p` noise factor.
pub(crate) fn noise_power(config: &ScenarioConfig) -> f64 {
    match config.options.noise_scaling {
        NoiseScaling::DataPower => config.system.p_data,
        NoiseScaling::PilotPower => config.system.p_pilot,
    }
}

/// NMSE of `user` for growing surfaces `sizes = [(n_x, n_y), ...]` with the
/// pilot power scaled as `p = e_u / N`. The surface is passive with an equal
/// split and unit phases.
pub fn nmse_power_scaling(config: &ScenarioConfig, e_u: f64, sizes: &[(usize, usize)], user: usize) -> Result<Vec<f64>> {
    sizes
        .iter()
        .map(|&(n_x, n_y)| {
            let mut cfg = config.clone();
            cfg.system.n_x = n_x;
            cfg.system.n_y = n_y;
            cfg.system.p_pilot = e_u / (n_x * n_y) as f64;
            let scenario = build_scenario(&cfg)?;
            let state = SurfaceState::passive_uniform(scenario.n());
            let stats = estimation_statistics(&scenario, &state, &cfg)?;
            nmse(&stats, user)
        })
        .collect()
}
