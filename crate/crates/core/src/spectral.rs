//! Downlink sum spectral efficiency with MRT precoding.
//!
//! The closed form works in the eigenbasis of `R_BS` (see [`crate::estimation`]):
//! `S_k = T_k^2` and
//! `I_k = c_k sum_i V_i + (sigma_v^2 beta_tilde_k zeta_k + sigma^2) (K / P) sum_i T_i`,
//! where `T_i = tr(Psi_i)`, `V_i = tr(R_BS Psi_i)` and `tr(R_k Psi_i) = c_k V_i`.
//! The passive and surface-free variants are evaluated with dense matrix
//! inverses instead, which gives an independent route for the special cases.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, sample_realization};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::{
    self, estimation_statistics, independent_fading_scalars, independent_fading_scales, noise_power,
    simulate_pilot_estimate, spectral_terms, EstimationStatistics, SpectralTerms,
};
use crate::linalg::{self, CMat};
use crate::parallel::Execution;
use crate::scenario::ScenarioStatistics;
use crate::surface::SurfaceState;

/// Per-user SINR terms and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SEResult {
    pub signal: Vec<f64>,
    pub interference: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `b log2(1 + gamma_k)` in bit/s/Hz.
    pub se: Vec<f64>,
    pub pre_log: f64,
    pub sum_se: f64,
}

impl SEResult {
    pub fn from_terms(signal: Vec<f64>, interference: Vec<f64>, pre_log: f64) -> Self {
        let gamma: Vec<f64> = signal.iter().zip(&interference).map(|(s, i)| s / i).collect();
        let se: Vec<f64> = gamma.iter().map(|g| pre_log * g.ln_1p() / std::f64::consts::LN_2).collect();
        let sum_se = se.iter().sum();
        Self {
            signal,
            interference,
            gamma,
            se,
            pre_log,
            sum_se,
        }
    }

    pub fn k(&self) -> usize {
        self.se.len()
    }
}

/// `lambda = 1 / sum_i tr(Psi_i)`.
pub fn lambda_normalization(stats: &EstimationStatistics) -> Result<f64> {
    lambda_from_traces(&stats.terms.t)
}

pub(crate) fn lambda_from_traces(t: &[f64]) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::InvalidArgument("no users".into()));
    }
    let total: f64 = t.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("sum of estimate traces is zero".into()));
    }
    Ok(1.0 / total)
}

/// Noise weight `sigma_v^2 beta_tilde_k zeta_k + sigma^2` of user `k`.
pub(crate) fn noise_weight(scenario: &ScenarioStatistics, terms: &SpectralTerms, config: &ScenarioConfig, k: usize) -> f64 {
    config.system.sigma_v2 * scenario.users[k].beta_tilde * terms.zeta[k] + config.system.sigma2
}

/// Closed form from precomputed spectral terms.
pub fn se_from_terms(scenario: &ScenarioStatistics, terms: &SpectralTerms, config: &ScenarioConfig) -> SEResult {
    let k_users = terms.k();
    let sum_t: f64 = terms.t.iter().sum();
    let sum_v: f64 = terms.v.iter().sum();
    let noise_scale = k_users as f64 / noise_power(config) * sum_t;
    let signal = terms.t.iter().map(|t| t * t).collect();
    let interference = (0..k_users)
        .map(|k| terms.c[k] * sum_v + noise_weight(scenario, terms, config, k) * noise_scale)
        .collect();
    SEResult::from_terms(signal, interference, config.system.pre_log())
}

/// Closed-form SE for `state` with statistics already computed for it.
pub fn se_closed_form(
    scenario: &ScenarioStatistics,
    _state: &SurfaceState,
    stats: &EstimationStatistics,
    config: &ScenarioConfig,
) -> Result<SEResult> {
    let res = se_from_terms(scenario, &stats.terms, config);
    check(&res)?;
    Ok(res)
}

/// Computes the spectral terms for `state` and evaluates the closed form.
pub fn evaluate_se(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<SEResult> {
    let terms = spectral_terms(scenario, state, config)?;
    let res = se_from_terms(scenario, &terms, config);
    check(&res)?;
    Ok(res)
}

fn check(res: &SEResult) -> Result<()> {
    for k in 0..res.k() {
        if !(res.signal[k] >= 0.0 && res.interference[k] > 0.0 && res.se[k].is_finite()) {
            return Err(Error::Numeric(format!(
                "user {k}: S = {:e}, I = {:e}",
                res.signal[k], res.interference[k]
            )));
        }
    }
    Ok(())
}

/// Passive STAR-RIS SE: `alpha = 1`, no surface noise, `Q = (R + sigma^2/(tau p) I)^{-1}`,
/// evaluated with dense inverses.
pub fn se_passive(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<SEResult> {
    if let Some(i) = state.alpha.iter().position(|&a| a != 1.0) {
        return Err(Error::InvalidState(format!("passive SE needs alpha = 1, element {i} has {}", state.alpha[i])));
    }
    let m = scenario.m();
    let k_users = scenario.k();
    let s = config.system.pilot_noise();
    let mut r = Vec::with_capacity(k_users);
    let mut psi = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let rk = channel::covariance_rk(scenario, state, k)?;
        let kernel = &rk + CMat::identity(m, m) * Complex64::new(s, 0.0);
        let q = linalg::hpd_inverse(&kernel)?;
        psi.push(&rk * q * &rk);
        r.push(rk);
    }
    let traces: Vec<f64> = psi.iter().map(|p| linalg::trace(p).re).collect();
    let sum_t: f64 = traces.iter().sum();
    let noise = k_users as f64 * config.system.sigma2 / noise_power(config) * sum_t;
    let signal = traces.iter().map(|t| t * t).collect();
    let interference = (0..k_users)
        .map(|k| psi.iter().map(|p| linalg::trace_product(&r[k], p).re).sum::<f64>() + noise)
        .collect();
    let res = SEResult::from_terms(signal, interference, config.system.pre_log());
    check(&res)?;
    Ok(res)
}

/// SE with the surface switched off (`beta_hat = beta_tilde = 0`), dense route.
pub fn se_no_ris(scenario: &ScenarioStatistics, config: &ScenarioConfig) -> Result<SEResult> {
    let off = scenario.without_surface()?;
    se_passive(&off, &SurfaceState::passive_uniform(off.n()), config)
}

/// Surface-free SE with `R_BS = I` in scalar form, from the direct path losses.
pub fn se_no_ris_uncorrelated_scalar(beta_bar: &[f64], m: usize, config: &ScenarioConfig) -> SEResult {
    let sys = &config.system;
    let s = sys.pilot_noise();
    let k_users = beta_bar.len() as f64;
    let psi: Vec<f64> = beta_bar.iter().map(|b| b * b / (b + s)).collect();
    let sum_psi: f64 = psi.iter().sum();
    let mf = m as f64;
    let signal = psi.iter().map(|p| p * p * mf).collect();
    let interference = beta_bar
        .iter()
        .map(|b| b * sum_psi + k_users * sys.sigma2 / noise_power(config) * sum_psi)
        .collect();
    SEResult::from_terms(signal, interference, sys.pre_log())
}

pub fn se_no_ris_uncorrelated(scenario: &ScenarioStatistics, config: &ScenarioConfig) -> SEResult {
    let beta: Vec<f64> = scenario.users.iter().map(|u| u.beta_bar).collect();
    se_no_ris_uncorrelated_scalar(&beta, scenario.m(), config)
}

/// Limit of the surface-free uncorrelated SE under `p = E_d / sqrt(M)` (pilot
/// and data), `M -> infinity`: `b log2(1 + tau E_d^2 beta_k^4 / (sigma^4 K sum_i beta_i^2))`.
pub fn rate33_limit(beta_bar: &[f64], e_d: f64, config: &ScenarioConfig) -> SEResult {
    let sys = &config.system;
    let k_users = beta_bar.len() as f64;
    let sum_sq: f64 = beta_bar.iter().map(|b| b * b).sum();
    let sigma4 = sys.sigma2 * sys.sigma2;
    let signal = beta_bar
        .iter()
        .map(|b| sys.tau as f64 * e_d * e_d * b.powi(4) / sigma4)
        .collect();
    let interference = vec![k_users * sum_sq; beta_bar.len()];
    SEResult::from_terms(signal, interference, sys.pre_log())
}

/// Independent-fading SE in scalar form:
/// `gamma_k = M psi_k^2 / (sum_i ebar_k psi_i + w_k (K / P) sum_i psi_i)` with
/// `psi_i = ebar_i^2 / (ebar_i + n)`.
pub fn se_independent_fading(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<SEResult> {
    let (l_bs, l_ris) = independent_fading_scales(scenario)?;
    let k_users = scenario.k();
    let mut ebar = Vec::with_capacity(k_users);
    let mut psi = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let (e, n) = independent_fading_scalars(scenario, state, config, k, l_bs, l_ris);
        psi.push(e * e / (e + n));
        ebar.push(e);
    }
    let sys = &config.system;
    let mf = scenario.m() as f64;
    let sum_psi: f64 = psi.iter().sum();
    let signal = psi.iter().map(|p| p * p * mf).collect();
    let interference = (0..k_users)
        .map(|k| {
            let u = &scenario.users[k];
            let beta = state.beta(u.region);
            let zeta: f64 = (0..scenario.n())
                .map(|n| state.alpha[n] * beta[n] * beta[n] * u.steering[n].norm_sqr())
                .sum();
            let w = sys.sigma_v2 * u.beta_tilde * zeta + sys.sigma2;
            ebar[k] * sum_psi + w * k_users as f64 / noise_power(config) * sum_psi
        })
        .collect();
    Ok(SEResult::from_terms(signal, interference, sys.pre_log()))
}

/// Monte-Carlo estimate of the UatF terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSE {
    pub estimate: SEResult,
    pub signal_stderr: Vec<f64>,
    pub interference_stderr: Vec<f64>,
    pub se_stderr: Vec<f64>,
    /// 95% half-widths, `1.96 * se_stderr`.
    pub se_half_width: Vec<f64>,
    /// Sample mean of `tr(F F^H)` with `F = [h_hat_1, ..., h_hat_K]`.
    pub mean_precoder_energy: f64,
    pub n_realizations: usize,
}

/// Per-realization samples: for every user `(Re x, Im x, |x|^2, y)` with
/// `x = h_k^H h_hat_k` and `y = sum_{i != k} |h_k^H h_hat_i|^2`.
struct Sample {
    per_user: Vec<[f64; 4]>,
    energy: f64,
}

/// Generator for realization `index` of a run seeded with `seed`.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Monte-Carlo UatF evaluation with MRT `f_i = h_hat_i` from simulated pilots.
///
/// Realization `r` uses [`realization_rng`]`(seed, r)`; samples are reduced in
/// index order, so the result does not depend on `execution`. The surface
/// noise term `||q_k^H Phi^H A||^2` is deterministic and evaluated exactly, and
/// `lambda` is the statistical normalization `1 / sum_i tr(Psi_i)`.
pub fn se_monte_carlo(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    config: &ScenarioConfig,
    n_realizations: usize,
    seed: u64,
    execution: Execution,
) -> Result<MonteCarloSE> {
    if n_realizations < 2 {
        return Err(Error::InvalidArgument("at least two realizations are required".into()));
    }
    let stats = estimation_statistics(scenario, state, config)?;
    let k_users = scenario.k();
    let samples: Vec<Sample> = execution.map(n_realizations, |r| {
        let mut rng = realization_rng(seed, r as u64);
        let real = sample_realization(scenario, state, &mut rng);
        let est = simulate_pilot_estimate(&real, scenario, state, &stats, config, &mut rng);
        let per_user = (0..k_users)
            .map(|k| {
                let x = real.h[k].dotc(&est.h_hat[k]);
                let y: f64 = (0..k_users)
                    .filter(|&i| i != k)
                    .map(|i| real.h[k].dotc(&est.h_hat[i]).norm_sqr())
                    .sum();
                [x.re, x.im, x.norm_sqr(), y]
            })
            .collect();
        let energy = est.h_hat.iter().map(|h| h.norm_squared()).sum();
        Sample { per_user, energy }
    });

    let n = n_realizations as f64;
    let lambda = lambda_normalization(&stats)?;
    let k_f = k_users as f64;
    let pre_log = config.system.pre_log();
    let mut signal = Vec::with_capacity(k_users);
    let mut interference = Vec::with_capacity(k_users);
    let mut signal_stderr = Vec::with_capacity(k_users);
    let mut interference_stderr = Vec::with_capacity(k_users);
    let mut se_stderr = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mut mean = [0.0; 4];
        for s in &samples {
            for j in 0..4 {
                mean[j] += s.per_user[k][j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = [[0.0; 4]; 4];
        for s in &samples {
            let d: Vec<f64> = (0..4).map(|j| s.per_user[k][j] - mean[j]).collect();
            for a in 0..4 {
                for b in 0..4 {
                    cov[a][b] += d[a] * d[b];
                }
            }
        }
        cov.iter_mut().flatten().for_each(|c| *c /= n - 1.0);
        let [a, b, m2, my] = mean;
        let sig = a * a + b * b;
        // Unbiased variance of x: (n / (n - 1)) (mean|x|^2 - |mean x|^2).
        let var = (m2 - sig) * n / (n - 1.0);
        let noise = noise_weight(scenario, &stats.terms, config, k) * k_f / (noise_power(config) * lambda);
        let int = var + my + noise;
        let delta = |g: [f64; 4]| -> f64 {
            let mut acc = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    acc += g[i] * cov[i][j] * g[j];
                }
            }
            (acc.max(0.0) / n).sqrt()
        };
        signal_stderr.push(delta([2.0 * a, 2.0 * b, 0.0, 0.0]));
        interference_stderr.push(delta([-2.0 * a, -2.0 * b, 1.0, 1.0]));
        let gamma = sig / int;
        let dse = pre_log / (std::f64::consts::LN_2 * (1.0 + gamma));
        let dg_da = 2.0 * a * (int + sig) / (int * int);
        let dg_db = 2.0 * b * (int + sig) / (int * int);
        let dg_dm = -sig / (int * int);
        se_stderr.push(delta([dse * dg_da, dse * dg_db, dse * dg_dm, dse * dg_dm]));
        signal.push(sig);
        interference.push(int);
    }
    let estimate = SEResult::from_terms(signal, interference, pre_log);
    let se_half_width = se_stderr.iter().map(|s| 1.96 * s).collect();
    let mean_precoder_energy = samples.iter().map(|s| s.energy).sum::<f64>() / n;
    Ok(MonteCarloSE {
        estimate,
        signal_stderr,
        interference_stderr,
        se_stderr,
        se_half_width,
        mean_precoder_energy,
        n_realizations,
    })
}

/// Exact SE under `p = E_d / N^2` (pilot and data) for growing surfaces,
/// evaluated with the independent-fading scalar form on identity correlations.
pub fn se_power_scaled_by_surface(
    config: &ScenarioConfig,
    e_d: f64,
    sizes: &[(usize, usize)],
) -> Result<Vec<SEResult>> {
    sizes
        .iter()
        .map(|&(n_x, n_y)| {
            let mut cfg = config.clone();
            cfg.system.n_x = n_x;
            cfg.system.n_y = n_y;
            let n = (n_x * n_y) as f64;
            cfg.system.p_pilot = e_d / (n * n);
            cfg.system.p_data = e_d / (n * n);
            let scenario = crate::scenario::build_scenario(&cfg)?.with_independent_fading(1.0, 1.0)?;
            let state = SurfaceState::passive_uniform(scenario.n());
            se_independent_fading(&scenario, &state, &cfg)
        })
        .collect()
}

/// Convenience: statistics plus closed form in one call.
pub fn se_for_state(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<(EstimationStatistics, SEResult)> {
    let stats = estimation::estimation_statistics(scenario, state, config)?;
    let res = se_closed_form(scenario, state, &stats, config)?;
    Ok((stats, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BsCorrelationModel, RisCorrelationModel, SystemConfig};
    use crate::scenario::build_scenario;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn desk() -> (ScenarioConfig, ScenarioStatistics, SurfaceState) {
        let config = ScenarioConfig::default();
        let scenario = build_scenario(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = SurfaceState::random_start(scenario.n(), &mut rng);
        (config, scenario, state)
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_from_traces(&[2.0]).unwrap(), 0.5);
        let t = [1.0, 3.0, 0.5];
        let scaled: Vec<f64> = t.iter().map(|x| x * 7.0).collect();
        assert!(rel(lambda_from_traces(&scaled).unwrap(), lambda_from_traces(&t).unwrap() / 7.0) < 1e-15);
        assert!(lambda_from_traces(&[0.0]).is_err());
        assert!(lambda_from_traces(&[]).is_err());
    }

    #[test]
    fn result_invariants() {
        let (config, scenario, state) = desk();
        let res = evaluate_se(&scenario, &state, &config).unwrap();
        assert_eq!(res.pre_log, config.system.pre_log());
        assert!(rel(res.sum_se, res.se.iter().sum()) < 1e-15);
        for k in 0..res.k() {
            assert!(res.signal[k] >= 0.0 && res.interference[k] > 0.0);
            let direct = res.pre_log * (1.0 + res.signal[k] / res.interference[k]).log2();
            assert!(rel(res.se[k], direct) < 1e-12);
        }
    }

    #[test]
    fn passive_matches_general_form() {
        let (mut config, scenario, mut state) = desk();
        config.system.sigma_v2 = 0.0;
        state.alpha = vec![1.0; scenario.n()];
        let general = evaluate_se(&scenario, &state, &config).unwrap();
        let passive = se_passive(&scenario, &state, &config).unwrap();
        for k in 0..general.k() {
            assert!(rel(general.se[k], passive.se[k]) < 1e-10, "{} vs {}", general.se[k], passive.se[k]);
        }
        state.alpha[0] = 2.0;
        assert!(se_passive(&scenario, &state, &config).is_err());
    }

    #[test]
    fn surface_off_and_no_elements_match_no_ris() {
        let (config, scenario, state) = desk();
        let reference = se_no_ris(&scenario, &config).unwrap();
        let off = scenario.without_surface().unwrap();
        let general = evaluate_se(&off, &state, &config).unwrap();
        let empty = scenario.with_no_elements().unwrap();
        let passive_empty = se_passive(&empty, &SurfaceState::passive_uniform(0), &config).unwrap();
        for k in 0..reference.k() {
            assert!(rel(general.se[k], reference.se[k]) < 1e-10);
            assert!(rel(passive_empty.se[k], reference.se[k]) < 1e-10);
        }
    }

    #[test]
    fn no_ris_uncorrelated_scalar_matches_general() {
        let (mut config, _, state) = desk();
        config.correlation.bs_model = BsCorrelationModel::Identity;
        let scenario = build_scenario(&config).unwrap().without_surface().unwrap();
        let general = evaluate_se(&scenario, &state, &config).unwrap();
        let scalar = se_no_ris_uncorrelated(&scenario, &config);
        for k in 0..general.k() {
            assert!(rel(general.se[k], scalar.se[k]) < 1e-10);
        }
        let beta: Vec<f64> = scenario.users.iter().map(|u| u.beta_bar).collect();
        let seq: Vec<f64> = [4, 8, 16, 32].iter().map(|&m| se_no_ris_uncorrelated_scalar(&beta, m, &config).sum_se).collect();
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn independent_fading_scalar_matches_general() {
        let (config, scenario, state) = desk();
        let scenario = scenario.with_independent_fading(0.8, 1.4).unwrap();
        let mut state = state;
        state.alpha = (0..scenario.n()).map(|i| 1.0 + (i % 5) as f64).collect();
        let general = evaluate_se(&scenario, &state, &config).unwrap();
        let scalar = se_independent_fading(&scenario, &state, &config).unwrap();
        for k in 0..general.k() {
            assert!(rel(general.se[k], scalar.se[k]) < 1e-10);
        }
    }

    #[test]
    fn independent_fading_saturates_in_n() {
        let (mut config, _, _) = desk();
        config.correlation.ris_model = crate::config::RisCorrelationModel::Identity;
        let seq: Vec<f64> = (1..=5)
            .map(|p| {
                let mut c = config.clone();
                c.system.n_x = 1 << p;
                c.system.n_y = 1 << p;
                let sc = build_scenario(&c).unwrap().with_independent_fading(1.0, 1.0).unwrap();
                se_independent_fading(&sc, &SurfaceState::passive_uniform(sc.n()), &c).unwrap().sum_se
            })
            .collect();
        let steps: Vec<f64> = seq.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(steps.last().unwrap() < &(0.2 * steps[0]), "{seq:?}");
    }

    #[test]
    fn surface_power_scaling_collapses_in_exact_form() {
        // With p = E_d / N^2 the exact independent-fading SINR decays: the
        // estimate energy falls like 1/N while the noise term grows.
        let (config, _, _) = desk();
        let seq = se_power_scaled_by_surface(&config, 1e-2, &[(4, 4), (8, 8), (16, 16), (32, 32)]).unwrap();
        let sums: Vec<f64> = seq.iter().map(|r| r.sum_se).collect();
        assert!(sums.windows(2).all(|w| w[1] < w[0]), "{sums:?}");
    }

    #[test]
    fn rate33_limit_is_approached() {
        let (config, scenario, _) = desk();
        let beta: Vec<f64> = scenario.users.iter().map(|u| u.beta_bar).collect();
        let bmax = beta.iter().cloned().fold(0.0, f64::max);
        // E_d chosen so sigma^2 sqrt(M) / (tau E_d) dominates beta at M = 10^6.
        let tau = config.system.tau as f64;
        let e_d = config.system.sigma2 * 1e3 / (tau * bmax * 1e3);
        let limit = rate33_limit(&beta, e_d, &config).sum_se;
        let seq: Vec<f64> = [1e2, 1e4, 1e6]
            .iter()
            .map(|&m: &f64| {
                let mut c = config.clone();
                c.system.p_pilot = e_d / m.sqrt();
                c.system.p_data = e_d / m.sqrt();
                se_no_ris_uncorrelated_scalar(&beta, m as usize, &c).sum_se
            })
            .collect();
        let gaps: Vec<f64> = seq.iter().map(|s| (s - limit).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{seq:?} -> {limit}");
        assert!(rel(*seq.last().unwrap(), limit) < 0.02);
    }

    #[test]
    fn monte_carlo_deterministic_term_and_modes() {
        let (config, scenario, state) = small_mc();
        let a = se_monte_carlo(&scenario, &state, &config, 200, 5, Execution::Sequential).unwrap();
        let b = se_monte_carlo(&scenario, &state, &config, 200, 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(se_monte_carlo(&scenario, &state, &config, 1, 5, Execution::Sequential).is_err());
        // Deterministic noise norm: ||q_k^H Phi^H A||^2 = beta_tilde_k sum alpha beta^2.
        let real = sample_realization(&scenario, &state, &mut realization_rng(1, 0));
        for k in 0..scenario.k() {
            let u = &scenario.users[k];
            let phi = state.pbm_diagonal(u.region);
            let norm: f64 = (0..scenario.n())
                .map(|n| (real.q[k][n].conj() * phi[n].conj() * state.alpha[n].sqrt()).norm_sqr())
                .sum();
            let closed = u.beta_tilde * state.weighted_gain(u.region, None);
            assert!(rel(norm, closed) < 1e-12);
        }
    }

    fn small_mc() -> (ScenarioConfig, ScenarioStatistics, SurfaceState) {
        let config = ScenarioConfig {
            system: SystemConfig {
                m: 8,
                n_x: 2,
                n_y: 4,
                ..SystemConfig::default()
            },
            ..ScenarioConfig::default()
        };
        let scenario = build_scenario(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let state = SurfaceState::random_start(scenario.n(), &mut rng);
        (config, scenario, state)
    }

    #[test]
    fn monte_carlo_half_width_shrinks_like_sqrt_two() {
        let (config, scenario, state) = small_mc();
        let a = se_monte_carlo(&scenario, &state, &config, 2000, 1, Execution::default()).unwrap();
        let b = se_monte_carlo(&scenario, &state, &config, 4000, 1, Execution::default()).unwrap();
        for k in 0..scenario.k() {
            let ratio = a.se_half_width[k] / b.se_half_width[k];
            assert!((ratio - 2f64.sqrt()).abs() < 0.25, "user {k}: ratio {ratio}");
        }
    }

    #[test]
    fn monte_carlo_precoder_energy_matches_lambda() {
        let (config, scenario, state) = small_mc();
        let stats = estimation_statistics(&scenario, &state, &config).unwrap();
        let mc = se_monte_carlo(&scenario, &state, &config, 10_000, 2, Execution::default()).unwrap();
        let inv_lambda = 1.0 / lambda_normalization(&stats).unwrap();
        assert!(rel(mc.mean_precoder_energy, inv_lambda) < 0.03, "{} vs {inv_lambda}", mc.mean_precoder_energy);
    }

    #[test]
    fn monte_carlo_matches_passive_closed_form_with_identity_surface_correlation() {
        // With R_RIS diagonal and sigma_v^2 = 0 the closed form is exact up to
        // the cross-user coupling through the shared G; a single user isolates it.
        let mut config = ScenarioConfig {
            system: SystemConfig {
                m: 8,
                n_x: 2,
                n_y: 4,
                k_t: 1,
                k_r: 0,
                tau: 1,
                ..SystemConfig::default()
            },
            ..ScenarioConfig::default()
        };
        config.system.sigma_v2 = 0.0;
        config.correlation.ris_model = RisCorrelationModel::Identity;
        let scenario = build_scenario(&config).unwrap();
        let state = SurfaceState::passive_uniform(scenario.n());
        let closed = se_passive(&scenario, &state, &config).unwrap();
        let mc = se_monte_carlo(&scenario, &state, &config, 4000, 9, Execution::default()).unwrap();
        let k = 0;
        assert!(
            (closed.se[k] - mc.estimate.se[k]).abs() < 3.0 * mc.se_stderr[k] + 1e-3 * closed.se[k],
            "closed {} mc {} +- {}",
            closed.se[k],
            mc.estimate.se[k],
            mc.se_stderr[k]
        );
    }
}
