//! Central finite-difference oracle for the analytic gradients.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gradients::{evaluate_gradients, GradientBundle};
use super::pgam::random_alpha;
use crate::config::{ScenarioConfig, SystemConfig};
use crate::error::Result;
use crate::scenario::{build_scenario, ScenarioStatistics};
use crate::spectral::{evaluate_se, realization_rng};
use crate::surface::SurfaceState;

/// Per-block `||analytic - fd||_inf / ||fd||_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub theta: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Largest finite-difference entry per block, to spot vanishing blocks.
    pub fd_scale: [f64; 3],
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.theta.max(self.beta).max(self.alpha)
    }
}

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn central<F: FnMut(&mut SurfaceState, f64)>(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    state: &SurfaceState,
    h: f64,
    mut perturb: F,
) -> Result<f64> {
    let mut plus = state.clone();
    perturb(&mut plus, h);
    let mut minus = state.clone();
    perturb(&mut minus, -h);
    let fp = evaluate_se(scenario, &plus, config)?.sum_se;
    let fm = evaluate_se(scenario, &minus, config)?.sum_se;
    Ok((fp - fm) / (2.0 * h))
}

/// Unconstrained finite-difference gradient of the closed-form SE with the
/// same layout as [`GradientBundle`]. Complex entries are `dRe + i dIm`.
pub fn finite_difference(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<FdGradient> {
    let n = state.n();
    let mut out = FdGradient {
        theta_t: Vec::with_capacity(n),
        theta_r: Vec::with_capacity(n),
        beta_t: Vec::with_capacity(n),
        beta_r: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
    };
    for i in 0..n {
        for (region_t, dst) in [(true, &mut out.theta_t), (false, &mut out.theta_r)] {
            let z = if region_t { state.theta_t[i] } else { state.theta_r[i] };
            let hr = step(z.re);
            let hi = step(z.im);
            let re = central(scenario, config, state, hr, |s, h| {
                let t = if region_t { &mut s.theta_t } else { &mut s.theta_r };
                t[i] += Complex64::new(h, 0.0);
            })?;
            let im = central(scenario, config, state, hi, |s, h| {
                let t = if region_t { &mut s.theta_t } else { &mut s.theta_r };
                t[i] += Complex64::new(0.0, h);
            })?;
            dst.push(Complex64::new(re, im));
        }
        let h = step(state.beta_t[i]);
        out.beta_t.push(central(scenario, config, state, h, |s, h| s.beta_t[i] += h)?);
        let h = step(state.beta_r[i]);
        out.beta_r.push(central(scenario, config, state, h, |s, h| s.beta_r[i] += h)?);
        let h = step(state.alpha[i]).min(0.5 * state.alpha[i]);
        out.alpha.push(central(scenario, config, state, h, |s, h| s.alpha[i] += h)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    pub theta_t: Vec<Complex64>,
    pub theta_r: Vec<Complex64>,
    pub beta_t: Vec<f64>,
    pub beta_r: Vec<f64>,
    pub alpha: Vec<f64>,
}

fn rel_inf(analytic: impl Iterator<Item = f64>, fd: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (a, f) in analytic.zip(fd) {
        diff = diff.max((a - f).abs());
        scale = scale.max(f.abs());
    }
    let rel = if scale > 0.0 {
        diff / scale
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (rel, scale)
}

fn complex_parts(v: &[Complex64]) -> impl Iterator<Item = f64> + '_ {
    v.iter().flat_map(|z| [z.re, z.im])
}

pub fn compare(analytic: &GradientBundle, fd: &FdGradient) -> GradientCheck {
    let (theta, s0) = rel_inf(
        complex_parts(&analytic.g_theta_t).chain(complex_parts(&analytic.g_theta_r)),
        complex_parts(&fd.theta_t).chain(complex_parts(&fd.theta_r)),
    );
    let (beta, s1) = rel_inf(
        analytic.g_beta_t.iter().chain(&analytic.g_beta_r).copied(),
        fd.beta_t.iter().chain(&fd.beta_r).copied(),
    );
    let (alpha, s2) = rel_inf(analytic.g_alpha.iter().copied(), fd.alpha.iter().copied());
    GradientCheck {
        theta,
        beta,
        alpha,
        fd_scale: [s0, s1, s2],
    }
}

/// Analytic gradients at `state` checked against central differences.
pub fn gradient_check(scenario: &ScenarioStatistics, state: &SurfaceState, config: &ScenarioConfig) -> Result<GradientCheck> {
    let analytic = evaluate_gradients(scenario, state, config)?;
    let fd = finite_difference(scenario, state, config)?;
    Ok(compare(&analytic, &fd))
}

/// Acceptance threshold on the max relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<GradientCheck>,
    pub max_relative_error: f64,
    /// Per-block maxima over all states.
    pub worst: GradientCheck,
}

/// Small scenario used by the finite-difference suite: `M = 4`, `N = 2 x 3`,
/// one user per region.
pub fn gradcheck_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        system: SystemConfig {
            m: 4,
            n_x: 2,
            n_y: 3,
            k_t: 1,
            k_r: 1,
            ..SystemConfig::default()
        },
        ..ScenarioConfig::default()
    }
}

/// Random feasible ES state: uniform phases, amplitude split angle uniform in
/// `[0, pi/2]`, `alpha ~ U[1, c2]` after the total-power rescale.
pub fn random_feasible_state<R: Rng + ?Sized>(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<SurfaceState> {
    let n = scenario.n();
    let mut state = SurfaceState::random_start(n, rng);
    for i in 0..n {
        let a = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
        state.beta_t[i] = a.cos();
        state.beta_r[i] = a.sin();
    }
    state.alpha = random_alpha(scenario, config, &state, rng)?;
    Ok(state)
}

/// Checks `n_states` random feasible states of [`gradcheck_config`].
pub fn gradcheck_suite(n_states: usize, seed: u64) -> Result<GradcheckReport> {
    let config = gradcheck_config(seed);
    let scenario = build_scenario(&config)?;
    let checks = (0..n_states)
        .map(|i| {
            let mut rng = realization_rng(seed, i as u64);
            let state = random_feasible_state(&scenario, &config, &mut rng)?;
            gradient_check(&scenario, &state, &config)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = GradientCheck {
        theta: 0.0,
        beta: 0.0,
        alpha: 0.0,
        fd_scale: [0.0; 3],
    };
    for c in &checks {
        worst.theta = worst.theta.max(c.theta);
        worst.beta = worst.beta.max(c.beta);
        worst.alpha = worst.alpha.max(c.alpha);
        for j in 0..3 {
            worst.fd_scale[j] = worst.fd_scale[j].max(c.fd_scale[j]);
        }
    }
    Ok(GradcheckReport {
        max_relative_error: worst.max_relative_error(),
        checks,
        worst,
    })
}
