//! Small-scale channel realizations and the aggregated-channel covariance.
//!
//! Every user's aggregated channel is `h_k = d_k + G A Phi_{w_k} q_k` with
//! `G = sqrt(beta_g) R_BS^{1/2} D R_RIS^{1/2}`, `d_k = sqrt(beta_bar_k) R_BS^{1/2} c_k`
//! and the LoS surface-user link `q_k = sqrt(beta_tilde_k) a_N`. Its covariance is
//! `R_k = (beta_bar_k + beta_hat_k tau_k) R_BS` where `tau_k = g_k^H R_RIS g_k`,
//! `g_k = A Phi_{w_k} a_N`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::scenario::ScenarioStatistics;
use crate::surface::SurfaceState;

/// One Monte-Carlo draw of every channel in the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// BS to surface channel, `M x N`.
    pub g: CMat,
    /// Surface to user LoS channels, length `N`.
    pub q: Vec<CVec>,
    /// Direct BS to user channels, length `M`.
    pub d: Vec<CVec>,
    /// Aggregated channels, length `M`.
    pub h: Vec<CVec>,
    /// Fast-fading factor of `G`.
    pub d_fast: CMat,
    /// Fast-fading factors of the direct links.
    pub c_bar: Vec<CVec>,
}

/// `g_k = A Phi_{w_k} a_N` for user `k`.
pub fn effective_steering(scenario: &ScenarioStatistics, state: &SurfaceState, k: usize) -> CVec {
    let u = &scenario.users[k];
    let beta = state.beta(u.region);
    let theta = state.theta(u.region);
    CVec::from_iterator(
        scenario.n(),
        (0..scenario.n()).map(|n| u.steering[n] * theta[n] * (state.alpha[n].sqrt() * beta[n])),
    )
}

/// Pieces of the trace term for one user.
#[derive(Debug, Clone)]
pub struct TraceParts {
    pub tau: f64,
    /// `g_k = A Phi_{w_k} a_N`.
    pub g: Vec<Complex64>,
    /// Off-diagonal part of `R_RIS g_k`: `sum_{m != n} [R_RIS]_{nm} g_m`.
    pub off: Vec<Complex64>,
}

/// Trace term `tau_k = a_N^H Phi^H A R_RIS A Phi a_N`, evaluated as a quadratic form.
///
/// The diagonal of `R_RIS` contributes `[R_RIS]_nn alpha_n beta_n^2 |a_n|^2`, which
/// uses `|theta_n| = 1` directly, so the result does not depend on the phases
/// at all when `R_RIS` is diagonal.
pub fn trace_parts(scenario: &ScenarioStatistics, state: &SurfaceState, k: usize) -> Result<TraceParts> {
    let g: Vec<Complex64> = effective_steering(scenario, state, k).iter().copied().collect();
    let mut out = finish_trace_parts(scenario, state, &[k], vec![g])?;
    Ok(out.remove(0))
}

/// [`trace_parts`] for every user, sharing one pass over `R_RIS`.
pub fn trace_parts_all(scenario: &ScenarioStatistics, state: &SurfaceState) -> Result<Vec<TraceParts>> {
    let users: Vec<usize> = (0..scenario.k()).collect();
    let gs = users
        .iter()
        .map(|&k| effective_steering(scenario, state, k).iter().copied().collect())
        .collect();
    finish_trace_parts(scenario, state, &users, gs)
}

fn finish_trace_parts(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    users: &[usize],
    gs: Vec<Vec<Complex64>>,
) -> Result<Vec<TraceParts>> {
    let n = scenario.n();
    let r = &scenario.r_ris;
    let mut offs = vec![vec![linalg::ZERO; n]; users.len()];
    // R_RIS is exactly Hermitian, so row i is the conjugate of column i; the
    // column is contiguous in memory.
    for i in 0..n {
        let col = r.column(i);
        for (off, g) in offs.iter_mut().zip(&gs) {
            let mut acc = linalg::ZERO;
            for j in 0..n {
                if j != i {
                    acc += col[j].conj() * g[j];
                }
            }
            off[i] = acc;
        }
    }
    users
        .iter()
        .zip(gs.into_iter().zip(offs))
        .map(|(&k, (g, off))| {
            let u = &scenario.users[k];
            let beta = state.beta(u.region);
            let mut tau = 0.0;
            let mut scale = 0.0;
            for i in 0..n {
                let diag = r[(i, i)].re * state.alpha[i] * beta[i] * beta[i] * u.steering[i].norm_sqr();
                tau += diag + (g[i].conj() * off[i]).re;
                scale += diag;
            }
            // Tolerance relative to the diagonal mass so large amplifier gains do not trip it.
            if tau < -1e-12 * scale.max(1.0) {
                return Err(Error::Numeric(format!("user {k}: negative trace term {tau:e}")));
            }
            Ok(TraceParts {
                tau: tau.max(0.0),
                g,
                off,
            })
        })
        .collect()
}

pub fn trace_term(scenario: &ScenarioStatistics, state: &SurfaceState, k: usize) -> Result<f64> {
    Ok(trace_parts(scenario, state, k)?.tau)
}

/// Scalar `c_k` with `R_k = c_k R_BS`.
pub fn covariance_scale(scenario: &ScenarioStatistics, state: &SurfaceState, k: usize) -> Result<f64> {
    let u = &scenario.users[k];
    Ok(u.beta_bar + u.beta_hat * trace_term(scenario, state, k)?)
}

/// `R_k = beta_bar_k R_BS + beta_hat_k tau_k R_BS`.
pub fn covariance_rk(scenario: &ScenarioStatistics, state: &SurfaceState, k: usize) -> Result<CMat> {
    let c = covariance_scale(scenario, state, k)?;
    Ok(&scenario.r_bs * Complex64::new(c, 0.0))
}

/// Draws one realization. `D` and every `c_bar_k` are i.i.d. `CN(0, 1)`.
pub fn sample_realization<R: Rng + ?Sized>(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    rng: &mut R,
) -> ChannelRealization {
    let (m, n) = (scenario.m(), scenario.n());
    let d_fast = CMat::from_fn(m, n, |_, _| linalg::complex_gaussian(rng));
    let c_bar: Vec<CVec> = (0..scenario.k())
        .map(|_| linalg::complex_gaussian_vec(rng, m))
        .collect();
    assemble(scenario, state, d_fast, c_bar)
}

/// Builds a realization from given fast-fading factors.
pub fn assemble(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    d_fast: CMat,
    c_bar: Vec<CVec>,
) -> ChannelRealization {
    let g = (scenario.r_bs_sqrt() * &d_fast * scenario.r_ris_sqrt()) * Complex64::new(scenario.beta_tilde_g.sqrt(), 0.0);
    let mut q = Vec::with_capacity(scenario.k());
    let mut d = Vec::with_capacity(scenario.k());
    let mut h = Vec::with_capacity(scenario.k());
    for (k, u) in scenario.users.iter().enumerate() {
        let qk = &u.steering * Complex64::new(u.beta_tilde.sqrt(), 0.0);
        let dk = (scenario.r_bs_sqrt() * &c_bar[k]) * Complex64::new(u.beta_bar.sqrt(), 0.0);
        let phi = state.pbm_diagonal(u.region);
        let cascade = CVec::from_iterator(
            scenario.n(),
            (0..scenario.n()).map(|i| qk[i] * phi[i] * state.alpha[i].sqrt()),
        );
        let hk = &dk + &g * cascade;
        q.push(qk);
        d.push(dk);
        h.push(hk);
    }
    ChannelRealization {
        g,
        q,
        d,
        h,
        d_fast,
        c_bar,
    }
}
