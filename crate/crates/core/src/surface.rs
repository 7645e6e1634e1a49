//! Surface configuration (amplitudes, phases, amplifying coefficients), the
//! per-region beamforming matrices and the projections used by the optimizer.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::{incident_power, EstimationStatistics};
use crate::linalg::CMat;
use crate::scenario::ScenarioStatistics;

/// Tolerance of the unit-circle and unit-modulus invariants.
pub const STATE_TOLERANCE: f64 = 1e-9;

/// Moduli below this are treated as zero by the projections.
pub const DEGENERATE_MODULUS: f64 = 1e-12;

/// Which side of the surface a user is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Transmission region, behind the surface.
    #[serde(rename = "t")]
    T,
    /// Reflection region, facing the BS.
    #[serde(rename = "r")]
    R,
}

impl Region {
    pub const BOTH: [Region; 2] = [Region::T, Region::R];

    pub fn index(self) -> usize {
        match self {
            Region::T => 0,
            Region::R => 1,
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::T => "t",
            Region::R => "r",
        })
    }
}

/// Operating protocol of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Energy splitting: continuous amplitudes on the unit circle.
    ES,
    /// Mode switching: every element fully transmits or fully reflects.
    MS,
}

/// Optimization variables of the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceState {
    pub alpha: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub beta_r: Vec<f64>,
    pub theta_t: Vec<Complex64>,
    pub theta_r: Vec<Complex64>,
}

impl SurfaceState {
    pub fn new(
        alpha: Vec<f64>,
        beta_t: Vec<f64>,
        beta_r: Vec<f64>,
        theta_t: Vec<Complex64>,
        theta_r: Vec<Complex64>,
    ) -> Result<Self> {
        let s = Self {
            alpha,
            beta_t,
            beta_r,
            theta_t,
            theta_r,
        };
        s.validate(Protocol::ES)?;
        Ok(s)
    }

    /// Equal power split, unit phases, passive amplifiers.
    pub fn passive_uniform(n: usize) -> Self {
        let half = 0.5f64.sqrt();
        Self {
            alpha: vec![1.0; n],
            beta_t: vec![half; n],
            beta_r: vec![half; n],
            theta_t: vec![Complex64::new(1.0, 0.0); n],
            theta_r: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    /// Standard starting point: `beta = sqrt(0.5)`, phases uniform on `[0, 2pi)`,
    /// `alpha = 1`.
    pub fn random_start<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut s = Self::passive_uniform(n);
        s.theta_t = random_phases(n, rng);
        s.theta_r = random_phases(n, rng);
        s
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn beta(&self, region: Region) -> &[f64] {
        match region {
            Region::T => &self.beta_t,
            Region::R => &self.beta_r,
        }
    }

    pub fn theta(&self, region: Region) -> &[Complex64] {
        match region {
            Region::T => &self.theta_t,
            Region::R => &self.theta_r,
        }
    }

    /// Diagonal of the beamforming matrix for `region`: `beta_n theta_n`.
    pub fn pbm_diagonal(&self, region: Region) -> Vec<Complex64> {
        self.beta(region)
            .iter()
            .zip(self.theta(region))
            .map(|(b, t)| t * *b)
            .collect()
    }

    /// `sum_n alpha_n beta_n^2` for `region` (optionally weighted per element).
    pub fn weighted_gain(&self, region: Region, weights: Option<&[f64]>) -> f64 {
        self.alpha
            .iter()
            .zip(self.beta(region))
            .enumerate()
            .map(|(n, (a, b))| a * b * b * weights.map_or(1.0, |w| w[n]))
            .sum()
    }

    pub fn validate(&self, protocol: Protocol) -> Result<()> {
        let n = self.n();
        if [self.beta_t.len(), self.beta_r.len(), self.theta_t.len(), self.theta_r.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::InvalidState("all surface vectors must have length N".into()));
        }
        for i in 0..n {
            let (bt, br) = (self.beta_t[i], self.beta_r[i]);
            if !((bt * bt + br * br - 1.0).abs() <= STATE_TOLERANCE) {
                return Err(Error::InvalidState(format!(
                    "element {i}: beta_t^2 + beta_r^2 = {} != 1",
                    bt * bt + br * br
                )));
            }
            for th in [self.theta_t[i], self.theta_r[i]] {
                if !((th.norm() - 1.0).abs() <= STATE_TOLERANCE) {
                    return Err(Error::InvalidState(format!("element {i}: |theta| = {} != 1", th.norm())));
                }
            }
            if !(self.alpha[i] >= 1.0) || !self.alpha[i].is_finite() {
                return Err(Error::InvalidState(format!("element {i}: alpha = {} < 1", self.alpha[i])));
            }
            if protocol == Protocol::MS {
                let binary = |b: f64| b.abs() <= STATE_TOLERANCE || (b.abs() - 1.0).abs() <= STATE_TOLERANCE;
                if !(binary(bt) && binary(br)) {
                    return Err(Error::InvalidState(format!(
                        "element {i}: MS amplitudes ({bt}, {br}) are not binary"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surface state is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<surface state>".into(),
            message: e.to_string(),
        })?;
        s.validate(Protocol::ES)?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}

pub fn random_phases<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()))
        .collect()
}

/// `Phi_region = diag(beta_n theta_n)`.
pub fn pbm_matrix(state: &SurfaceState, region: Region) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_vec(state.pbm_diagonal(region)))
}

/// `A = diag(sqrt(alpha_n))`.
pub fn amplification_matrix(state: &SurfaceState) -> Result<DMatrix<f64>> {
    if let Some((i, a)) = state.alpha.iter().enumerate().find(|(_, a)| !(**a >= 1.0)) {
        return Err(Error::InvalidState(format!("element {i}: alpha = {a} < 1")));
    }
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        state.n(),
        state.alpha.iter().map(|a| a.sqrt()),
    )))
}

/// Entrywise `theta / |theta|`; near-zero entries map to `1 + 0j`.
pub fn project_theta(raw: &[Complex64]) -> Vec<Complex64> {
    raw.iter()
        .map(|z| {
            let r = z.norm();
            if r < DEGENERATE_MODULUS {
                Complex64::new(1.0, 0.0)
            } else {
                z / r
            }
        })
        .collect()
}

/// Pairwise normalization of `[beta_t; beta_r]` (length `2N`) onto the unit
/// circle. Signs are kept; a near-zero pair maps to `(sqrt(.5), sqrt(.5))`.
pub fn project_beta(raw: &[f64]) -> Vec<f64> {
    assert!(raw.len() % 2 == 0, "project_beta expects [beta_t; beta_r]");
    let n = raw.len() / 2;
    let mut out = vec![0.0; raw.len()];
    let half = 0.5f64.sqrt();
    for i in 0..n {
        let (a, b) = (raw[i], raw[i + n]);
        let r = a.hypot(b);
        if r < DEGENERATE_MODULUS {
            out[i] = half;
            out[i + n] = half;
        } else {
            out[i] = a / r;
            out[i + n] = b / r;
        }
    }
    out
}

/// Clamps each `alpha_n` to `[1, c2_n]`.
pub fn project_alpha(raw: &[f64], c2: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != c2.len() {
        return Err(Error::InvalidArgument("alpha and bound lengths differ".into()));
    }
    raw.iter()
        .zip(c2)
        .enumerate()
        .map(|(i, (&a, &hi))| {
            if !(hi >= 1.0) {
                Err(Error::Infeasible { element: i, bound: hi })
            } else {
                Ok(a.clamp(1.0, hi))
            }
        })
        .collect()
}

/// Rounds an ES state to the nearest MS state; ties go to transmission.
/// A negative amplitude on the kept side is folded into its phase so the
/// element's complex coefficient is unchanged.
pub fn ms_round(state: &SurfaceState) -> SurfaceState {
    let mut out = state.clone();
    for i in 0..state.n() {
        let (bt, br) = (state.beta_t[i], state.beta_r[i]);
        let transmit = bt * bt >= 0.5;
        out.beta_t[i] = if transmit { 1.0 } else { 0.0 };
        out.beta_r[i] = if transmit { 0.0 } else { 1.0 };
        if transmit && bt < 0.0 {
            out.theta_t[i] = -state.theta_t[i];
        }
        if !transmit && br < 0.0 {
            out.theta_r[i] = -state.theta_r[i];
        }
    }
    out
}

/// Amplifier bounds for the current iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBounds {
    /// Per-element upper bound `c2_n = P_n / (rho_n + sigma_v^2)`.
    pub c2: Vec<f64>,
    /// Incident signal power `rho_n`.
    pub incident: Vec<f64>,
    /// Whether `sum_n alpha_n (rho_n + sigma_v^2) <= P_R` for the given state.
    pub total_feasible: bool,
    /// Factor applied to `alpha - 1` to restore the total constraint (1 if feasible).
    pub scale: f64,
}

/// Per-element bounds and total-power check from given incident powers.
pub fn alpha_bounds_from_incident(
    alpha: &[f64],
    incident: &[f64],
    sigma_v2: f64,
    p_element: f64,
    p_total: f64,
) -> Result<AlphaBounds> {
    if let Some((i, r)) = incident.iter().enumerate().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
        return Err(Error::Numeric(format!("element {i}: invalid incident power {r}")));
    }
    let c2 = incident.iter().map(|r| p_element / (r + sigma_v2)).collect();
    let (total_feasible, scale) = total_power_scale(alpha, incident, sigma_v2, p_total);
    Ok(AlphaBounds {
        c2,
        incident: incident.to_vec(),
        total_feasible,
        scale,
    })
}

/// Returns `(feasible, s)` where `s` in `[0, 1]` scales `alpha - 1` so that
/// `sum_n (1 + s (alpha_n - 1)) (rho_n + sigma_v^2) <= P_R`.
pub fn total_power_scale(alpha: &[f64], incident: &[f64], sigma_v2: f64, p_total: f64) -> (bool, f64) {
    let base: f64 = incident.iter().map(|r| r + sigma_v2).sum();
    let excess: f64 = alpha
        .iter()
        .zip(incident)
        .map(|(a, r)| (a - 1.0) * (r + sigma_v2))
        .sum();
    if base + excess <= p_total {
        return (true, 1.0);
    }
    if excess <= 0.0 || base >= p_total {
        return (false, 0.0);
    }
    (false, ((p_total - base) / excess).clamp(0.0, 1.0))
}

/// Applies [`total_power_scale`] to `alpha`, keeping every entry `>= 1`.
pub fn enforce_total_power(alpha: &[f64], incident: &[f64], sigma_v2: f64, p_total: f64) -> Vec<f64> {
    let (ok, s) = total_power_scale(alpha, incident, sigma_v2, p_total);
    if ok {
        return alpha.to_vec();
    }
    alpha.iter().map(|a| 1.0 + s * (a - 1.0)).collect()
}

/// Bounds `c2` and the total-power report for `state` under `stats`.
pub fn alpha_upper_bounds(
    state: &SurfaceState,
    scenario: &ScenarioStatistics,
    stats: &EstimationStatistics,
    config: &ScenarioConfig,
) -> Result<AlphaBounds> {
    let incident = incident_power(scenario, stats, config);
    let sys = &config.system;
    alpha_bounds_from_incident(&state.alpha, &incident, sys.sigma_v2, sys.p_element, sys.p_surface_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pbm_examples() {
        let s = SurfaceState {
            beta_t: vec![1.0; 3],
            beta_r: vec![0.0; 3],
            ..SurfaceState::passive_uniform(3)
        };
        assert_eq!(pbm_matrix(&s, Region::T), CMat::identity(3, 3));
        assert_eq!(pbm_matrix(&s, Region::R), CMat::zeros(3, 3));

        let mut rng = rand::rng();
        let s = SurfaceState::random_start(4, &mut rng);
        let phi = pbm_matrix(&s, Region::T);
        for i in 0..4 {
            assert!((phi[(i, i)].norm() - 0.5f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn amplification_examples() {
        let s = SurfaceState::passive_uniform(3);
        assert_eq!(amplification_matrix(&s).unwrap(), DMatrix::identity(3, 3));
        let s = SurfaceState {
            alpha: vec![4.0],
            ..SurfaceState::passive_uniform(1)
        };
        assert_eq!(amplification_matrix(&s).unwrap()[(0, 0)], 2.0);
        let s = SurfaceState {
            alpha: vec![0.5],
            ..SurfaceState::passive_uniform(1)
        };
        assert!(matches!(amplification_matrix(&s), Err(Error::InvalidState(_))));
    }

    #[test]
    fn theta_projection_examples() {
        let z = Complex64::from_polar(2.0, PI / 3.0);
        let p = project_theta(&[z, Complex64::new(0.0, 0.0)]);
        assert!((p[0] - Complex64::from_polar(1.0, PI / 3.0)).norm() < 1e-15);
        assert_eq!(p[1], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn beta_projection_examples() {
        let p = project_beta(&[3.0, 1.0, -0.6, 4.0, 0.0, 0.8]);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[3] - 0.8).abs() < 1e-15);
        assert_eq!((p[1], p[4]), (1.0, 0.0));
        assert!((p[2] + 0.6).abs() < 1e-15 && (p[5] - 0.8).abs() < 1e-15);
        let d = project_beta(&[0.0, 0.0]);
        assert_eq!(d, vec![0.5f64.sqrt(); 2]);
    }

    #[test]
    fn alpha_projection_examples() {
        let c2 = [10.0, 10.0, 10.0];
        assert_eq!(project_alpha(&[0.5, 5.0, 50.0], &c2).unwrap(), vec![1.0, 5.0, 10.0]);
        match project_alpha(&[2.0, 2.0], &[3.0, 0.9]) {
            Err(Error::Infeasible { element, .. }) => assert_eq!(element, 1),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn ms_round_examples() {
        let s = SurfaceState {
            alpha: vec![1.0; 3],
            beta_t: vec![0.9, 0.5f64.sqrt(), 0.1],
            beta_r: vec![(1.0f64 - 0.81).sqrt(), 0.5f64.sqrt(), (1.0f64 - 0.01).sqrt()],
            theta_t: vec![Complex64::new(1.0, 0.0); 3],
            theta_r: vec![Complex64::new(0.0, 1.0); 3],
        };
        let m = ms_round(&s);
        assert_eq!(m.beta_t, vec![1.0, 1.0, 0.0]);
        assert_eq!(m.beta_r, vec![0.0, 0.0, 1.0]);
        assert_eq!(m.theta_r, s.theta_r);
        m.validate(Protocol::MS).unwrap();
        assert!(s.validate(Protocol::MS).is_err());
        assert_eq!(ms_round(&m), m);
    }

    #[test]
    fn noise_only_incident_power() {
        let b = alpha_bounds_from_incident(&[1.0; 2], &[0.0, 0.0], 1e-3, 2e-3, 1.0).unwrap();
        assert_eq!(b.c2, vec![2.0, 2.0]);
        assert!(b.total_feasible);
        assert!(alpha_bounds_from_incident(&[1.0], &[-1.0], 1e-3, 2e-3, 1.0).is_err());
    }

    #[test]
    fn total_power_boundary_is_feasible() {
        let alpha = [2.0, 3.0];
        let incident = [0.5, 0.25];
        let sv = 0.25;
        let total: f64 = alpha.iter().zip(&incident).map(|(a, r)| a * (r + sv)).sum();
        let b = alpha_bounds_from_incident(&alpha, &incident, sv, 10.0, total).unwrap();
        assert!(b.total_feasible);
        assert_eq!(b.scale, 1.0);
    }

    #[test]
    fn total_power_rescale_solves_scaling_equation() {
        // alpha uniform at 5, P_R half of the current total.
        let alpha = vec![5.0; 4];
        let incident = vec![0.1, 0.2, 0.3, 0.4];
        let sv = 0.05;
        let total: f64 = alpha.iter().zip(&incident).map(|(a, r)| a * (r + sv)).sum();
        let p_total = 0.5 * total;
        let (ok, s) = total_power_scale(&alpha, &incident, sv, p_total);
        assert!(!ok);
        // Independent route: the constraint is linear in s; solve by bisection.
        let g = |s: f64| -> f64 {
            alpha.iter().zip(&incident).map(|(a, r)| (1.0 + s * (a - 1.0)) * (r + sv)).sum::<f64>() - p_total
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!((s - lo).abs() < 1e-12);
        let fixed = enforce_total_power(&alpha, &incident, sv, p_total);
        assert!(fixed.iter().all(|a| *a >= 1.0));
        let new_total: f64 = fixed.iter().zip(&incident).map(|(a, r)| a * (r + sv)).sum();
        assert!(new_total <= p_total * (1.0 + 1e-12));
    }

    #[test]
    fn state_json_round_trip() {
        let mut rng = rand::rng();
        let s = SurfaceState::random_start(5, &mut rng);
        let back = SurfaceState::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
        assert!(SurfaceState::from_json("{\"alpha\": [0.5]}").is_err());
    }

    proptest! {
        #[test]
        fn projections_are_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 2..16)) {
            let raw: Vec<f64> = if v.len() % 2 == 0 { v } else { v[1..].to_vec() };
            let once = project_beta(&raw);
            let twice = project_beta(&once);
            let n = once.len() / 2;
            for i in 0..n {
                prop_assert!((once[i].powi(2) + once[i + n].powi(2) - 1.0).abs() < 1e-9);
            }
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let z: Vec<Complex64> = raw.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
            let t1 = project_theta(&z);
            let t2 = project_theta(&t1);
            for (a, b) in t1.iter().zip(&t2) {
                prop_assert!((a - b).norm() < 1e-12);
                prop_assert!((a.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn alpha_projection_is_nearest_point(a in -10.0f64..100.0, c2 in 1.0f64..50.0) {
            let p = project_alpha(&[a], &[c2]).unwrap()[0];
            prop_assert!((1.0..=c2).contains(&p));
            // Exhaustive 1-D check on a fine grid of the feasible box.
            let grid_best = (0..=10_000)
                .map(|i| 1.0 + (c2 - 1.0) * i as f64 / 10_000.0)
                .map(|x| (x - a).abs())
                .fold(f64::INFINITY, f64::min);
            prop_assert!((p - a).abs() <= grid_best + 1e-12);
        }

        #[test]
        fn ms_round_is_nearest_binary(phi in 0.0f64..(2.0 * PI)) {
            let (bt, br) = (phi.cos(), phi.sin());
            let s = SurfaceState {
                alpha: vec![1.0],
                beta_t: vec![bt],
                beta_r: vec![br],
                theta_t: vec![Complex64::new(1.0, 0.0)],
                theta_r: vec![Complex64::new(1.0, 0.0)],
            };
            let m = ms_round(&s);
            m.validate(Protocol::MS).unwrap();
            // Nearest binary pair on the amplitude circle, measured on magnitudes
            // since signs can be moved into the phases.
            let d = |t: f64, r: f64| (bt.abs() - t).powi(2) + (br.abs() - r).powi(2);
            let chosen = d(m.beta_t[0], m.beta_r[0]);
            prop_assert!(chosen <= d(1.0, 0.0).min(d(0.0, 1.0)) + 1e-12);
            // The kept coefficient beta * theta keeps its sign.
            let (kept, theta) = if m.beta_t[0] == 1.0 { (bt, m.theta_t[0]) } else { (br, m.theta_r[0]) };
            prop_assert!(theta.re * kept.signum() > 0.0);
        }
    }
}
