//! Scenario configuration and its on-disk TOML schema.
//!
//! A configuration file has one top-level `seed` and four sections:
//!
//! ```toml
//! seed = 7
//!
//! [system]            # array sizes, block lengths, powers (watts), noise (watts)
//! m = 16
//! n_x = 8
//! n_y = 8
//! k_t = 2
//! k_r = 2
//! tau_c = 196
//! tau = 4
//! p_pilot = 0.1
//! p_data = 0.1
//! p_surface_total = 0.05
//! p_element = 0.002
//! sigma2 = 3.981e-21
//! sigma_v2 = 1e-19
//! carrier_wavelength = 0.04997
//! element_spacing = 0.01249
//!
//! [placement]         # planar coordinates in meters
//! bs_position = [0.0, 0.0]
//! surface_position = [0.0, 700.0]
//! user_radius = 10.0
//! min_user_distance = 1.0
//! max_retries = 1000
//!
//! [correlation]
//! bs_model = "local-scattering"   # or "identity"
//! bs_angular_spread_deg = 10.0
//! bs_nominal_angle_deg = 0.0
//! bs_antenna_spacing = 0.5        # in wavelengths
//! ris_model = "sinc"              # or "identity"
//!
//! [options]
//! incident_power = "statistical"  # or "literal"
//! noise_scaling = "data-power"    # or "pilot-power"
//! ```
//!
//! Every field is optional and falls back to the desk-scale defaults of
//! [`ScenarioConfig::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Scalar system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// BS antenna count.
    pub m: usize,
    /// Horizontal surface elements.
    pub n_x: usize,
    /// Vertical surface elements.
    pub n_y: usize,
    /// Users behind the surface (transmission region).
    pub k_t: usize,
    /// Users in front of the surface (reflection region).
    pub k_r: usize,
    /// Coherence block length in channel uses.
    pub tau_c: usize,
    /// Pilot length in channel uses.
    pub tau: usize,
    /// Per-user pilot power (W).
    pub p_pilot: f64,
    /// Downlink transmit power (W).
    pub p_data: f64,
    /// Total effective surface transmit power `P_R` (W).
    pub p_surface_total: f64,
    /// Per-element effective surface power `P_n` (W).
    pub p_element: f64,
    /// Receiver noise power (W).
    pub sigma2: f64,
    /// Surface dynamic-noise power (W).
    pub sigma_v2: f64,
    /// Carrier wavelength (m).
    pub carrier_wavelength: f64,
    /// Surface element spacing, horizontal and vertical (m).
    pub element_spacing: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let wavelength = SPEED_OF_LIGHT / 6.0e9;
        let p = dbm_to_watts(20.0);
        Self {
            m: 16,
            n_x: 8,
            n_y: 8,
            k_t: 2,
            k_r: 2,
            tau_c: 196,
            tau: 4,
            p_pilot: p,
            p_data: p,
            p_surface_total: 0.5 * p,
            p_element: 2.0e-3,
            sigma2: dbm_to_watts(-174.0),
            sigma_v2: dbm_to_watts(-160.0),
            carrier_wavelength: wavelength,
            element_spacing: wavelength / 4.0,
        }
    }
}

impl SystemConfig {
    /// The full-scale setup: M=64, N=400 (20x20), K=12.
    pub fn full_scale() -> Self {
        Self {
            m: 64,
            n_x: 20,
            n_y: 20,
            k_t: 6,
            k_r: 6,
            tau: 12,
            ..Self::default()
        }
    }

    pub fn n(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn k(&self) -> usize {
        self.k_t + self.k_r
    }

    /// Pre-log factor `(tau_c - tau) / tau_c`.
    pub fn pre_log(&self) -> f64 {
        (self.tau_c - self.tau) as f64 / self.tau_c as f64
    }

    /// Pilot noise scaling `sigma^2 / (tau p)`.
    pub fn pilot_noise(&self) -> f64 {
        self.sigma2 / (self.tau as f64 * self.p_pilot)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if self.n_x == 0 || self.n_y == 0 {
            return bad(format!("n_x and n_y must be positive, got {}x{}", self.n_x, self.n_y));
        }
        if self.k() == 0 {
            return bad("at least one user is required".into());
        }
        if self.tau < self.k() {
            return bad(format!("pilot length {} shorter than user count {}", self.tau, self.k()));
        }
        if self.tau >= self.tau_c {
            return bad(format!("pilot length {} leaves no data samples in block {}", self.tau, self.tau_c));
        }
        let positive = [
            ("p_pilot", self.p_pilot),
            ("p_data", self.p_data),
            ("p_surface_total", self.p_surface_total),
            ("p_element", self.p_element),
            ("carrier_wavelength", self.carrier_wavelength),
            ("element_spacing", self.element_spacing),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and strictly positive, got {v}"));
            }
        }
        // Zero noise is a valid limit (perfect CSI, passive surface).
        for (name, v) in [("sigma2", self.sigma2), ("sigma_v2", self.sigma_v2)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Where the BS, the surface and the users are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementPolicy {
    pub bs_position: [f64; 2],
    pub surface_position: [f64; 2],
    /// Users are drawn uniformly in a disc of this radius around the surface.
    pub user_radius: f64,
    /// Draws closer than this to the surface are rejected and redrawn.
    pub min_user_distance: f64,
    pub max_retries: usize,
}

impl Default for PlacementPolicy {
    fn default() -> Self {
        Self {
            bs_position: [0.0, 0.0],
            surface_position: [0.0, 700.0],
            user_radius: 10.0,
            min_user_distance: 1.0,
            max_retries: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BsCorrelationModel {
    LocalScattering,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RisCorrelationModel {
    Sinc,
    Identity,
}

/// Parameters of the BS and surface correlation models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub bs_model: BsCorrelationModel,
    /// Standard deviation of the Gaussian angular spread (degrees).
    pub bs_angular_spread_deg: f64,
    /// Nominal angle of the surface seen from the BS array (degrees).
    pub bs_nominal_angle_deg: f64,
    /// BS antenna spacing in wavelengths.
    pub bs_antenna_spacing: f64,
    pub ris_model: RisCorrelationModel,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            bs_model: BsCorrelationModel::LocalScattering,
            bs_angular_spread_deg: 10.0,
            bs_nominal_angle_deg: 0.0,
            bs_antenna_spacing: 0.5,
            ris_model: RisCorrelationModel::Sinc,
        }
    }
}

/// How the per-element incident power in the amplifier constraints is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentPower {
    /// `(lambda P / K) beta_g sum_i tr(R_BS Psi_i) [R_RIS]_nn`.
    #[default]
    Statistical,
    /// `sum_i tr(Psi_i)`, the precoder-norm expression taken as printed.
    Literal,
}

/// Which power divides the noise term of the SINR denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScaling {
    /// `K / P` with the downlink data power.
    #[default]
    DataPower,
    /// `K / p` with the pilot power.
    PilotPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub incident_power: IncidentPower,
    pub noise_scaling: NoiseScaling,
}

/// Root of a scenario configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub placement: PlacementPolicy,
    pub correlation: CorrelationConfig,
    pub options: ModelOptions,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let p = &self.placement;
        if !(p.user_radius > 0.0 && p.user_radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("user_radius must be positive, got {}", p.user_radius)));
        }
        if !(p.min_user_distance >= 0.0 && p.min_user_distance < p.user_radius) {
            return Err(Error::InvalidConfig(format!(
                "min_user_distance {} must lie in [0, user_radius)",
                p.min_user_distance
            )));
        }
        let c = &self.correlation;
        if !(c.bs_angular_spread_deg >= 0.0 && c.bs_antenna_spacing > 0.0) {
            return Err(Error::InvalidConfig("BS correlation parameters must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversions() {
        assert!((dbm_to_watts(20.0) - 0.1).abs() < 1e-15);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((watts_to_dbm(2e-3) - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
        let full = ScenarioConfig {
            system: SystemConfig::full_scale(),
            ..Default::default()
        };
        full.validate().unwrap();
        assert_eq!(full.system.n(), 400);
        assert_eq!(full.system.k(), 12);
    }

    #[test]
    fn pilot_constraints() {
        let mut s = SystemConfig::default();
        s.tau = s.k() - 1;
        assert!(s.validate().is_err());
        s.tau = s.tau_c;
        assert!(s.validate().is_err());
        let mut s = SystemConfig::default();
        s.sigma2 = 0.0;
        assert!(s.validate().is_ok());
        s.sigma2 = -1e-20;
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&text, "mem").unwrap();
        assert_eq!(cfg, back);

        let partial = "seed = 3\n[system]\nm = 8\n";
        let cfg = ScenarioConfig::from_toml_str(partial, "mem").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.system.m, 8);
        assert_eq!(cfg.system.n_x, 8);

        assert!(ScenarioConfig::from_toml_str("[system]\nbogus = 1\n", "mem").is_err());
    }
}
