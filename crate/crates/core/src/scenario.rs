//! Large-scale description of one experiment: geometry, path losses,
//! correlation matrices, LoS steering vectors and region labels.
//!
//! Everything here is deterministic given a [`ScenarioConfig`] (including its
//! seed) and immutable once built.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{
    BsCorrelationModel, CorrelationConfig, PlacementPolicy, RisCorrelationModel, ScenarioConfig,
    SystemConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, HermitianEigen};
use crate::surface::Region;

/// `10^-3 d^-2.5`, BS to surface.
pub fn path_loss_bs_surface(distance: f64) -> f64 {
    1e-3 * distance.powf(-2.5)
}

/// `10^-3 d^-2`, surface to user.
pub fn path_loss_surface_user(distance: f64) -> f64 {
    1e-3 * distance.powi(-2)
}

/// `10^-3 d^-4`, BS to user.
pub fn path_loss_bs_user(distance: f64) -> f64 {
    1e-3 * distance.powi(-4)
}

/// `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// URA response `a(Nx) (sin az sin el) kron a(Ny) (cos el)`.
pub fn steering_vector(
    n_x: usize,
    n_y: usize,
    azimuth: f64,
    elevation: f64,
    spacing_over_wavelength: f64,
) -> Result<CVec> {
    if n_x == 0 || n_y == 0 {
        return Err(Error::InvalidArgument(format!(
            "steering vector needs positive element counts, got {n_x}x{n_y}"
        )));
    }
    if !(spacing_over_wavelength > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spacing ratio must be positive, got {spacing_over_wavelength}"
        )));
    }
    let ramp = |len: usize, c: f64| -> Vec<Complex64> {
        (0..len)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * spacing_over_wavelength * i as f64 * c))
            .collect()
    };
    let ax = ramp(n_x, azimuth.sin() * elevation.sin());
    let ay = ramp(n_y, elevation.cos());
    Ok(CVec::from_iterator(
        n_x * n_y,
        ax.iter().flat_map(|x| ay.iter().map(move |y| x * y)),
    ))
}

/// Local-scattering BS correlation with a Gaussian angular distribution.
///
/// `[R]_{l,m} = E[exp(j 2 pi d (l - m) sin(phi))]`, `phi ~ N(nominal, spread^2)`,
/// evaluated by trapezoidal quadrature over +-8 standard deviations.
pub fn local_scattering_correlation(
    m: usize,
    nominal_angle: f64,
    angular_spread: f64,
    spacing_wavelengths: f64,
) -> CMat {
    let mut first_col = vec![Complex64::new(0.0, 0.0); m];
    if angular_spread <= 0.0 {
        for (d, v) in first_col.iter_mut().enumerate() {
            *v = Complex64::from_polar(1.0, 2.0 * PI * spacing_wavelengths * d as f64 * nominal_angle.sin());
        }
    } else {
        const POINTS: usize = 4001;
        let half_width = 8.0 * angular_spread;
        let step = 2.0 * half_width / (POINTS - 1) as f64;
        let mut weights = Vec::with_capacity(POINTS);
        let mut angles = Vec::with_capacity(POINTS);
        for i in 0..POINTS {
            let delta = -half_width + i as f64 * step;
            let end = if i == 0 || i == POINTS - 1 { 0.5 } else { 1.0 };
            weights.push(end * (-0.5 * (delta / angular_spread).powi(2)).exp());
            angles.push((nominal_angle + delta).sin());
        }
        let total: f64 = weights.iter().sum();
        for (d, v) in first_col.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, s) in weights.iter().zip(&angles) {
                acc += Complex64::from_polar(*w, 2.0 * PI * spacing_wavelengths * d as f64 * s);
            }
            *v = acc / total;
        }
        first_col[0] = Complex64::new(1.0, 0.0);
    }
    // Toeplitz Hermitian: R[l, m] = c[l - m] for l >= m.
    CMat::from_fn(m, m, |l, k| {
        if l >= k {
            first_col[l - k]
        } else {
            first_col[k - l].conj()
        }
    })
}

/// Isotropic-scattering surface correlation `sinc(2 |u_i - u_j| / lambda)` on
/// the planar element grid; element `n = ix * n_y + iy` sits at `(ix d, iy d)`.
pub fn sinc_surface_correlation(n_x: usize, n_y: usize, spacing: f64, wavelength: f64) -> CMat {
    let n = n_x * n_y;
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|i| ((i / n_y) as f64 * spacing, (i % n_y) as f64 * spacing))
        .collect();
    CMat::from_fn(n, n, |i, j| {
        let dx = pos[i].0 - pos[j].0;
        let dy = pos[i].1 - pos[j].1;
        Complex64::new(sinc(2.0 * (dx * dx + dy * dy).sqrt() / wavelength), 0.0)
    })
}

/// Builds `(R_BS, R_RIS)` from the configured models, repaired to exact
/// Hermitian PSD form.
pub fn build_correlations(system: &SystemConfig, models: &CorrelationConfig) -> Result<(CMat, CMat)> {
    let r_bs = match models.bs_model {
        BsCorrelationModel::LocalScattering => local_scattering_correlation(
            system.m,
            models.bs_nominal_angle_deg.to_radians(),
            models.bs_angular_spread_deg.to_radians(),
            models.bs_antenna_spacing,
        ),
        BsCorrelationModel::Identity => CMat::identity(system.m, system.m),
    };
    let r_ris = match models.ris_model {
        RisCorrelationModel::Sinc => sinc_surface_correlation(
            system.n_x,
            system.n_y,
            system.element_spacing,
            system.carrier_wavelength,
        ),
        RisCorrelationModel::Identity => CMat::identity(system.n(), system.n()),
    };
    Ok((linalg::repair_psd(&r_bs)?, linalg::repair_psd(&r_ris)?))
}

/// Per-user large-scale quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStatistics {
    pub region: Region,
    /// BS to user path loss.
    pub beta_bar: f64,
    /// Surface to user path loss.
    pub beta_tilde: f64,
    /// `beta_tilde_g * beta_tilde`.
    pub beta_hat: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub position: [f64; 2],
    /// LoS steering vector `a_N`, `|a_N|^2 = N`.
    pub steering: CVec,
}

/// Large-scale statistics of one scenario plus cached factorizations.
#[derive(Debug, Clone)]
pub struct ScenarioStatistics {
    pub r_bs: CMat,
    pub r_ris: CMat,
    /// BS to surface path loss.
    pub beta_tilde_g: f64,
    pub users: Vec<UserStatistics>,
    bs_eigen: HermitianEigen,
    r_bs_sqrt: CMat,
    r_ris_sqrt: CMat,
}

impl PartialEq for ScenarioStatistics {
    fn eq(&self, other: &Self) -> bool {
        self.r_bs == other.r_bs
            && self.r_ris == other.r_ris
            && self.beta_tilde_g.to_bits() == other.beta_tilde_g.to_bits()
            && self.users == other.users
    }
}

impl ScenarioStatistics {
    /// Assembles statistics from explicit parts. `r_ris` may be `0x0` for a
    /// surface-less scenario.
    pub fn from_parts(r_bs: CMat, r_ris: CMat, beta_tilde_g: f64, users: Vec<UserStatistics>) -> Result<Self> {
        let m = r_bs.nrows();
        let n = r_ris.nrows();
        if m == 0 || r_bs.ncols() != m || r_ris.ncols() != n {
            return Err(Error::InvalidArgument("correlation matrices must be square, R_BS non-empty".into()));
        }
        if users.is_empty() {
            return Err(Error::InvalidArgument("at least one user is required".into()));
        }
        if !(beta_tilde_g >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative path loss {beta_tilde_g}")));
        }
        for (k, u) in users.iter().enumerate() {
            if u.steering.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "user {k}: steering vector length {} != N = {n}",
                    u.steering.len()
                )));
            }
            if !(u.beta_bar >= 0.0 && u.beta_tilde >= 0.0 && u.beta_hat >= 0.0) {
                return Err(Error::InvalidArgument(format!("user {k}: negative path loss")));
            }
        }
        let r_bs = linalg::repair_psd(&r_bs)?;
        let r_ris = if n > 0 { linalg::repair_psd(&r_ris)? } else { r_ris };
        let bs_eigen = HermitianEigen::new(&r_bs);
        let r_bs_sqrt = bs_eigen.map(|w| w.max(0.0).sqrt());
        let r_ris_sqrt = if n > 0 { linalg::hermitian_sqrt(&r_ris) } else { r_ris.clone() };
        Ok(Self {
            r_bs,
            r_ris,
            beta_tilde_g,
            users,
            bs_eigen,
            r_bs_sqrt,
            r_ris_sqrt,
        })
    }

    pub fn m(&self) -> usize {
        self.r_bs.nrows()
    }

    pub fn n(&self) -> usize {
        self.r_ris.nrows()
    }

    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn users_in(&self, region: Region) -> impl Iterator<Item = usize> + '_ {
        self.users
            .iter()
            .enumerate()
            .filter(move |(_, u)| u.region == region)
            .map(|(k, _)| k)
    }

    /// Eigenvalues of `R_BS` (clipped at zero).
    pub fn bs_eigenvalues(&self) -> Vec<f64> {
        self.bs_eigen.values.iter().map(|w| w.max(0.0)).collect()
    }

    pub fn bs_eigenvectors(&self) -> &CMat {
        &self.bs_eigen.vectors
    }

    pub fn r_bs_sqrt(&self) -> &CMat {
        &self.r_bs_sqrt
    }

    pub fn r_ris_sqrt(&self) -> &CMat {
        &self.r_ris_sqrt
    }

    /// Real diagonal of `R_RIS`.
    pub fn ris_diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.r_ris[(i, i)].re).collect()
    }

    /// Same users with replaced correlation matrices.
    pub fn with_correlations(&self, r_bs: CMat, r_ris: CMat) -> Result<Self> {
        Self::from_parts(r_bs, r_ris, self.beta_tilde_g, self.users.clone())
    }

    /// Independent fading: `R_BS = lambda_bs I`, `R_RIS = lambda_ris I`.
    pub fn with_independent_fading(&self, lambda_bs: f64, lambda_ris: f64) -> Result<Self> {
        let m = self.m();
        let n = self.n();
        self.with_correlations(
            CMat::identity(m, m) * Complex64::new(lambda_bs, 0.0),
            CMat::identity(n, n) * Complex64::new(lambda_ris, 0.0),
        )
    }

    /// The surface switched off: `beta_tilde_k = beta_hat_k = 0`, `beta_tilde_g = 0`.
    pub fn without_surface(&self) -> Result<Self> {
        let users = self
            .users
            .iter()
            .map(|u| UserStatistics {
                beta_tilde: 0.0,
                beta_hat: 0.0,
                ..u.clone()
            })
            .collect();
        Self::from_parts(self.r_bs.clone(), self.r_ris.clone(), 0.0, users)
    }

    /// Removes the surface entirely (`N = 0`).
    pub fn with_no_elements(&self) -> Result<Self> {
        let users = self
            .users
            .iter()
            .map(|u| UserStatistics {
                steering: CVec::zeros(0),
                ..u.clone()
            })
            .collect();
        Self::from_parts(self.r_bs.clone(), CMat::zeros(0, 0), self.beta_tilde_g, users)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Draws a user position in the half-disc of `region` around the surface.
///
/// The surface lies along the x axis at `surface_position`; the reflection
/// region faces the BS (smaller y), the transmission region is behind it.
fn place_user(rng: &mut ChaCha8Rng, policy: &PlacementPolicy, region: Region) -> Result<[f64; 2]> {
    for _ in 0..policy.max_retries.max(1) {
        let radius = policy.user_radius * rng.random::<f64>().sqrt();
        let angle = PI * rng.random::<f64>();
        let angle = match region {
            Region::T => angle,
            Region::R => angle + PI,
        };
        if radius >= policy.min_user_distance && radius > 0.0 {
            return Ok([
                policy.surface_position[0] + radius * angle.cos(),
                policy.surface_position[1] + radius * angle.sin(),
            ]);
        }
    }
    Err(Error::Placement(policy.max_retries))
}

/// Builds the scenario for `config`: the first `k_t` users are in region `t`,
/// the rest in region `r`. Identical configs (including seed) give
/// bit-identical statistics.
pub fn build_scenario(config: &ScenarioConfig) -> Result<ScenarioStatistics> {
    config.validate()?;
    let sys = &config.system;
    let policy = &config.placement;
    let (r_bs, r_ris) = build_correlations(sys, &config.correlation)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d_g = distance(policy.bs_position, policy.surface_position);
    if d_g <= 0.0 {
        return Err(Error::InvalidConfig("BS and surface are collocated".into()));
    }
    let beta_tilde_g = path_loss_bs_surface(d_g);
    let ratio = sys.element_spacing / sys.carrier_wavelength;

    let mut users = Vec::with_capacity(sys.k());
    for k in 0..sys.k() {
        let region = if k < sys.k_t { Region::T } else { Region::R };
        let position = place_user(&mut rng, policy, region)?;
        let azimuth = 2.0 * PI * rng.random::<f64>();
        let elevation = 2.0 * PI * rng.random::<f64>();
        let beta_tilde = path_loss_surface_user(distance(position, policy.surface_position));
        let d_bar = distance(position, policy.bs_position);
        if d_bar <= 0.0 {
            return Err(Error::InvalidConfig(format!("user {k} collocated with the BS")));
        }
        users.push(UserStatistics {
            region,
            beta_bar: path_loss_bs_user(d_bar),
            beta_tilde,
            beta_hat: beta_tilde_g * beta_tilde,
            azimuth,
            elevation,
            position,
            steering: steering_vector(sys.n_x, sys.n_y, azimuth, elevation, ratio)?,
        });
    }
    ScenarioStatistics::from_parts(r_bs, r_ris, beta_tilde_g, users)
}
