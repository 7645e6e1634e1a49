//! Small Hermitian linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Relative eigenvalue floor below which a matrix is not considered PSD.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Eigen-decomposition of a Hermitian matrix: `m = V diag(w) V^H`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Self {
        let mut h = m.clone();
        force_hermitian(&mut h);
        let eig = h.symmetric_eigen();
        Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    /// Rebuilds `V diag(f(w)) V^H`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &w) in self.values.iter().enumerate() {
            let s = f(w);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        let mut out = &scaled * self.vectors.adjoint();
        force_hermitian(&mut out);
        out
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Makes `m` exactly Hermitian: `m[i,j] = conj(m[j,i])` bit for bit, real diagonal.
pub fn force_hermitian(m: &mut CMat) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Clips small negative eigenvalues to zero.
///
/// Eigenvalues in `(-PSD_TOLERANCE * max, 0)` are set to zero; anything more
/// negative is reported as a model error.
pub fn repair_psd(m: &CMat) -> Result<CMat> {
    if is_diagonal(m) {
        let max = m.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
        let mut out = CMat::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let w = m[(i, i)].re;
            if w < -PSD_TOLERANCE * max.max(f64::MIN_POSITIVE) {
                return Err(Error::Model(format!(
                    "matrix is not positive semi-definite: min eigenvalue {w:e}, max {max:e}"
                )));
            }
            out[(i, i)] = Complex64::new(w.max(0.0), 0.0);
        }
        return Ok(out);
    }
    let eig = HermitianEigen::new(m);
    let max = eig.max();
    let min = eig.min();
    if min < -PSD_TOLERANCE * max.max(f64::MIN_POSITIVE) {
        return Err(Error::Model(format!(
            "matrix is not positive semi-definite: min eigenvalue {min:e}, max {max:e}"
        )));
    }
    if min >= 0.0 {
        let mut out = m.clone();
        force_hermitian(&mut out);
        return Ok(out);
    }
    Ok(eig.map(|w| w.max(0.0)))
}

/// Hermitian PSD square root via eigen-decomposition (negative eigenvalues clipped).
pub fn hermitian_sqrt(m: &CMat) -> CMat {
    if is_diagonal(m) {
        return CMat::from_diagonal(&m.diagonal().map(|z| Complex64::new(z.re.max(0.0).sqrt(), 0.0)));
    }
    HermitianEigen::new(m).map(|w| w.max(0.0).sqrt())
}

/// True when every off-diagonal entry is exactly zero (identity correlations).
pub fn is_diagonal(m: &CMat) -> bool {
    m.nrows() == m.ncols()
        && (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == ZERO))
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Largest elementwise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse(m: &CMat) -> Result<CMat> {
    let mut h = m.clone();
    force_hermitian(&mut h);
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    force_hermitian(&mut inv);
    Ok(inv)
}

/// Draws a vector of i.i.d. `CN(0, 1)` entries.
pub fn complex_gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_iterator(n, (0..n).map(|_| complex_gaussian(rng)))
}

pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    use rand_distr::{Distribution, StandardNormal};
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
