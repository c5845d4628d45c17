//! Anisotropic Gaussian point spread functions and their parameter gradients.

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// PSF shape `(sigma1, sigma2, rho)` with covariance `[[s1^2, rho^2], [rho^2, s2^2]]`.
///
/// `sigma1` acts along rows (first image index), `sigma2` along columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsfParams<T: Scalar> {
    pub sigma1: T,
    pub sigma2: T,
    pub rho: T,
}

impl<T: Scalar> PsfParams<T> {
    pub fn new(sigma1: T, sigma2: T, rho: T) -> Result<Self> {
        let p = Self {
            sigma1,
            sigma2,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_vector(y: &DVector<T>) -> Result<Self> {
        if y.len() != 3 {
            return Err(Error::Dimension(format!(
                "PSF parameter vector must have length 3, got {}",
                y.len()
            )));
        }
        Self::new(y[0], y[1], y[2])
    }

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_vec(vec![self.sigma1, self.sigma2, self.rho])
    }

    /// Determinant of the covariance, `sigma1^2 sigma2^2 - rho^4`.
    pub fn delta(&self) -> T {
        let rho2 = self.rho * self.rho;
        self.sigma1 * self.sigma1 * self.sigma2 * self.sigma2 - rho2 * rho2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > T::zero() && self.sigma2 > T::zero()) {
            return domain(format!(
                "PSF widths must be positive, got ({}, {})",
                self.sigma1, self.sigma2
            ));
        }
        if !(self.delta() > T::zero()) {
            return domain(format!(
                "PSF covariance is not positive definite: delta = {}",
                self.delta()
            ));
        }
        Ok(())
    }
}

fn check_size(size: (usize, usize)) -> Result<()> {
    if size.0 % 2 == 0 || size.1 % 2 == 0 || size.0 == 0 || size.1 == 0 {
        return domain(format!(
            "PSF support must have odd dimensions, got {}x{}",
            size.0, size.1
        ));
    }
    Ok(())
}

/// Offsets of entry `(i, j)` from the support center.
fn offsets<T: Scalar>(size: (usize, usize), i: usize, j: usize) -> (T, T) {
    let s = T::lit(i as f64 - (size.0 / 2) as f64);
    let t = T::lit(j as f64 - (size.1 / 2) as f64);
    (s, t)
}

/// Quadratic form `[s t] C^{-1} [s t]^T` split as numerator / delta.
fn quad_numerator<T: Scalar>(p: &PsfParams<T>, s: T, t: T) -> T {
    let rho2 = p.rho * p.rho;
    p.sigma2 * p.sigma2 * s * s - (rho2 + rho2) * s * t + p.sigma1 * p.sigma1 * t * t
}

/// Unnormalized Gaussian `exp(-q/2)`; the `1 / (2 pi sqrt(delta))` prefactor
/// cancels under normalization.
fn unnormalized<T: Scalar>(p: &PsfParams<T>, size: (usize, usize)) -> DMatrix<T> {
    let delta = p.delta();
    let half = T::lit(0.5);
    DMatrix::from_fn(size.0, size.1, |i, j| {
        let (s, t) = offsets(size, i, j);
        (-half * quad_numerator(p, s, t) / delta).exp()
    })
}

/// Gaussian PSF sampled on an odd-sized grid centered at the origin and
/// scaled to unit sum.
pub fn psf_gaussian_2d<T: Scalar>(params: &PsfParams<T>, size: (usize, usize)) -> Result<DMatrix<T>> {
    params.validate()?;
    check_size(size)?;
    let e = unnormalized(params, size);
    let total = e.sum();
    Ok(e / total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientMethod<T: Scalar> {
    /// Exact derivative of the normalized PSF (quotient rule through the sum).
    Analytic,
    /// Central differences with step `h`.
    FiniteDifference(T),
}

/// `dP/dsigma1`, `dP/dsigma2`, `dP/drho` of the normalized PSF.
pub fn psf_param_gradients<T: Scalar>(
    params: &PsfParams<T>,
    size: (usize, usize),
    method: GradientMethod<T>,
) -> Result<[DMatrix<T>; 3]> {
    params.validate()?;
    check_size(size)?;
    match method {
        GradientMethod::Analytic => Ok(analytic_gradients(params, size)),
        GradientMethod::FiniteDifference(h) => {
            if !(h > T::zero()) {
                return domain(format!("finite-difference step must be positive, got {h}"));
            }
            match fd_gradients(params, size, h) {
                Ok(g) => Ok(g),
                Err(_) => fd_gradients(params, size, h / T::lit(10.0)),
            }
        }
    }
}

fn analytic_gradients<T: Scalar>(p: &PsfParams<T>, size: (usize, usize)) -> [DMatrix<T>; 3] {
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let half = T::lit(0.5);
    let delta = p.delta();
    let (s1, s2, rho) = (p.sigma1, p.sigma2, p.rho);
    // d(delta)/d(s1, s2, rho)
    let ddelta = [two * s1 * s2 * s2, two * s1 * s1 * s2, -four * rho * rho * rho];
    let e = unnormalized(p, size);
    let total = e.sum();
    let mut out: [DMatrix<T>; 3] = std::array::from_fn(|_| DMatrix::zeros(size.0, size.1));
    for (k, grad) in out.iter_mut().enumerate() {
        // de/dy = -1/2 e dq/dy,  dq/dy = (dN delta - N ddelta) / delta^2
        let de = DMatrix::from_fn(size.0, size.1, |i, j| {
            let (s, t) = offsets::<T>(size, i, j);
            let num = quad_numerator(p, s, t);
            let dnum = match k {
                0 => two * s1 * t * t,
                1 => two * s2 * s * s,
                _ => -four * rho * s * t,
            };
            let dq = (dnum * delta - num * ddelta[k]) / (delta * delta);
            -half * e[(i, j)] * dq
        });
        let dtotal = de.sum();
        *grad = DMatrix::from_fn(size.0, size.1, |i, j| {
            (de[(i, j)] * total - e[(i, j)] * dtotal) / (total * total)
        });
    }
    out
}

fn fd_gradients<T: Scalar>(p: &PsfParams<T>, size: (usize, usize), h: T) -> Result<[DMatrix<T>; 3]> {
    let base = p.to_vector();
    let mut out: [DMatrix<T>; 3] = std::array::from_fn(|_| DMatrix::zeros(size.0, size.1));
    for (k, grad) in out.iter_mut().enumerate() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[k] += h;
        minus[k] -= h;
        let pp = psf_gaussian_2d(&PsfParams::from_vector(&plus)?, size)?;
        let pm = psf_gaussian_2d(&PsfParams::from_vector(&minus)?, size)?;
        *grad = (pp - pm) / (h + h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, b: f64, c: f64) -> PsfParams<f64> {
        PsfParams::new(a, b, c).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(PsfParams::new(0.0, 1.0, 0.0).is_err());
        assert!(PsfParams::new(1.0, 1.0, 1.0).is_err());
        assert!(PsfParams::new(1.0, 1.0, 1.1).is_err());
        assert!(psf_gaussian_2d(&params(1.0, 1.0, 0.0), (4, 5)).is_err());
    }

    #[test]
    fn isotropic_psf_has_full_symmetry() {
        let p = psf_gaussian_2d(&params(1.7, 1.7, 0.0), (15, 15)).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                assert!((p[(i, j)] - p[(j, i)]).abs() < 1e-16);
                assert!((p[(i, j)] - p[(14 - i, j)]).abs() < 1e-16);
                assert!((p[(i, j)] - p[(i, 14 - j)]).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn psf_sums_to_one() {
        for (a, b, c) in [(1.5, 2.0, 1.0), (3.0, 4.0, 0.5), (0.6, 5.0, -1.2)] {
            let p = psf_gaussian_2d(&params(a, b, c), (31, 31)).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psf_matches_direct_formula() {
        let (s1, s2, rho) = (1.5f64, 2.0f64, 1.0f64);
        let p = psf_gaussian_2d(&params(s1, s2, rho), (31, 31)).unwrap();
        // Independent evaluation: explicit 2x2 inverse with the full prefactor.
        let (a, b, d) = (s1 * s1, rho * rho, s2 * s2);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let mut raw = DMatrix::<f64>::zeros(31, 31);
        for i in 0..31 {
            for j in 0..31 {
                let v = [i as f64 - 15.0, j as f64 - 15.0];
                let mut q = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        q += v[r] * inv[r][c] * v[c];
                    }
                }
                raw[(i, j)] = (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
            }
        }
        let raw = &raw / raw.sum();
        assert!((raw - p).amax() < 1e-15);
    }

    #[test]
    fn isotropic_gradients_are_transposes() {
        let g = psf_param_gradients(&params(2.2, 2.2, 0.0), (21, 21), GradientMethod::Analytic)
            .unwrap();
        assert!((&g[0] - g[1].transpose()).amax() < 1e-15);
    }

    #[test]
    fn gradients_sum_to_zero() {
        let g = psf_param_gradients(&params(1.5, 2.0, 1.0), (31, 31), GradientMethod::Analytic)
            .unwrap();
        for gk in &g {
            assert!(gk.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        for (a, b, c) in [(1.5, 2.0, 1.0), (3.0, 4.0, 0.5), (2.0, 1.2, -0.9)] {
            let p = params(a, b, c);
            let an = psf_param_gradients(&p, (31, 31), GradientMethod::Analytic).unwrap();
            let fd =
                psf_param_gradients(&p, (31, 31), GradientMethod::FiniteDifference(1e-5)).unwrap();
            for k in 0..3 {
                assert!((&an[k] - &fd[k]).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn finite_differences_shrink_step_near_boundary() {
        // rho + 0.01 reaches delta = 0; the retried step 0.001 stays inside.
        let p = params(1.0, 1.0, 0.99);
        assert!(PsfParams::new(1.0, 1.0, 0.99 + 0.01).is_err());
        let g = psf_param_gradients(&p, (5, 5), GradientMethod::FiniteDifference(0.01));
        assert!(g.is_ok());
        assert!(psf_param_gradients(&p, (5, 5), GradientMethod::FiniteDifference(0.5)).is_err());
    }
}
