//! One-dimensional Gaussian blur on a uniform pixel grid with zero boundary
//! conditions, parametrized by the kernel width.

use super::{ForwardModel, LinearOperator, ParamOperator};
use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// `g(s) = exp(-s^2 / (2 sigma^2)) / sqrt(2 pi sigma^2)` at each integer offset.
pub fn gaussian_kernel_1d<T: Scalar>(sigma: T, offsets: &[i64]) -> Result<Vec<T>> {
    if !(sigma > T::zero()) {
        return domain(format!("kernel width must be positive, got {sigma}"));
    }
    let two = T::lit(2.0);
    let norm = (T::two_pi() * sigma * sigma).sqrt();
    Ok(offsets
        .iter()
        .map(|&s| {
            let s = T::lit(s as f64);
            (-(s * s) / (two * sigma * sigma)).exp() / norm
        })
        .collect())
}

/// Derivative of the kernel with respect to `sigma`.
fn gaussian_kernel_1d_dsigma<T: Scalar>(sigma: T, offsets: &[i64]) -> Result<Vec<T>> {
    let g = gaussian_kernel_1d(sigma, offsets)?;
    let s3 = sigma * sigma * sigma;
    Ok(offsets
        .iter()
        .zip(g)
        .map(|(&s, gs)| {
            let s = T::lit(s as f64);
            gs * (s * s / s3 - T::one() / sigma)
        })
        .collect())
}

fn toeplitz_from_symbol<T: Scalar>(n: usize, symbol: &[T]) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| symbol[i.abs_diff(j)])
}

/// Symmetric Toeplitz blurring matrix `G_ij = g(i - j)` with unit pixel spacing.
pub fn build_toeplitz_1d<T: Scalar>(sigma: T, n: usize) -> Result<DMatrix<T>> {
    if n < 2 {
        return domain(format!("signal length must be at least 2, got {n}"));
    }
    let offsets: Vec<i64> = (0..n as i64).collect();
    Ok(toeplitz_from_symbol(n, &gaussian_kernel_1d(sigma, &offsets)?))
}

/// `G(sigma)` and `dG/dsigma` stored densely.
#[derive(Clone, Debug)]
pub struct Toeplitz1d<T: Scalar> {
    pub sigma: T,
    pub matrix: DMatrix<T>,
    pub dmatrix: DMatrix<T>,
}

impl<T: Scalar> Toeplitz1d<T> {
    pub fn new(sigma: T, n: usize) -> Result<Self> {
        let matrix = build_toeplitz_1d(sigma, n)?;
        let offsets: Vec<i64> = (0..n as i64).collect();
        let dmatrix = toeplitz_from_symbol(n, &gaussian_kernel_1d_dsigma(sigma, &offsets)?);
        Ok(Self {
            sigma,
            matrix,
            dmatrix,
        })
    }
}

impl<T: Scalar> LinearOperator<T> for Toeplitz1d<T> {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }
    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        &self.matrix * x
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        self.matrix.tr_mul(v)
    }
    fn to_dense(&self) -> DMatrix<T> {
        self.matrix.clone()
    }
}

impl<T: Scalar> ParamOperator<T> for Toeplitz1d<T> {
    fn param_count(&self) -> usize {
        1
    }
    fn derivative_apply(&self, j: usize, x: &DVector<T>) -> DVector<T> {
        assert_eq!(j, 0, "the 1D blur has a single parameter");
        &self.dmatrix * x
    }
    fn derivative_adjoint_apply(&self, j: usize, v: &DVector<T>) -> DVector<T> {
        assert_eq!(j, 0, "the 1D blur has a single parameter");
        self.dmatrix.tr_mul(v)
    }
    fn derivative_dense(&self, j: usize) -> DMatrix<T> {
        assert_eq!(j, 0, "the 1D blur has a single parameter");
        self.dmatrix.clone()
    }
}

/// The family `sigma -> G(sigma)` on signals of length `n`.
#[derive(Clone, Copy, Debug)]
pub struct Toeplitz1dModel {
    pub n: usize,
}

impl<T: Scalar> ForwardModel<T> for Toeplitz1dModel {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn param_count(&self) -> usize {
        1
    }
    fn at(&self, y: &DVector<T>) -> Result<Box<dyn ParamOperator<T>>> {
        if y.len() != 1 {
            return Err(Error::Dimension(format!(
                "1D blur takes one parameter, got {}",
                y.len()
            )));
        }
        Ok(Box::new(Toeplitz1d::new(y[0], self.n)?))
    }
}
