//! Linear maps and their parametrized forward families `y -> G(y)`.

mod blur;
mod conv;
mod kernel1d;
mod psf;

pub use blur::{reduced_jacobian, PsfBlur, PsfBlurModel, DEFAULT_PSF_SIZE};
pub use conv::{conv2d_adjoint, conv2d_apply, ConvBoundary, ConvPlan, KernelSpectrum};
pub use kernel1d::{build_toeplitz_1d, gaussian_kernel_1d, Toeplitz1d, Toeplitz1dModel};
pub use psf::{psf_gaussian_2d, psf_param_gradients, GradientMethod, PsfParams};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// A linear map `R^ncols -> R^nrows` given by its action and adjoint action.
pub trait LinearOperator<T: Scalar>: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<T>) -> DVector<T>;
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T>;

    /// Dense matrix assembled column by column from `apply`.
    fn to_dense(&self) -> DMatrix<T> {
        let n = self.ncols();
        let mut out = DMatrix::zeros(self.nrows(), n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = T::one();
            out.set_column(j, &self.apply(&e));
            e[j] = T::zero();
        }
        out
    }
}

/// `G(y)` evaluated at a fixed parameter vector, together with the actions of
/// the partial derivatives `dG/dy_j`.
pub trait ParamOperator<T: Scalar>: LinearOperator<T> {
    fn param_count(&self) -> usize;
    fn derivative_apply(&self, j: usize, x: &DVector<T>) -> DVector<T>;
    fn derivative_adjoint_apply(&self, j: usize, v: &DVector<T>) -> DVector<T>;

    fn derivative_dense(&self, j: usize) -> DMatrix<T> {
        let n = self.ncols();
        let mut out = DMatrix::zeros(self.nrows(), n);
        let mut e = DVector::zeros(n);
        for c in 0..n {
            e[c] = T::one();
            out.set_column(c, &self.derivative_apply(j, &e));
            e[c] = T::zero();
        }
        out
    }
}

/// The family `y -> G(y)`.
pub trait ForwardModel<T: Scalar>: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn param_count(&self) -> usize;
    fn at(&self, y: &DVector<T>) -> Result<Box<dyn ParamOperator<T>>>;
    /// Representative of `y` among parameters giving the same operator.
    fn canonical(&self, y: &DVector<T>) -> DVector<T> {
        y.clone()
    }
}

/// Explicit matrix wrapped as an operator.
#[derive(Clone, Debug)]
pub struct DenseOperator<T: Scalar> {
    pub matrix: DMatrix<T>,
}

impl<T: Scalar> DenseOperator<T> {
    pub fn new(matrix: DMatrix<T>) -> Self {
        Self { matrix }
    }
}

impl<T: Scalar> LinearOperator<T> for DenseOperator<T> {
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

/// `diag(scale) * inner`; used for the reweighted regularizer `P L`.
pub struct RowScaled<'a, T: Scalar> {
    pub inner: &'a dyn LinearOperator<T>,
    pub scale: DVector<T>,
}

impl<'a, T: Scalar> RowScaled<'a, T> {
    pub fn new(inner: &'a dyn LinearOperator<T>, scale: DVector<T>) -> Result<Self> {
        if scale.len() != inner.nrows() {
            return Err(Error::Dimension(format!(
                "{} row weights for an operator with {} rows",
                scale.len(),
                inner.nrows()
            )));
        }
        Ok(Self { inner, scale })
    }
}

impl<T: Scalar> LinearOperator<T> for RowScaled<'_, T> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.inner.apply(x).component_mul(&self.scale)
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        self.inner.apply_adjoint(&v.component_mul(&self.scale))
    }
}
