//! Spatially invariant 2D blur `G(y)` by a Gaussian PSF with parameters
//! `y = (sigma1, sigma2, rho)`, acting on column-major vectorized images.

use super::conv::{ConvBoundary, ConvPlan, KernelSpectrum};
use super::psf::{psf_gaussian_2d, psf_param_gradients, GradientMethod, PsfParams};
use super::{ForwardModel, LinearOperator, ParamOperator};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Default PSF support; the Gaussian mass outside it is negligible for the
/// widths used in practice.
pub const DEFAULT_PSF_SIZE: (usize, usize) = (31, 31);

/// The family `y -> G(y)` for images of a fixed shape.
#[derive(Clone, Copy, Debug)]
pub struct PsfBlurModel<T: Scalar> {
    pub image: (usize, usize),
    pub psf_size: (usize, usize),
    pub boundary: ConvBoundary,
    pub gradient: GradientMethod<T>,
}

impl<T: Scalar> PsfBlurModel<T> {
    /// Periodic boundary, analytic gradients, and a 31x31 support clipped to
    /// the largest odd size that fits the image.
    pub fn new(image: (usize, usize)) -> Self {
        let fit = |n: usize, k: usize| {
            let m = n.min(k);
            if m % 2 == 0 {
                m.saturating_sub(1).max(1)
            } else {
                m
            }
        };
        Self {
            image,
            psf_size: (fit(image.0, DEFAULT_PSF_SIZE.0), fit(image.1, DEFAULT_PSF_SIZE.1)),
            boundary: ConvBoundary::Periodic,
            gradient: GradientMethod::Analytic,
        }
    }

    pub fn with_boundary(mut self, boundary: ConvBoundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_psf_size(mut self, size: (usize, usize)) -> Self {
        self.psf_size = size;
        self
    }

    pub fn with_gradient(mut self, gradient: GradientMethod<T>) -> Self {
        self.gradient = gradient;
        self
    }

    pub fn blur(&self, params: &PsfParams<T>) -> Result<PsfBlur<T>> {
        PsfBlur::new(params, self)
    }
}

impl<T: Scalar> ForwardModel<T> for PsfBlurModel<T> {
    fn nrows(&self) -> usize {
        self.image.0 * self.image.1
    }
    fn ncols(&self) -> usize {
        self.image.0 * self.image.1
    }
    fn param_count(&self) -> usize {
        3
    }
    fn at(&self, y: &DVector<T>) -> Result<Box<dyn ParamOperator<T>>> {
        Ok(Box::new(self.blur(&PsfParams::from_vector(y)?)?))
    }
    /// The PSF sees `rho` only through `rho^2`; the representative has `rho >= 0`.
    fn canonical(&self, y: &DVector<T>) -> DVector<T> {
        let mut y = y.clone();
        if y.len() == 3 {
            y[2] = y[2].abs();
        }
        y
    }
}

/// `G(y)` with cached spectra of the PSF and its three parameter derivatives.
#[derive(Clone, Debug)]
pub struct PsfBlur<T: Scalar> {
    pub params: PsfParams<T>,
    pub psf: DMatrix<T>,
    plan: ConvPlan<T>,
    spectrum: KernelSpectrum<T>,
    dspectra: [KernelSpectrum<T>; 3],
}

impl<T: Scalar> PsfBlur<T> {
    pub fn new(params: &PsfParams<T>, model: &PsfBlurModel<T>) -> Result<Self> {
        let plan = ConvPlan::new(model.image, model.psf_size, model.boundary)?;
        let psf = psf_gaussian_2d(params, model.psf_size)?;
        let grads = psf_param_gradients(params, model.psf_size, model.gradient)?;
        let spectrum = plan.spectrum(&psf)?;
        let dspectra = [
            plan.spectrum(&grads[0])?,
            plan.spectrum(&grads[1])?,
            plan.spectrum(&grads[2])?,
        ];
        Ok(Self {
            params: *params,
            psf,
            plan,
            spectrum,
            dspectra,
        })
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.plan.image_shape()
    }

    fn reshape(&self, v: &DVector<T>) -> DMatrix<T> {
        let (r, c) = self.image_shape();
        assert_eq!(v.len(), r * c, "vector length does not match the image shape");
        DMatrix::from_column_slice(r, c, v.as_slice())
    }

    fn flatten(m: DMatrix<T>) -> DVector<T> {
        DVector::from_column_slice(m.as_slice())
    }

    fn run(&self, spec: &KernelSpectrum<T>, v: &DVector<T>, adjoint: bool) -> DVector<T> {
        let img = self.reshape(v);
        let out = if adjoint {
            self.plan.apply_adjoint(spec, &img)
        } else {
            self.plan.apply(spec, &img)
        };
        Self::flatten(out.expect("shape checked by reshape"))
    }

    pub fn apply_image(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.plan.apply(&self.spectrum, x)
    }

    fn check_param(j: usize) {
        assert!(j < 3, "PSF blur has three parameters, got index {j}");
    }
}

impl<T: Scalar> LinearOperator<T> for PsfBlur<T> {
    fn nrows(&self) -> usize {
        let (r, c) = self.image_shape();
        r * c
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.run(&self.spectrum, x, false)
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        self.run(&self.spectrum, v, true)
    }
}

impl<T: Scalar> ParamOperator<T> for PsfBlur<T> {
    fn param_count(&self) -> usize {
        3
    }
    fn derivative_apply(&self, j: usize, x: &DVector<T>) -> DVector<T> {
        Self::check_param(j);
        self.run(&self.dspectra[j], x, false)
    }
    fn derivative_adjoint_apply(&self, j: usize, v: &DVector<T>) -> DVector<T> {
        Self::check_param(j);
        self.run(&self.dspectra[j], v, true)
    }
}

/// `[vec(dP/dy_1 * x), vec(dP/dy_2 * x), vec(dP/dy_3 * x)]`: the derivative of
/// `y -> G(y) x`, using that convolution commutes.
pub fn reduced_jacobian<T: Scalar>(
    params: &PsfParams<T>,
    psf_size: (usize, usize),
    x: &DMatrix<T>,
    boundary: ConvBoundary,
) -> Result<DMatrix<T>> {
    let plan = ConvPlan::new(x.shape(), psf_size, boundary)?;
    let grads = psf_param_gradients(params, psf_size, GradientMethod::Analytic)?;
    let mut out = DMatrix::zeros(x.len(), 3);
    for (j, g) in grads.iter().enumerate() {
        let col = plan.apply(&plan.spectrum(g)?, x)?;
        if col.len() != x.len() {
            return Err(Error::Dimension("convolution changed the image size".into()));
        }
        out.set_column(j, &DVector::from_column_slice(col.as_slice()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::{random_matrix, random_vector, rng};
    use crate::operators::adjoint_check::assert_adjoint;

    fn p(a: f64, b: f64, c: f64) -> PsfParams<f64> {
        PsfParams::new(a, b, c).unwrap()
    }

    #[test]
    fn adjoint_all_boundaries() {
        for bc in [ConvBoundary::Periodic, ConvBoundary::Zero, ConvBoundary::Reflexive] {
            let model = PsfBlurModel::new((16, 12)).with_boundary(bc).with_psf_size((7, 9));
            let op = model.blur(&p(1.5, 2.0, 1.0)).unwrap();
            assert_adjoint(&op, 100, 1e-10);
        }
    }

    #[test]
    fn derivative_adjoints_are_consistent() {
        let model = PsfBlurModel::new((10, 10)).with_psf_size((7, 7));
        let op = model.blur(&p(1.2, 1.8, 0.6)).unwrap();
        let mut g = rng(8);
        for j in 0..3 {
            let x = random_vector(&mut g, 100);
            let v = random_vector(&mut g, 100);
            let lhs = op.derivative_apply(j, &x).dot(&v);
            let rhs = x.dot(&op.derivative_adjoint_apply(j, &v));
            assert!((lhs - rhs).abs() < 1e-12 * x.norm() * v.norm());
        }
    }

    #[test]
    fn vectorization_is_column_major() {
        let model = PsfBlurModel::new((6, 5)).with_psf_size((3, 3));
        let op = model.blur(&p(0.8, 1.1, 0.3)).unwrap();
        let x = random_matrix(&mut rng(2), 6, 5);
        let via_vec = op.apply(&DVector::from_column_slice(x.as_slice()));
        let via_img = op.apply_image(&x).unwrap();
        assert_eq!(via_vec.as_slice(), via_img.as_slice());
    }

    #[test]
    fn reduced_jacobian_matches_finite_differences() {
        let x = random_matrix(&mut rng(5), 24, 24).map(f64::abs);
        let y = p(1.5, 2.0, 1.0);
        let size = (15, 15);
        for bc in [ConvBoundary::Periodic, ConvBoundary::Zero] {
            let jac = reduced_jacobian(&y, size, &x, bc).unwrap();
            let model = PsfBlurModel::new((24, 24)).with_boundary(bc).with_psf_size(size);
            let h = 1e-5;
            for j in 0..3 {
                let mut plus = y.to_vector();
                let mut minus = y.to_vector();
                plus[j] += h;
                minus[j] -= h;
                let gp = model.blur(&PsfParams::from_vector(&plus).unwrap()).unwrap().apply_image(&x).unwrap();
                let gm = model.blur(&PsfParams::from_vector(&minus).unwrap()).unwrap().apply_image(&x).unwrap();
                let fd = DVector::from_column_slice((gp - gm).as_slice()) / (2.0 * h);
                let col = jac.column(j);
                assert!((&fd - col).norm() < 1e-5 * fd.norm(), "{bc} column {j}");
            }
        }
    }

    #[test]
    fn reduced_jacobian_of_zero_image_vanishes() {
        let jac = reduced_jacobian(&p(2.0, 2.0, 0.0), (9, 9), &DMatrix::zeros(12, 12), ConvBoundary::Periodic)
            .unwrap();
        assert_eq!(jac.amax(), 0.0);
    }

    #[test]
    fn operator_derivatives_match_reduced_jacobian() {
        let x = random_matrix(&mut rng(6), 16, 16);
        let y = p(1.3, 1.7, 0.4);
        let model = PsfBlurModel::new((16, 16)).with_psf_size((9, 9));
        let op = model.blur(&y).unwrap();
        let jac = reduced_jacobian(&y, (9, 9), &x, ConvBoundary::Periodic).unwrap();
        let xv = DVector::from_column_slice(x.as_slice());
        for j in 0..3 {
            assert!((op.derivative_apply(j, &xv) - jac.column(j)).amax() < 1e-14);
        }
    }

    #[test]
    fn narrow_psf_is_nearly_identity() {
        let x = random_matrix(&mut rng(7), 12, 12);
        let op = PsfBlurModel::new((12, 12)).with_psf_size((5, 5)).blur(&p(0.1, 0.1, 0.0)).unwrap();
        assert!((op.apply_image(&x).unwrap() - &x).amax() < 1e-6);
    }

    #[test]
    fn default_support_fits_small_images() {
        let m = PsfBlurModel::<f64>::new((8, 128));
        assert_eq!(m.psf_size, (7, 31));
        assert!(m.blur(&p(1.0, 1.0, 0.0)).is_ok());
    }
}
