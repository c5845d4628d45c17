//! Regularization operators `L`: identity, 1D/2D finite differences, and the
//! linear B-spline framelet analysis operator. All act matrix-free.

use crate::error::{domain, Result};
use crate::operators::LinearOperator;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    Identity,
    FirstDeriv,
    SecondDeriv,
    Framelet,
}

/// A regularization operator with a kind tag.
pub trait Regularizer<T: Scalar>: LinearOperator<T> {
    fn kind(&self) -> RegularizerKind;

    /// Output dimension `q`.
    fn output_dim(&self) -> usize {
        self.nrows()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity {
    pub n: usize,
}

impl Identity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl<T: Scalar> LinearOperator<T> for Identity {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        x.clone()
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        v.clone()
    }
}

impl<T: Scalar> Regularizer<T> for Identity {
    fn kind(&self) -> RegularizerKind {
        RegularizerKind::Identity
    }
}

/// Banded operator whose row `i` is `stencil` placed at columns `i..i+len`,
/// giving an `(n - len + 1) x n` matrix.
#[derive(Clone, Debug)]
pub struct Stencil1d<T: Scalar> {
    pub n: usize,
    pub stencil: Vec<T>,
}

impl<T: Scalar> Stencil1d<T> {
    pub fn new(n: usize, stencil: Vec<T>) -> Result<Self> {
        if stencil.is_empty() || n < stencil.len() {
            return domain(format!(
                "stencil of length {} needs at least that many points, got {n}",
                stencil.len()
            ));
        }
        Ok(Self { n, stencil })
    }

    fn rows(&self) -> usize {
        self.n + 1 - self.stencil.len()
    }

    /// Applies the stencil along the first index of each column of `x`.
    pub fn apply_columns(&self, x: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(self.rows(), x.ncols(), |i, j| {
            self.stencil.iter().enumerate().fold(T::zero(), |acc, (k, &s)| acc + s * x[(i + k, j)])
        })
    }

    /// Transposed stencil along the first index of each column of `u`.
    pub fn adjoint_columns(&self, u: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, u.ncols());
        for j in 0..u.ncols() {
            for i in 0..self.rows() {
                let ui = u[(i, j)];
                for (k, &s) in self.stencil.iter().enumerate() {
                    out[(i + k, j)] += s * ui;
                }
            }
        }
        out
    }

    fn kind_of(&self) -> RegularizerKind {
        if self.stencil.len() == 2 {
            RegularizerKind::FirstDeriv
        } else {
            RegularizerKind::SecondDeriv
        }
    }
}

impl<T: Scalar> LinearOperator<T> for Stencil1d<T> {
    fn nrows(&self) -> usize {
        self.rows()
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let m = DMatrix::from_column_slice(self.n, 1, x.as_slice());
        DVector::from_column_slice(self.apply_columns(&m).as_slice())
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        let m = DMatrix::from_column_slice(self.rows(), 1, v.as_slice());
        DVector::from_column_slice(self.adjoint_columns(&m).as_slice())
    }
}

impl<T: Scalar> Regularizer<T> for Stencil1d<T> {
    fn kind(&self) -> RegularizerKind {
        self.kind_of()
    }
}

/// `(n-1) x n` bidiagonal matrix with rows `[1, -1]`.
pub fn first_derivative_1d<T: Scalar>(n: usize) -> Result<Stencil1d<T>> {
    if n < 2 {
        return domain(format!("first derivative needs n >= 2, got {n}"));
    }
    Stencil1d::new(n, vec![T::one(), -T::one()])
}

/// `(n-2) x n` tridiagonal matrix with rows `[-1, 2, -1]`.
pub fn second_derivative_1d<T: Scalar>(n: usize) -> Result<Stencil1d<T>> {
    if n < 3 {
        return domain(format!("second derivative needs n >= 3, got {n}"));
    }
    Stencil1d::new(n, vec![-T::one(), T::lit(2.0), -T::one()])
}

/// Kronecker sum `D (x) I + I (x) D` on `n x n` images, `D` a 1D stencil.
///
/// With column-major vectorization, `(D (x) I) vec(X) = vec(X D^T)` and
/// `(I (x) D) vec(X) = vec(D X)`; both have `n (n - s + 1)` entries and the
/// operator returns their sum.
#[derive(Clone, Debug)]
pub struct Derivative2d<T: Scalar> {
    pub n: usize,
    pub d: Stencil1d<T>,
}

impl<T: Scalar> Derivative2d<T> {
    fn shapes(&self) -> ((usize, usize), (usize, usize)) {
        let r = self.d.rows();
        ((self.n, r), (r, self.n))
    }
}

/// Matrix-free `L_1` (order 1) or `L_2` (order 2) on `n x n` images.
pub fn derivative_2d<T: Scalar>(order: usize, n: usize) -> Result<Derivative2d<T>> {
    if n < 3 {
        return domain(format!("2D derivative needs n >= 3, got {n}"));
    }
    let d = match order {
        1 => first_derivative_1d(n)?,
        2 => second_derivative_1d(n)?,
        _ => return domain(format!("derivative order must be 1 or 2, got {order}")),
    };
    Ok(Derivative2d { n, d })
}

impl<T: Scalar> LinearOperator<T> for Derivative2d<T> {
    fn nrows(&self) -> usize {
        self.n * self.d.rows()
    }
    fn ncols(&self) -> usize {
        self.n * self.n
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let img = DMatrix::from_column_slice(self.n, self.n, x.as_slice());
        // X D^T = (D X^T)^T
        let a = self.d.apply_columns(&img.transpose()).transpose();
        let b = self.d.apply_columns(&img);
        DVector::from_iterator(a.len(), a.iter().zip(b.iter()).map(|(&p, &q)| p + q))
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        let ((ar, ac), (br, bc)) = self.shapes();
        let ua = DMatrix::from_column_slice(ar, ac, v.as_slice());
        let ub = DMatrix::from_column_slice(br, bc, v.as_slice());
        // U D and D^T U
        let a = self.d.adjoint_columns(&ua.transpose()).transpose();
        let b = self.d.adjoint_columns(&ub);
        DVector::from_column_slice((a + b).as_slice())
    }
}

impl<T: Scalar> Regularizer<T> for Derivative2d<T> {
    fn kind(&self) -> RegularizerKind {
        self.d.kind_of()
    }
}

/// The three `n x n` linear B-spline filter matrices `W_0, W_1, W_2` with
/// reflexive boundary corrections, so that `sum_k W_k^T W_k = I`.
pub fn framelet_filters<T: Scalar>(n: usize) -> Result<[DMatrix<T>; 3]> {
    if n < 3 {
        return domain(format!("framelet needs n >= 3, got {n}"));
    }
    let q = T::lit(0.25);
    let r = T::lit(std::f64::consts::SQRT_2 / 4.0);
    let mut w0 = DMatrix::zeros(n, n);
    let mut w1 = DMatrix::zeros(n, n);
    let mut w2 = DMatrix::zeros(n, n);
    for i in 1..n - 1 {
        w0[(i, i - 1)] = q;
        w0[(i, i)] = q * T::lit(2.0);
        w0[(i, i + 1)] = q;
        w1[(i, i - 1)] = -r;
        w1[(i, i + 1)] = r;
        w2[(i, i - 1)] = -q;
        w2[(i, i)] = q * T::lit(2.0);
        w2[(i, i + 1)] = -q;
    }
    let l = n - 1;
    w0[(0, 0)] = q * T::lit(3.0);
    w0[(0, 1)] = q;
    w0[(l, l - 1)] = q;
    w0[(l, l)] = q * T::lit(3.0);
    w1[(0, 0)] = -r;
    w1[(0, 1)] = r;
    w1[(l, l - 1)] = -r;
    w1[(l, l)] = r;
    w2[(0, 0)] = q;
    w2[(0, 1)] = -q;
    w2[(l, l - 1)] = -q;
    w2[(l, l)] = q;
    Ok([w0, w1, w2])
}

/// Tridiagonal filter stored by its three diagonals.
#[derive(Clone, Debug)]
struct Tridiag<T: Scalar> {
    lower: Vec<T>,
    diag: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> Tridiag<T> {
    fn from_dense(m: &DMatrix<T>) -> Self {
        let n = m.nrows();
        Self {
            lower: (1..n).map(|i| m[(i, i - 1)]).collect(),
            diag: (0..n).map(|i| m[(i, i)]).collect(),
            upper: (0..n - 1).map(|i| m[(i, i + 1)]).collect(),
        }
    }

    /// `M X` for column-major `X` with `n` rows.
    fn left(&self, x: &DMatrix<T>, transpose: bool) -> DMatrix<T> {
        let n = self.diag.len();
        let (lo, up) = if transpose {
            (&self.upper, &self.lower)
        } else {
            (&self.lower, &self.upper)
        };
        DMatrix::from_fn(n, x.ncols(), |i, j| {
            let mut acc = self.diag[i] * x[(i, j)];
            if i > 0 {
                acc += lo[i - 1] * x[(i - 1, j)];
            }
            if i + 1 < n {
                acc += up[i] * x[(i + 1, j)];
            }
            acc
        })
    }
}

/// Framelet analysis operator on `n x n` images: the stack of the nine
/// blocks `W_i (x) W_j`, ordered `(0,0), (0,1), ..., (2,2)`, with
/// `(W_i (x) W_j) vec(X) = vec(W_j X W_i^T)`. With `levels = 2` the `(0,0)`
/// block is decomposed again, giving `17 n^2` outputs; `W^T W = I` holds for
/// either depth.
#[derive(Clone, Debug)]
pub struct Framelet2d<T: Scalar> {
    pub n: usize,
    pub levels: usize,
    filters: [Tridiag<T>; 3],
}

pub fn framelet_analysis_2d<T: Scalar>(n: usize) -> Result<Framelet2d<T>> {
    Framelet2d::new(n, 1)
}

impl<T: Scalar> Framelet2d<T> {
    pub fn new(n: usize, levels: usize) -> Result<Self> {
        if !(1..=2).contains(&levels) {
            return domain(format!("framelet depth must be 1 or 2, got {levels}"));
        }
        let w = framelet_filters::<T>(n)?;
        Ok(Self {
            n,
            levels,
            filters: std::array::from_fn(|k| Tridiag::from_dense(&w[k])),
        })
    }

    fn block(&self, i: usize, j: usize, x: &DMatrix<T>) -> DMatrix<T> {
        // W_j X W_i^T = W_j (W_i X^T)^T
        let xi = self.filters[i].left(&x.transpose(), false).transpose();
        self.filters[j].left(&xi, false)
    }

    fn block_adjoint(&self, i: usize, j: usize, u: &DMatrix<T>) -> DMatrix<T> {
        // W_j^T U W_i
        let a = self.filters[j].left(u, true);
        self.filters[i].left(&a.transpose(), true).transpose()
    }

    fn analyze(&self, x: &DMatrix<T>, depth: usize, out: &mut Vec<T>) {
        for i in 0..3 {
            for j in 0..3 {
                let b = self.block(i, j, x);
                if i == 0 && j == 0 && depth > 1 {
                    self.analyze(&b, depth - 1, out);
                } else {
                    out.extend_from_slice(b.as_slice());
                }
            }
        }
    }

    fn synthesize(&self, v: &[T], depth: usize, pos: &mut usize) -> DMatrix<T> {
        let n = self.n;
        let mut acc = DMatrix::zeros(n, n);
        for i in 0..3 {
            for j in 0..3 {
                let u = if i == 0 && j == 0 && depth > 1 {
                    self.synthesize(v, depth - 1, pos)
                } else {
                    let u = DMatrix::from_column_slice(n, n, &v[*pos..*pos + n * n]);
                    *pos += n * n;
                    u
                };
                acc += self.block_adjoint(i, j, &u);
            }
        }
        acc
    }
}

impl<T: Scalar> LinearOperator<T> for Framelet2d<T> {
    fn nrows(&self) -> usize {
        (1 + 8 * self.levels) * self.n * self.n
    }
    fn ncols(&self) -> usize {
        self.n * self.n
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let img = DMatrix::from_column_slice(self.n, self.n, x.as_slice());
        let mut out = Vec::with_capacity(self.nrows());
        self.analyze(&img, self.levels, &mut out);
        DVector::from_vec(out)
    }
    fn apply_adjoint(&self, v: &DVector<T>) -> DVector<T> {
        let mut pos = 0;
        let img = self.synthesize(v.as_slice(), self.levels, &mut pos);
        DVector::from_column_slice(img.as_slice())
    }
}

impl<T: Scalar> Regularizer<T> for Framelet2d<T> {
    fn kind(&self) -> RegularizerKind {
        RegularizerKind::Framelet
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::{random_vector, rng};
    use crate::operators::adjoint_check::assert_adjoint;
    use proptest::prelude::*;

    fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.kronecker(b)
    }

    #[test]
    fn first_derivative_displayed_matrix() {
        let d = first_derivative_1d::<f64>(4).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(3, 4, &[1., -1., 0., 0., 0., 1., -1., 0., 0., 0., 1., -1.]);
        assert_eq!(d, expected);
    }

    #[test]
    fn second_derivative_displayed_matrix() {
        let d = second_derivative_1d::<f64>(4).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(2, 4, &[-1., 2., -1., 0., 0., -1., 2., -1.]);
        assert_eq!(d, expected);
    }

    #[test]
    fn derivative_rejects_short_signals() {
        assert!(first_derivative_1d::<f64>(1).is_err());
        assert!(second_derivative_1d::<f64>(2).is_err());
        assert!(derivative_2d::<f64>(3, 8).is_err());
        assert!(derivative_2d::<f64>(1, 2).is_err());
        assert!(framelet_analysis_2d::<f64>(2).is_err());
    }

    #[test]
    fn first_derivative_on_constant_and_ramp() {
        let d = first_derivative_1d::<f64>(7).unwrap();
        assert_eq!(d.apply(&DVector::from_element(7, 3.5)).amax(), 0.0);
        let ramp = DVector::from_fn(7, |i, _| i as f64);
        assert!(d.apply(&ramp).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn second_derivative_on_ramp_and_impulse() {
        let d = second_derivative_1d::<f64>(5).unwrap();
        let ramp = DVector::from_fn(5, |i, _| 2.0 * i as f64 + 1.0);
        assert_eq!(d.apply(&ramp).amax(), 0.0);
        let imp = DVector::from_vec(vec![0., 0., 1., 0., 0.]);
        assert_eq!(d.apply(&imp).as_slice(), &[-1., 2., -1.]);
    }

    #[test]
    fn derivative_2d_matches_kronecker_assembly() {
        let n = 8;
        let mut g = rng(11);
        for order in [1, 2] {
            let op = derivative_2d::<f64>(order, n).unwrap();
            let d = op.d.to_dense();
            let eye = DMatrix::identity(n, n);
            let dense = kron(&d, &eye) + kron(&eye, &d);
            let x = random_vector(&mut g, n * n);
            assert!((op.apply(&x) - &dense * &x).amax() < 1e-12);
            let v = random_vector(&mut g, op.nrows());
            assert!((op.apply_adjoint(&v) - dense.tr_mul(&v)).amax() < 1e-12);
        }
    }

    #[test]
    fn derivative_2d_null_spaces() {
        let n = 9;
        let l1 = derivative_2d::<f64>(1, n).unwrap();
        assert_eq!(l1.apply(&DVector::from_element(n * n, 0.3)).amax(), 0.0);
        let l2 = derivative_2d::<f64>(2, n).unwrap();
        let affine = DMatrix::from_fn(n, n, |i, j| 0.5 * i as f64 - 2.0 * j as f64 + 1.0);
        let out = l2.apply(&DVector::from_column_slice(affine.as_slice()));
        assert!(out.amax() < 1e-13);
    }

    #[test]
    fn vertical_edge_is_localized() {
        let n = 10;
        let edge = 6;
        let img = DMatrix::from_fn(n, n, |_, j| if j >= edge { 1.0 } else { 0.0 });
        let l1 = derivative_2d::<f64>(1, n).unwrap();
        let out = l1.apply(&DVector::from_column_slice(img.as_slice()));
        // The X D^T part is n x (n-1); only its column edge-1 can be nonzero.
        let out = DMatrix::from_column_slice(n, n - 1, out.as_slice());
        for j in 0..n - 1 {
            let col_max = out.column(j).amax();
            if j == edge - 1 {
                assert_eq!(col_max, 1.0);
            } else {
                assert_eq!(col_max, 0.0);
            }
        }
    }

    #[test]
    fn filters_match_displayed_matrices_at_n4() {
        let [w0, w1, w2] = framelet_filters::<f64>(4).unwrap();
        let s = std::f64::consts::SQRT_2 / 4.0;
        let e0 = DMatrix::from_row_slice(4, 4, &[3., 1., 0., 0., 1., 2., 1., 0., 0., 1., 2., 1., 0., 0., 1., 3.]) / 4.0;
        let e1 = DMatrix::from_row_slice(4, 4, &[-1., 1., 0., 0., -1., 0., 1., 0., 0., -1., 0., 1., 0., 0., -1., 1.]) * s;
        let e2 = DMatrix::from_row_slice(4, 4, &[1., -1., 0., 0., -1., 2., -1., 0., 0., -1., 2., -1., 0., 0., -1., 1.]) / 4.0;
        assert_eq!(w0, e0);
        assert_eq!(w1, e1);
        assert_eq!(w2, e2);
    }

    #[test]
    fn framelet_matches_dense_kronecker_assembly() {
        let n = 4;
        let w = framelet_filters::<f64>(n).unwrap();
        let mut blocks = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                blocks.push(kron(&w[i], &w[j]));
            }
        }
        let mut dense = DMatrix::zeros(9 * n * n, n * n);
        for (b, m) in blocks.iter().enumerate() {
            dense.view_mut((b * n * n, 0), (n * n, n * n)).copy_from(m);
        }
        let op = framelet_analysis_2d::<f64>(n).unwrap();
        assert!((op.to_dense() - &dense).amax() < 1e-15);
        assert!((dense.tr_mul(&dense) - DMatrix::identity(n * n, n * n)).amax() < 1e-14);
    }

    #[test]
    fn one_dimensional_filters_form_tight_frame() {
        for n in [3, 4, 7, 16] {
            let [w0, w1, w2] = framelet_filters::<f64>(n).unwrap();
            let s = w0.tr_mul(&w0) + w1.tr_mul(&w1) + w2.tr_mul(&w2);
            assert!((s - DMatrix::identity(n, n)).amax() < 1e-15, "n = {n}");
        }
    }

    #[test]
    fn tight_frame_identity_on_random_vectors() {
        let mut g = rng(12);
        for n in [4, 8, 16, 32] {
            for levels in [1, 2] {
                let op = Framelet2d::<f64>::new(n, levels).unwrap();
                for _ in 0..200 {
                    let x = random_vector(&mut g, n * n);
                    let wx = op.apply(&x);
                    assert!((op.apply_adjoint(&wx) - &x).amax() <= 1e-12);
                    assert!((wx.norm() - x.norm()).abs() <= 1e-12 * x.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn adjoint_consistency_for_all_regularizers() {
        assert_adjoint(&first_derivative_1d::<f64>(20).unwrap(), 100, 1e-10);
        assert_adjoint(&second_derivative_1d::<f64>(20).unwrap(), 100, 1e-10);
        assert_adjoint(&derivative_2d::<f64>(1, 7).unwrap(), 100, 1e-10);
        assert_adjoint(&derivative_2d::<f64>(2, 7).unwrap(), 100, 1e-10);
        assert_adjoint(&framelet_analysis_2d::<f64>(6).unwrap(), 100, 1e-10);
        assert_adjoint(&Framelet2d::<f64>::new(6, 2).unwrap(), 100, 1e-10);
        assert_adjoint(&Identity::new(5), 10, 1e-15);
    }

    #[test]
    fn kinds_and_dimensions() {
        assert_eq!(Regularizer::<f64>::kind(&Identity::new(3)), RegularizerKind::Identity);
        let l2 = derivative_2d::<f64>(2, 5).unwrap();
        assert_eq!(l2.kind(), RegularizerKind::SecondDeriv);
        assert_eq!(l2.output_dim(), 15);
        let w = Framelet2d::<f64>::new(5, 2).unwrap();
        assert_eq!(w.output_dim(), 17 * 25);
    }

    proptest! {
        #[test]
        fn framelet_preserves_norm(n in 3usize..12, seed in any::<u64>()) {
            let op = framelet_analysis_2d::<f64>(n).unwrap();
            let x = random_vector(&mut rng(seed), n * n);
            prop_assert!((op.apply(&x).norm() - x.norm()).abs() <= 1e-12 * x.norm().max(1.0));
        }

        #[test]
        fn first_derivative_kills_constants(n in 2usize..50, c in -1e3f64..1e3) {
            let d = first_derivative_1d::<f64>(n).unwrap();
            prop_assert_eq!(d.apply(&DVector::from_element(n, c)).amax(), 0.0);
        }
    }
}
