//! Small dense factorizations: thin QR with column appends, rank-checked
//! least squares, and the generalized SVD of a matrix pair.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Thin QR factorization `A = Q R` with `R` having a nonnegative diagonal.
pub fn thin_qr<T: Scalar>(a: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < T::zero() {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Triangular factor of a thin QR without forming `Q`.
pub fn qr_r<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let mut r = a.clone().qr().r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < T::zero() {
            r.row_mut(i).neg_mut();
        }
    }
    r
}

/// Orthogonalizes `v` against the orthonormal columns of `basis` with
/// classical Gram-Schmidt, repeating the pass once when the norm drops by
/// more than a factor `1/sqrt(2)`. Returns the projection coefficients.
pub fn orthogonalize<T: Scalar>(basis: &DMatrix<T>, v: &mut DVector<T>) -> DVector<T> {
    let k = basis.ncols();
    let mut coeffs = DVector::zeros(k);
    if k == 0 {
        return coeffs;
    }
    let kappa = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    for _ in 0..2 {
        let before = v.norm();
        let h = basis.tr_mul(v);
        v.gemv(-T::one(), basis, &h, T::one());
        coeffs += h;
        if v.norm() > kappa * before {
            break;
        }
    }
    coeffs
}

/// Appends column `a` to the thin factorization `(q, r)` of some `A`,
/// producing the factorization of `[A, a]`. Returns the new diagonal entry.
pub fn qr_append<T: Scalar>(q: &mut DMatrix<T>, r: &mut DMatrix<T>, a: &DVector<T>) -> T {
    let k = q.ncols();
    let mut w = a.clone();
    let h = orthogonalize(q, &mut w);
    let rho = w.norm();
    let qn = if rho > T::zero() { w / rho } else { w };
    let mut q_new = std::mem::replace(q, DMatrix::zeros(0, 0)).insert_column(k, T::zero());
    q_new.set_column(k, &qn);
    *q = q_new;
    let mut r_new = std::mem::replace(r, DMatrix::zeros(0, 0))
        .insert_row(k, T::zero())
        .insert_column(k, T::zero());
    for i in 0..k {
        r_new[(i, k)] = h[i];
    }
    r_new[(k, k)] = rho;
    *r = r_new;
    rho
}

/// Appends a column to a matrix in place.
pub fn push_column<T: Scalar>(m: &mut DMatrix<T>, col: &DVector<T>) {
    let k = m.ncols();
    let rows = if k == 0 { col.len() } else { m.nrows() };
    let old = std::mem::replace(m, DMatrix::zeros(0, 0));
    let mut grown = if k == 0 {
        DMatrix::zeros(rows, 1)
    } else {
        old.insert_column(k, T::zero())
    };
    grown.set_column(k, col);
    *m = grown;
}

/// Solves `min ||A x - b||` for `A` with full column rank by Householder QR.
pub fn lstsq<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let n = a.ncols();
    if a.nrows() < n {
        return Err(Error::NullSpace(format!(
            "least-squares system has {} rows for {} unknowns",
            a.nrows(),
            n
        )));
    }
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows, right-hand side {}",
            a.nrows(),
            b.len()
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    check_rank(&r)?;
    let mut rhs = b.clone();
    qr.q_tr_mul(&mut rhs);
    let rhs = rhs.rows(0, n).into_owned();
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::NullSpace("triangular solve failed".into()))
}

/// Thin QR through faer, with `R` returned as a nalgebra matrix with a
/// nonnegative diagonal and `Q` adjusted to match.
fn faer_thin_qr<T: Scalar>(a: faer::MatRef<'_, T>) -> (faer::Mat<T>, DMatrix<T>) {
    let qr = a.qr();
    let mut q = qr.compute_thin_Q();
    let rf = qr.thin_R();
    let mut r = DMatrix::from_fn(rf.nrows(), rf.ncols(), |i, j| if j >= i { rf[(i, j)] } else { T::zero() });
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < T::zero() {
            r.row_mut(i).neg_mut();
            for k in 0..q.nrows() {
                q[(k, i)] = -q[(k, i)];
            }
        }
    }
    (q, r)
}

fn check_rank<T: Scalar>(r: &DMatrix<T>) -> Result<()> {
    let n = r.ncols().min(r.nrows());
    let dmax = (0..n).map(|i| r[(i, i)].magnitude()).fold(T::zero(), |a, b| a.max(b));
    let tol = dmax * T::epsilon() * T::lit(n.max(1) as f64);
    if dmax == T::zero() || (0..n).any(|i| r[(i, i)].magnitude() <= tol) {
        return Err(Error::NullSpace(
            "stacked operator is rank deficient; null spaces of the data and \
             regularization terms intersect"
                .into(),
        ));
    }
    Ok(())
}

/// Generalized SVD of a pair `{A, B}` with `A` of size `m x n` (`m >= n`) and
/// `B` of size `q x n`:
///
/// ```text
/// A = U  diag(c) Y^T,     B = V diag(s) Y^T,     c_i^2 + s_i^2 = 1
/// ```
///
/// Computed from the thin QR of the stack `[A; B] = [Q1; Q2] R` followed by the
/// SVD of `Q1` (giving `c`, `W`) and a Householder QR of `Q2 W` (giving `V`, `s`).
/// Columns are ordered by increasing `c`, which keeps the second QR stable.
#[derive(Clone, Debug)]
pub struct Gsvd<T: Scalar> {
    /// `m x n`, orthonormal columns.
    pub u: DMatrix<T>,
    /// `q x min(q, n)`, orthonormal columns.
    pub v: DMatrix<T>,
    pub c: DVector<T>,
    /// Length `n`; entries past `min(q, n)` are zero.
    pub s: DVector<T>,
    /// Orthogonal `n x n` right factor of the CS decomposition.
    pub w: DMatrix<T>,
    /// Upper-triangular factor of the stacked QR.
    pub r: DMatrix<T>,
}

impl<T: Scalar> Gsvd<T> {
    pub fn new(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<Self> {
        let (m, n, q) = (a.nrows(), a.ncols(), b.nrows());
        if b.ncols() != n {
            return Err(Error::Dimension(format!(
                "pair has {} and {} columns",
                n,
                b.ncols()
            )));
        }
        if m < n {
            return Err(Error::Dimension(format!(
                "first matrix must have at least as many rows as columns ({m} < {n})"
            )));
        }
        // The two n x n-sized factorizations dominate at image sizes, so they
        // run through faer's blocked kernels.
        let stack = faer::Mat::from_fn(m + q, n, |i, j| if i < m { a[(i, j)] } else { b[(i - m, j)] });
        let (qs, r) = faer_thin_qr(stack.as_ref());
        check_rank(&r)?;
        let q1 = qs.subrows(0, m);
        let q2 = qs.subrows(m, q);

        let svd = q1
            .thin_svd()
            .map_err(|e| Error::NullSpace(format!("SVD of the stacked factor failed: {e:?}")))?;
        // faer sorts singular values in decreasing order; reverse to increasing.
        let (u_raw, w_raw) = (svd.U(), svd.V());
        let sv = svd.S().column_vector();
        let u = DMatrix::from_fn(m, n, |i, j| u_raw[(i, n - 1 - j)]);
        let w_f = faer::Mat::from_fn(n, n, |i, j| w_raw[(i, n - 1 - j)]);
        let c = DVector::from_fn(n, |i, _| sv[n - 1 - i].min(T::one()));

        let nx = q.min(n);
        let mut s = DVector::zeros(n);
        let v = if q == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let z = q2 * &w_f;
            let (qz, rz) = faer_thin_qr(z.as_ref());
            for i in 0..nx {
                s[i] = rz[(i, i)];
            }
            DMatrix::from_fn(q, nx, |i, j| qz[(i, j)])
        };
        let w = DMatrix::from_fn(n, n, |i, j| w_f[(i, j)]);
        Ok(Self { u, v, c, s, w, r })
    }

    /// The nonsingular factor `Y = R^T W`.
    pub fn y(&self) -> DMatrix<T> {
        self.r.transpose() * &self.w
    }

    /// Applies `Y^{-1} = W^T R^{-T}` to a vector.
    pub fn y_inv_mul(&self, v: &DVector<T>) -> DVector<T> {
        let t = self
            .r
            .tr_solve_upper_triangular(v)
            .expect("rank was checked at construction");
        self.w.tr_mul(&t)
    }

    /// Applies `Y^{-T} = R^{-1} W` to a vector.
    pub fn y_inv_tr_mul(&self, v: &DVector<T>) -> DVector<T> {
        let t = &self.w * v;
        self.r
            .solve_upper_triangular(&t)
            .expect("rank was checked at construction")
    }

    /// `V diag(s) Y^T`, restricted to the stored columns of `V`.
    pub fn reconstruct_b(&self) -> DMatrix<T> {
        let nx = self.v.ncols();
        let yt = self.y().transpose();
        let mut vs = self.v.clone();
        for i in 0..nx {
            vs.column_mut(i).scale_mut(self.s[i]);
        }
        vs * yt.rows(0, nx)
    }

    /// `U diag(c) Y^T`.
    pub fn reconstruct_a(&self) -> DMatrix<T> {
        let mut uc = self.u.clone();
        for i in 0..self.c.len() {
            uc.column_mut(i).scale_mut(self.c[i]);
        }
        uc * self.y().transpose()
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    pub fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }
}
