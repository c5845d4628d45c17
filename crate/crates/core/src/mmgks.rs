//! Majorization-minimization in generalized Krylov subspaces for
//!
//! ```text
//! min_x ||G x - d||^2 + lambda * sum_j phi((L x)_j),   phi(t) = (t^2 + eps^2)^(p/2)
//! ```
//!
//! Each step minimizes the adaptive quadratic tangent majorant
//! `||G x - d||^2 + eta ||P L x||^2` over a growing subspace, where
//! `P^2 = diag(w)`, `w = ((Lx)^2 + eps^2)^(p/2 - 1)`. The majorant is tangent to
//! the smoothed objective exactly when `lambda = 2 eta / p`, which is the
//! convention used for every reported `lambda`.

use crate::error::{domain, Error, Result};
use crate::gcv::{select_eta, GcvConfig};
use crate::linalg::{lstsq, orthogonalize, push_column, qr_append, qr_r};
use crate::operators::LinearOperator;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

/// How the majorant weight `eta` is chosen each iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaMode<T: Scalar> {
    Fixed(T),
    /// Weighted GCV on the projected problem with trace weight `omega`.
    GcvAuto { omega: T },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmgksConfig<T: Scalar> {
    pub p: T,
    pub epsilon: T,
    /// Golub-Kahan steps used to seed the subspace.
    pub ell: usize,
    pub max_iter: usize,
    /// Stop when `||x_new - x|| / ||x|| < tol`.
    pub tol: T,
    pub eta_mode: EtaMode<T>,
    /// Full reorthogonalization during bidiagonalization.
    pub reorthogonalize: bool,
    pub gcv: GcvConfig<T>,
}

impl<T: Scalar> Default for MmgksConfig<T> {
    fn default() -> Self {
        Self {
            p: T::one(),
            epsilon: T::lit(1e-2),
            ell: 10,
            max_iter: 100,
            tol: T::lit(1e-6),
            eta_mode: EtaMode::GcvAuto { omega: T::one() },
            reorthogonalize: true,
            gcv: GcvConfig::default(),
        }
    }
}

impl<T: Scalar> MmgksConfig<T> {
    pub fn validate(&self) -> Result<()> {
        check_p_eps(self.p, self.epsilon)?;
        if self.ell == 0 {
            return domain("initial subspace dimension must be at least 1");
        }
        if !(self.tol > T::zero()) {
            return domain("stopping tolerance must be positive");
        }
        match self.eta_mode {
            EtaMode::Fixed(eta) if !(eta > T::zero()) => {
                domain(format!("fixed eta must be positive, got {eta}"))
            }
            EtaMode::GcvAuto { omega } => self.gcv.with_omega(omega).validate(),
            _ => Ok(()),
        }
    }

    /// `lambda = 2 eta / p`.
    pub fn lambda_for(&self, eta: T) -> T {
        eta * T::lit(2.0) / self.p
    }
}

fn check_p_eps<T: Scalar>(p: T, epsilon: T) -> Result<()> {
    if !(p > T::zero() && p <= T::lit(2.0)) {
        return domain(format!("p must lie in (0, 2], got {p}"));
    }
    if epsilon < T::zero() {
        return domain(format!("epsilon must be nonnegative, got {epsilon}"));
    }
    if p <= T::one() && epsilon == T::zero() {
        return domain("p <= 1 requires a positive smoothing epsilon");
    }
    Ok(())
}

/// Smoothed objective `||G x - d||^2 + lambda * sum_j ((Lx)_j^2 + eps^2)^(p/2)`.
pub fn objective_value<T: Scalar>(
    x: &DVector<T>,
    g: &dyn LinearOperator<T>,
    d: &DVector<T>,
    l: &dyn LinearOperator<T>,
    lambda: T,
    p: T,
    epsilon: T,
) -> Result<T> {
    check_p_eps(p, epsilon)?;
    if x.len() != g.ncols() || d.len() != g.nrows() || l.ncols() != g.ncols() {
        return Err(Error::Dimension("objective operands have inconsistent sizes".into()));
    }
    let fit = (g.apply(x) - d).norm_squared();
    Ok(fit + lambda * smoothed_penalty(&l.apply(x), p, epsilon))
}

/// `sum_j (u_j^2 + eps^2)^(p/2)`.
pub fn smoothed_penalty<T: Scalar>(u: &DVector<T>, p: T, epsilon: T) -> T {
    let e2 = epsilon * epsilon;
    let half_p = p * T::lit(0.5);
    u.iter().fold(T::zero(), |acc, &t| acc + (t * t + e2).powf(half_p))
}

/// `w_j = (u_j^2 + eps^2)^(p/2 - 1)`.
pub fn majorant_weights<T: Scalar>(u: &DVector<T>, p: T, epsilon: T) -> DVector<T> {
    let e2 = epsilon * epsilon;
    let expo = p * T::lit(0.5) - T::one();
    if expo == T::zero() {
        return DVector::from_element(u.len(), T::one());
    }
    u.map(|t| (t * t + e2).powf(expo))
}

/// Output of Golub-Kahan bidiagonalization: `G V = U B` with `B` lower
/// bidiagonal.
#[derive(Clone, Debug)]
pub struct Bidiagonalization<T: Scalar> {
    pub u: DMatrix<T>,
    pub v: DMatrix<T>,
    pub b: DMatrix<T>,
    pub breakdown: bool,
}

/// `ell` steps of Golub-Kahan bidiagonalization of `G` started from `d`.
pub fn golub_kahan<T: Scalar>(
    g: &dyn LinearOperator<T>,
    d: &DVector<T>,
    ell: usize,
    reorthogonalize: bool,
) -> Result<Bidiagonalization<T>> {
    if d.len() != g.nrows() {
        return Err(Error::Dimension(format!(
            "data has length {}, operator has {} rows",
            d.len(),
            g.nrows()
        )));
    }
    let (m, n) = (g.nrows(), g.ncols());
    let beta1 = d.norm();
    if beta1 == T::zero() {
        return domain("cannot build a Krylov basis from zero data");
    }
    let mut u = DMatrix::zeros(m, 0);
    let mut v = DMatrix::zeros(n, 0);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    push_column(&mut u, &(d / beta1));
    let mut breakdown = false;
    let scale = T::lit(100.0) * T::epsilon();
    let mut prev_v: Option<DVector<T>> = None;
    let mut prev_beta = T::zero();
    for j in 0..ell.min(n).min(m) {
        let uj = u.column(j).into_owned();
        let mut r = g.apply_adjoint(&uj);
        let rnorm0 = r.norm();
        if let Some(pv) = &prev_v {
            r.axpy(-prev_beta, pv, T::one());
        }
        if reorthogonalize {
            orthogonalize(&v, &mut r);
        }
        let alpha = r.norm();
        if alpha <= scale * rnorm0.max(T::one()) {
            breakdown = true;
            break;
        }
        let vj = r / alpha;
        push_column(&mut v, &vj);
        alphas.push(alpha);
        let mut p = g.apply(&vj);
        let pnorm0 = p.norm();
        p.axpy(-alpha, &uj, T::one());
        if reorthogonalize {
            orthogonalize(&u, &mut p);
        }
        let beta = p.norm();
        if beta <= scale * pnorm0.max(T::one()) {
            breakdown = true;
            break;
        }
        push_column(&mut u, &(p / beta));
        betas.push(beta);
        prev_v = Some(vj);
        prev_beta = beta;
    }
    let k = alphas.len();
    let mut b = DMatrix::zeros(u.ncols(), k);
    for j in 0..k {
        b[(j, j)] = alphas[j];
        if j < betas.len() {
            b[(j + 1, j)] = betas[j];
        }
    }
    Ok(Bidiagonalization { u, v, b, breakdown })
}

/// Growing subspace with cached products and factorizations:
/// `G V = Q_G R_G` (maintained incrementally) and `P L V = Q_L R_L`
/// (recomputed whenever the weights change; `Q_L` is never needed).
#[derive(Clone, Debug)]
pub struct GksState<T: Scalar> {
    pub v: DMatrix<T>,
    pub gv: DMatrix<T>,
    pub lv: DMatrix<T>,
    pub q_g: DMatrix<T>,
    pub r_g: DMatrix<T>,
    pub r_l: DMatrix<T>,
    /// `Q_G^T d`.
    pub dhat: DVector<T>,
    pub gtd_norm: T,
    pub breakdown: bool,
}

impl<T: Scalar> GksState<T> {
    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    /// Recomputes `R_L` for row weights `sqrt(w)`.
    pub fn update_weights(&mut self, w: &DVector<T>) -> Result<()> {
        if w.len() != self.lv.nrows() {
            return Err(Error::Dimension(format!(
                "{} weights for {} regularizer rows",
                w.len(),
                self.lv.nrows()
            )));
        }
        let mut plv = self.lv.clone();
        for (i, wi) in w.iter().enumerate() {
            plv.row_mut(i).scale_mut(wi.sqrt());
        }
        self.r_l = square_r(qr_r(&plv), self.dim());
        Ok(())
    }

    fn append(&mut self, vn: &DVector<T>, g: &dyn LinearOperator<T>, l: &dyn LinearOperator<T>, d: &DVector<T>) {
        push_column(&mut self.v, vn);
        let gvn = g.apply(vn);
        push_column(&mut self.gv, &gvn);
        push_column(&mut self.lv, &l.apply(vn));
        qr_append(&mut self.q_g, &mut self.r_g, &gvn);
        let k = self.q_g.ncols() - 1;
        self.dhat = self.dhat.clone().insert_row(k, self.q_g.column(k).dot(d));
    }
}

/// Pads a wide triangular factor (fewer rows than columns) to `k x k`.
fn square_r<T: Scalar>(r: DMatrix<T>, k: usize) -> DMatrix<T> {
    if r.nrows() == k {
        return r;
    }
    let mut out = DMatrix::zeros(k, k);
    let rows = r.nrows().min(k);
    out.rows_mut(0, rows).copy_from(&r.rows(0, rows));
    out
}

/// Seeds the subspace with `ell` Golub-Kahan steps on `(G, d)`.
pub fn init_gks<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    d: &DVector<T>,
    ell: usize,
    reorthogonalize: bool,
) -> Result<GksState<T>> {
    if l.ncols() != g.ncols() {
        return Err(Error::Dimension(format!(
            "regularizer acts on {} unknowns, forward operator on {}",
            l.ncols(),
            g.ncols()
        )));
    }
    let gk = golub_kahan(g, d, ell, reorthogonalize)?;
    let gtd_norm = g.apply_adjoint(d).norm();
    let k = gk.v.ncols();
    let mut state = GksState {
        v: DMatrix::zeros(g.ncols(), 0),
        gv: DMatrix::zeros(g.nrows(), 0),
        lv: DMatrix::zeros(l.nrows(), 0),
        q_g: DMatrix::zeros(g.nrows(), 0),
        r_g: DMatrix::zeros(0, 0),
        r_l: DMatrix::zeros(0, 0),
        dhat: DVector::zeros(0),
        gtd_norm,
        breakdown: gk.breakdown,
    };
    for j in 0..k {
        state.append(&gk.v.column(j).into_owned(), g, l, d);
    }
    state.update_weights(&DVector::from_element(l.nrows(), T::one()))?;
    Ok(state)
}

/// Solves `min_z ||[R_G; sqrt(eta) R_L] z - [Q_G^T d; 0]||`.
pub fn project_and_solve<T: Scalar>(state: &GksState<T>, eta: T) -> Result<DVector<T>> {
    if !(eta > T::zero()) {
        return domain(format!("eta must be positive, got {eta}"));
    }
    let k = state.dim();
    if state.r_l.nrows() != k {
        return Err(Error::Dimension(
            "regularizer factor is stale; call update_weights after expanding".into(),
        ));
    }
    let mut a = DMatrix::zeros(2 * k, k);
    a.rows_mut(0, k).copy_from(&state.r_g);
    a.rows_mut(k, k).copy_from(&(&state.r_l * eta.sqrt()));
    let mut b = DVector::zeros(2 * k);
    b.rows_mut(0, k).copy_from(&state.dhat);
    lstsq(&a, &b).map_err(|_| {
        Error::NullSpace(
            "projected system is singular: the null spaces of G and L intersect".into(),
        )
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expansion {
    Expanded,
    /// The normal-equation residual is negligible; nothing was appended.
    Converged,
}

/// Appends the normalized normal-equation residual
/// `r = G^T (G V z - d) + eta L^T diag(w) L V z` to the basis.
#[allow(clippy::too_many_arguments)]
pub fn expand_subspace<T: Scalar>(
    state: &mut GksState<T>,
    z: &DVector<T>,
    eta: T,
    w: &DVector<T>,
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    d: &DVector<T>,
) -> Result<Expansion> {
    let r = normal_residual(state, z, eta, w, g, l, d);
    let rnorm = r.norm();
    if rnorm < T::lit(1e-14) * state.gtd_norm || state.dim() >= g.ncols() {
        return Ok(Expansion::Converged);
    }
    let mut v = r;
    orthogonalize(&state.v, &mut v);
    let vnorm = v.norm();
    if vnorm <= T::lit(1e3) * T::epsilon() * rnorm {
        return Ok(Expansion::Converged);
    }
    state.append(&(v / vnorm), g, l, d);
    Ok(Expansion::Expanded)
}

fn normal_residual<T: Scalar>(
    state: &GksState<T>,
    z: &DVector<T>,
    eta: T,
    w: &DVector<T>,
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    d: &DVector<T>,
) -> DVector<T> {
    let fit = &state.gv * z - d;
    let lz = (&state.lv * z).component_mul(w) * eta;
    g.apply_adjoint(&fit) + l.apply_adjoint(&lz)
}

/// Per-iteration history of an MM-GKS solve.
#[derive(Clone, Debug, Default)]
pub struct MmgksHistory<T: Scalar> {
    pub objective: Vec<T>,
    pub eta: Vec<T>,
    pub lambda: Vec<T>,
    pub relative_change: Vec<T>,
    pub basis_dim: Vec<usize>,
    pub seconds: Vec<f64>,
    /// Stopped on the relative-change tolerance.
    pub converged: bool,
    /// The subspace stopped growing (full-space solution reached).
    pub saturated: bool,
    pub breakdown: bool,
}

#[derive(Clone, Debug)]
pub struct MmgksOutput<T: Scalar> {
    pub x: DVector<T>,
    /// `eta` used for the final iterate.
    pub eta: T,
    /// Weights `w` at which the final iterate was computed.
    pub weights: DVector<T>,
    pub history: MmgksHistory<T>,
}

pub fn mmgks_solve<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    d: &DVector<T>,
    config: &MmgksConfig<T>,
) -> Result<MmgksOutput<T>> {
    mmgks_solve_from(g, l, d, config, None)
}

/// As [`mmgks_solve`], starting from `x0` (added to the initial subspace).
pub fn mmgks_solve_from<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    d: &DVector<T>,
    config: &MmgksConfig<T>,
    x0: Option<&DVector<T>>,
) -> Result<MmgksOutput<T>> {
    mmgks_solve_warm(g, l, d, config, x0, None)
}

/// As [`mmgks_solve_from`]. Under GCV with `interior` set, `eta0` stands in for
/// selections that land on the end of the grid until an interior one is found.
pub fn mmgks_solve_warm<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    d: &DVector<T>,
    config: &MmgksConfig<T>,
    x0: Option<&DVector<T>>,
    eta0: Option<T>,
) -> Result<MmgksOutput<T>> {
    config.validate()?;
    let start = Instant::now();
    let mut state = init_gks(g, l, d, config.ell, config.reorthogonalize)?;
    let mut x = DVector::zeros(g.ncols());
    if let Some(x0) = x0 {
        if x0.len() != g.ncols() {
            return Err(Error::Dimension("initial guess has the wrong length".into()));
        }
        let mut v = x0.clone();
        orthogonalize(&state.v, &mut v);
        let vn = v.norm();
        if vn > T::lit(1e-10) * x0.norm() {
            state.append(&(v / vn), g, l, d);
        }
        x = x0.clone();
    }
    let mut history = MmgksHistory {
        breakdown: state.breakdown,
        ..Default::default()
    };
    let mut eta = match config.eta_mode {
        EtaMode::Fixed(e) => e,
        EtaMode::GcvAuto { .. } => eta0.unwrap_or(T::one()),
    };
    let mut have_eta = eta0.is_some();
    let mut weights = DVector::from_element(l.nrows(), T::one());
    for _ in 0..config.max_iter {
        weights = majorant_weights(&l.apply(&x), config.p, config.epsilon);
        state.update_weights(&weights)?;
        if let EtaMode::GcvAuto { omega } = config.eta_mode {
            let gcv = config.gcv.with_omega(omega);
            let sel = select_eta(&state.r_g, &state.r_l, &state.dhat, &gcv)?;
            // Without an interior minimum, keep the last usable value.
            if !(gcv.interior && sel.at_boundary && have_eta) {
                eta = sel.eta;
                have_eta = !sel.at_boundary || !gcv.interior;
            }
        }
        let z = project_and_solve(&state, eta)?;
        let x_new = &state.v * &z;
        let lambda = config.lambda_for(eta);
        let change = if x.norm() > T::zero() {
            (&x_new - &x).norm() / x.norm()
        } else {
            T::max_value().unwrap_or(T::one())
        };
        x = x_new;
        let fit = (&state.gv * &z - d).norm_squared();
        history
            .objective
            .push(fit + lambda * smoothed_penalty(&(&state.lv * &z), config.p, config.epsilon));
        history.eta.push(eta);
        history.lambda.push(lambda);
        history.relative_change.push(change);
        history.basis_dim.push(state.dim());
        history.seconds.push(start.elapsed().as_secs_f64());
        if change < config.tol {
            history.converged = true;
            break;
        }
        if !history.saturated
            && expand_subspace(&mut state, &z, eta, &weights, g, l, d)? == Expansion::Converged
        {
            history.saturated = true;
        }
    }
    Ok(MmgksOutput {
        x,
        eta,
        weights,
        history,
    })
}
