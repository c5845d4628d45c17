//! Outer solvers for `min_{x,y} ||G(y) x - d||^2 + lambda ||L x||_p^p`.
//!
//! * [`gn_nls_solve`]: Gauss-Newton on the joint unknown `(x, y)`.
//! * [`genvarpro_solve`]: variable projection with a Tikhonov inner problem
//!   (`p = 2`).
//! * [`lp_varpro_solve`]: variable projection where the inner problem is solved
//!   by MM-GKS and the regularizer is reweighted, `L_hat = P L`, with `P` frozen
//!   during each outer step.
//!
//! The projected residual is `F(y) = [d; 0] - K(y) x(y)` with
//! `K = [G(y); sqrt(eta) L_hat]` and `x(y) = K^+ [d; 0]`. Each outer step takes
//! `s = argmin ||J s + F||` and sets `y <- y + s`.

use crate::error::{Error, Result};
use crate::gcv::GcvConfig;
use crate::linalg::{lstsq, Gsvd};
use crate::metrics::{relative_series, rre, ConvergenceRow};
use crate::mmgks::{majorant_weights, mmgks_solve_from, mmgks_solve_warm, EtaMode, MmgksConfig};
use crate::operators::{DenseOperator, ForwardModel, LinearOperator, ParamOperator};
use crate::problems::ProblemInstance;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Largest `n` for which the dense GSVD behind the full and half Jacobians is
/// attempted.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JacobianVariant {
    /// Both terms of the projected-residual derivative.
    Full,
    /// The `-A_j` term only.
    Half,
    /// `(dG/dy_j) x` against the plain data residual.
    Reduced,
}

impl JacobianVariant {
    pub const ALL: [JacobianVariant; 3] = [Self::Reduced, Self::Full, Self::Half];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Half => "half",
            Self::Reduced => "reduced",
        }
    }
}

impl fmt::Display for JacobianVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JacobianVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "half" => Ok(Self::Half),
            "reduced" => Ok(Self::Reduced),
            other => Err(Error::Config(format!(
                "unknown Jacobian variant '{other}' (expected reduced, full or half)"
            ))),
        }
    }
}

/// How the regularization parameter of the inner problem is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaMode<T: Scalar> {
    /// Fixed `lambda`; the majorant weight is `eta = lambda p / 2`.
    Fixed(T),
    /// GCV on the projected inner problem at every MM step.
    GcvAuto { omega: T },
}

/// Inner solver for `x(y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerSolver {
    /// Dense when `p = 2`, `lambda` is fixed and `n <= DENSE_LIMIT`, otherwise Krylov.
    Auto,
    /// Dense QR (or the GSVD already needed by the full and half Jacobians).
    Dense,
    /// MM-GKS.
    Krylov,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarproConfig<T: Scalar> {
    pub jacobian: JacobianVariant,
    pub max_iter: usize,
    /// Stop once `||s|| < step_tol * max(1, ||y||)`.
    pub step_tol: T,
    pub lambda_mode: LambdaMode<T>,
    /// Settings of the inner MM-GKS solve. `p` and `epsilon` are taken from
    /// here; `eta_mode` is overridden by `lambda_mode`.
    pub inner: MmgksConfig<T>,
    pub inner_solver: InnerSolver,
    /// Seed each inner MM-GKS solve with the previous outer iterate.
    pub warm_start: bool,
    /// Halve steps that increase the reduced objective.
    pub damping: bool,
    pub max_halvings: usize,
    /// Abort once `RRE(y)` exceeds this multiple of `RRE(y0)` (needs `y_true`).
    pub divergence_factor: T,
    /// Iterations whose `x` is kept in the record.
    pub snapshots: Vec<usize>,
}

impl<T: Scalar> Default for VarproConfig<T> {
    fn default() -> Self {
        Self {
            jacobian: JacobianVariant::Reduced,
            max_iter: 100,
            step_tol: T::lit(1e-6),
            lambda_mode: LambdaMode::GcvAuto { omega: T::one() },
            inner: MmgksConfig {
                gcv: GcvConfig {
                    interior: true,
                    ..GcvConfig::default()
                },
                ..MmgksConfig::default()
            },
            inner_solver: InnerSolver::Auto,
            warm_start: true,
            damping: false,
            max_halvings: 10,
            divergence_factor: T::lit(10.0),
            snapshots: Vec::new(),
        }
    }
}

impl<T: Scalar> VarproConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("at least one outer iteration is required".into()));
        }
        if !(self.step_tol > T::zero()) {
            return Err(Error::Config("step tolerance must be positive".into()));
        }
        if !(self.divergence_factor > T::one()) {
            return Err(Error::Config("divergence factor must exceed 1".into()));
        }
        match self.lambda_mode {
            LambdaMode::Fixed(l) if !(l >= T::zero()) => {
                return Err(Error::Config("lambda must be nonnegative".into()))
            }
            LambdaMode::GcvAuto { omega } if !(omega > T::zero() && omega <= T::one()) => {
                return Err(Error::Config("GCV weight must lie in (0, 1]".into()))
            }
            _ => {}
        }
        let mut inner = self.inner;
        inner.eta_mode = EtaMode::Fixed(T::one());
        inner.validate()
    }
}

/// The data of one outer solve. `x_true` and `y_true` only feed the error
/// columns and the divergence check.
#[derive(Clone, Copy)]
pub struct VarproProblem<'a, T: Scalar> {
    pub model: &'a dyn ForwardModel<T>,
    pub l: &'a dyn LinearOperator<T>,
    pub d: &'a DVector<T>,
    pub y0: &'a DVector<T>,
    pub x0: Option<&'a DVector<T>>,
    pub x_true: Option<&'a DVector<T>>,
    pub y_true: Option<&'a DVector<T>>,
}

impl<'a, T: Scalar> VarproProblem<'a, T> {
    pub fn new(
        model: &'a dyn ForwardModel<T>,
        l: &'a dyn LinearOperator<T>,
        d: &'a DVector<T>,
        y0: &'a DVector<T>,
    ) -> Self {
        Self {
            model,
            l,
            d,
            y0,
            x0: None,
            x_true: None,
            y_true: None,
        }
    }

    /// Uses the instance's data and ground truth.
    pub fn from_instance(
        instance: &'a ProblemInstance<T>,
        l: &'a dyn LinearOperator<T>,
        y0: &'a DVector<T>,
    ) -> Self {
        Self {
            x_true: Some(&instance.x_true),
            y_true: Some(&instance.y_true),
            ..Self::new(&instance.family, l, &instance.d, y0)
        }
    }

    fn check(&self) -> Result<()> {
        let (m, n) = (self.model.nrows(), self.model.ncols());
        if self.d.len() != m {
            return Err(Error::Dimension(format!("data has length {}, expected {m}", self.d.len())));
        }
        if self.l.ncols() != n {
            return Err(Error::Dimension(format!(
                "regularizer acts on {} unknowns, model on {n}",
                self.l.ncols()
            )));
        }
        if self.y0.len() != self.model.param_count() {
            return Err(Error::Dimension(format!(
                "{} initial parameters for a model with {}",
                self.y0.len(),
                self.model.param_count()
            )));
        }
        for (name, v, len) in [("x0", self.x0, n), ("x_true", self.x_true, n)] {
            if v.is_some_and(|v| v.len() != len) {
                return Err(Error::Dimension(format!("{name} must have length {len}")));
            }
        }
        if self.y_true.is_some_and(|v| v.len() != self.y0.len()) {
            return Err(Error::Dimension("y_true has the wrong length".into()));
        }
        Ok(())
    }
}

/// One outer iteration. Iteration `i` computes `x` at `y^(i-1)` and then
/// steps to `y^(i)`, which is the `y` stored here.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord<T: Scalar> {
    pub iteration: usize,
    pub y: DVector<T>,
    pub eta: T,
    pub lambda: T,
    /// `||G x - d||^2 + eta ||P L x||^2` at the inner solution.
    pub func_value: T,
    /// `||J^T F||` for the Jacobian and residual used by the step.
    pub grad_norm: T,
    pub step_norm: T,
    pub rre_x: Option<T>,
    pub rre_y: Option<T>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    MaxIterations,
    StepTolerance,
    Diverged(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<T: Scalar> {
    pub y0: DVector<T>,
    pub rows: Vec<IterationRecord<T>>,
    /// Iteration and iterate with the smallest `RRE(x)`.
    pub best: Option<(usize, DVector<T>)>,
    pub snapshots: Vec<(usize, DVector<T>)>,
    pub stop: StopReason,
}

impl<T: Scalar> RunRecord<T> {
    fn new(y0: &DVector<T>) -> Self {
        Self {
            y0: y0.clone(),
            rows: Vec::new(),
            best: None,
            snapshots: Vec::new(),
            stop: StopReason::MaxIterations,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rre_x(&self) -> Vec<T> {
        self.rows.iter().filter_map(|r| r.rre_x).collect()
    }

    pub fn rre_y(&self) -> Vec<T> {
        self.rows.iter().filter_map(|r| r.rre_y).collect()
    }

    /// `(iteration, value)` of the smallest `RRE(x)`.
    pub fn min_rre_x(&self) -> Option<(usize, T)> {
        argmin(self.rows.iter().filter_map(|r| r.rre_x.map(|v| (r.iteration, v))))
    }

    pub fn min_rre_y(&self) -> Option<(usize, T)> {
        argmin(self.rows.iter().filter_map(|r| r.rre_y.map(|v| (r.iteration, v))))
    }

    /// Rows normalized by the first iteration. Error columns are NaN when no
    /// ground truth was given.
    pub fn convergence_rows(&self) -> Result<Vec<ConvergenceRow<T>>> {
        let f: Vec<T> = self.rows.iter().map(|r| r.func_value).collect();
        let g: Vec<T> = self.rows.iter().map(|r| r.grad_norm).collect();
        let rel_f = relative_series(&f)?;
        let rel_g = relative_series(&g)?;
        let nan = T::lit(f64::NAN);
        Ok(self
            .rows
            .iter()
            .enumerate()
            .map(|(k, r)| ConvergenceRow {
                iteration: r.iteration,
                rel_func_value: rel_f[k],
                rel_grad_norm: rel_g[k],
                rre_y: r.rre_y.unwrap_or(nan),
                rre_x: r.rre_x.unwrap_or(nan),
                eta: r.eta,
                lambda: r.lambda,
                seconds: r.seconds,
            })
            .collect())
    }
}

fn argmin<T: Scalar>(it: impl Iterator<Item = (usize, T)>) -> Option<(usize, T)> {
    it.fold(None, |best, (i, v)| match best {
        Some((_, b)) if b <= v => best,
        _ => Some((i, v)),
    })
}

#[derive(Clone, Debug)]
pub struct VarproOutput<T: Scalar> {
    /// Inner solution of the last iteration.
    pub x: DVector<T>,
    /// Parameters after the last step.
    pub y: DVector<T>,
    pub record: RunRecord<T>,
}

/// Minimizer of `||[G; sqrt(lambda) L] x - [d; 0]||` by dense QR of the stack.
pub fn tik_solve<T: Scalar>(g: &DMatrix<T>, l: &DMatrix<T>, lambda: T, d: &DVector<T>) -> Result<DVector<T>> {
    let (m, n, q) = (g.nrows(), g.ncols(), l.nrows());
    if l.ncols() != n || d.len() != m {
        return Err(Error::Dimension("inconsistent Tikhonov problem sizes".into()));
    }
    if lambda < T::zero() {
        return Err(Error::Domain("lambda must be nonnegative".into()));
    }
    let mut stack = DMatrix::zeros(m + q, n);
    stack.rows_mut(0, m).copy_from(g);
    stack.rows_mut(m, q).copy_from(&(l * lambda.sqrt()));
    let mut rhs = DVector::zeros(m + q);
    rhs.rows_mut(0, m).copy_from(d);
    lstsq(&stack, &rhs)
}

/// Tikhonov solution for an operator too large to factor, by MM-GKS with
/// `p = 2` and `eta = lambda`.
pub fn tik_solve_krylov<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    lambda: T,
    d: &DVector<T>,
    config: &MmgksConfig<T>,
) -> Result<DVector<T>> {
    let cfg = MmgksConfig {
        p: T::lit(2.0),
        eta_mode: EtaMode::Fixed(lambda),
        ..*config
    };
    Ok(mmgks_solve_from(g, l, d, &cfg, None)?.x)
}

/// The stacked problem `K = [G; sqrt(lambda) L]` through the GSVD of `{G, L}`,
/// `G = U C Y^T`, `L = V S Y^T`, so that `K^T K = Y diag(c^2 + lambda s^2) Y^T`.
#[derive(Clone, Debug)]
pub struct TikhonovGsvd<T: Scalar> {
    pub gsvd: Gsvd<T>,
    pub lambda: T,
    /// `c^2 + lambda s^2`.
    pub m: DVector<T>,
}

impl<T: Scalar> TikhonovGsvd<T> {
    pub fn new(g: &DMatrix<T>, l: &DMatrix<T>, lambda: T) -> Result<Self> {
        if lambda < T::zero() {
            return Err(Error::Domain("lambda must be nonnegative".into()));
        }
        if g.ncols() > DENSE_LIMIT {
            return Err(Error::Config(format!(
                "a dense GSVD with {} unknowns is not feasible (limit {DENSE_LIMIT}); \
                 use the reduced Jacobian",
                g.ncols()
            )));
        }
        let gsvd = Gsvd::new(g, l).map_err(|e| {
            Error::NullSpace(format!("GSVD of the pair failed ({e}); use the reduced Jacobian"))
        })?;
        let m = gsvd.c.component_mul(&gsvd.c) + gsvd.s.component_mul(&gsvd.s) * lambda;
        if m.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::NullSpace(
                "stacked operator is rank deficient at this lambda".into(),
            ));
        }
        Ok(Self { gsvd, lambda, m })
    }

    /// `x = Y^{-T} diag(c / M) U^T d`.
    pub fn solve(&self, d: &DVector<T>) -> DVector<T> {
        let mut t = self.gsvd.u.tr_mul(d);
        for i in 0..t.len() {
            t[i] *= self.gsvd.c[i] / self.m[i];
        }
        self.gsvd.y_inv_tr_mul(&t)
    }

    /// Stacks `[U (a ⊙ top); sqrt(lambda) V (b ⊙ top)]` restricted to the
    /// stored columns of `V`.
    fn lift(&self, top: &DVector<T>, a: impl Fn(usize) -> T, b: impl Fn(usize) -> T) -> DVector<T> {
        let (m, q) = (self.gsvd.u.nrows(), self.gsvd.v.nrows());
        let nx = self.gsvd.v.ncols();
        let ta = DVector::from_fn(top.len(), |i, _| a(i) * top[i]);
        let tb = DVector::from_fn(nx, |i, _| b(i) * top[i]);
        let mut out = DVector::zeros(m + q);
        out.rows_mut(0, m).copy_from(&(&self.gsvd.u * ta));
        if nx > 0 {
            out.rows_mut(m, q).copy_from(&(&self.gsvd.v * tb * self.lambda.sqrt()));
        }
        out
    }

    /// `-A_j = -P_perp [a; 0]` with `a = (dG/dy_j) x`.
    pub fn minus_a(&self, a: &DVector<T>) -> DVector<T> {
        let (c, s, mm) = (&self.gsvd.c, &self.gsvd.s, &self.m);
        let uta = self.gsvd.u.tr_mul(a);
        let mut out = self.lift(&uta, |i| c[i] * c[i] / mm[i], |i| s[i] * c[i] / mm[i]);
        let mut top = out.rows_mut(0, a.len());
        top -= a;
        out
    }

    /// `-B_j = (K^+)^T (dG/dy_j)^T (G x - d)`, given `h = (dG/dy_j)^T (G x - d)`.
    pub fn minus_b(&self, h: &DVector<T>) -> DVector<T> {
        let (c, s, mm) = (&self.gsvd.c, &self.gsvd.s, &self.m);
        let z = self.gsvd.y_inv_mul(h);
        self.lift(&z, |i| c[i] / mm[i], |i| s[i] / mm[i])
    }
}

/// `F = [d; 0] - [G; sqrt(lambda) L] x`.
pub fn stacked_residual<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &dyn LinearOperator<T>,
    lambda: T,
    x: &DVector<T>,
    d: &DVector<T>,
) -> DVector<T> {
    let (m, q) = (g.nrows(), l.nrows());
    let mut f = DVector::zeros(m + q);
    f.rows_mut(0, m).copy_from(&(d - g.apply(x)));
    f.rows_mut(m, q).copy_from(&(l.apply(x) * (-lambda.sqrt())));
    f
}

/// The projected residual `F(y) = [d; 0] - K K^+ [d; 0]` at the operator `g`.
pub fn projected_residual<T: Scalar>(
    g: &dyn LinearOperator<T>,
    l: &DMatrix<T>,
    lambda: T,
    d: &DVector<T>,
) -> Result<DVector<T>> {
    let gd = g.to_dense();
    let x = tik_solve(&gd, l, lambda, d)?;
    let mut f = DVector::zeros(gd.nrows() + l.nrows());
    f.rows_mut(0, gd.nrows()).copy_from(&(d - &gd * &x));
    f.rows_mut(gd.nrows(), l.nrows()).copy_from(&(l * &x * (-lambda.sqrt())));
    Ok(f)
}

fn projected_jacobian<T: Scalar>(
    g: &dyn ParamOperator<T>,
    tik: &TikhonovGsvd<T>,
    x: &DVector<T>,
    d: &DVector<T>,
    with_b: bool,
) -> DMatrix<T> {
    let r = g.param_count();
    let rows = g.nrows() + tik.gsvd.v.nrows();
    let resid = g.apply(x) - d;
    let mut j = DMatrix::zeros(rows, r);
    for k in 0..r {
        let mut col = tik.minus_a(&g.derivative_apply(k, x));
        if with_b {
            col += tik.minus_b(&g.derivative_adjoint_apply(k, &resid));
        }
        j.set_column(k, &col);
    }
    j
}

fn check_dense_size<T: Scalar>(g: &dyn ParamOperator<T>) -> Result<()> {
    if g.ncols() > DENSE_LIMIT {
        return Err(Error::Config(format!(
            "full and half Jacobians need a dense GSVD; {} unknowns exceed the limit of \
             {DENSE_LIMIT}, use the reduced Jacobian",
            g.ncols()
        )));
    }
    Ok(())
}

/// Jacobian of the projected residual, columns `-A_j - B_j`. `x` must be the
/// Tikhonov solution at `g`.
pub fn jacobian_full<T: Scalar>(
    g: &dyn ParamOperator<T>,
    l: &DMatrix<T>,
    lambda: T,
    x: &DVector<T>,
    d: &DVector<T>,
) -> Result<DMatrix<T>> {
    check_dense_size(g)?;
    let tik = TikhonovGsvd::new(&g.to_dense(), l, lambda)?;
    Ok(projected_jacobian(g, &tik, x, d, true))
}

/// As [`jacobian_full`] with the `B_j` term dropped.
pub fn jacobian_half<T: Scalar>(
    g: &dyn ParamOperator<T>,
    l: &DMatrix<T>,
    lambda: T,
    x: &DVector<T>,
    d: &DVector<T>,
) -> Result<DMatrix<T>> {
    check_dense_size(g)?;
    let tik = TikhonovGsvd::new(&g.to_dense(), l, lambda)?;
    Ok(projected_jacobian(g, &tik, x, d, false))
}

/// Any variant from a factorization of `{G, L}` at `lambda`, so that the full
/// and half Jacobians can share one GSVD. `tik` must belong to `g`.
pub fn jacobian_with<T: Scalar>(
    variant: JacobianVariant,
    g: &dyn ParamOperator<T>,
    tik: &TikhonovGsvd<T>,
    x: &DVector<T>,
    d: &DVector<T>,
) -> Result<DMatrix<T>> {
    if tik.gsvd.u.nrows() != g.nrows() || tik.gsvd.w.nrows() != g.ncols() {
        return Err(Error::Dimension("factorization does not match the operator".into()));
    }
    Ok(match variant {
        JacobianVariant::Reduced => jacobian_reduced(g, x),
        JacobianVariant::Full => projected_jacobian(g, tik, x, d, true),
        JacobianVariant::Half => projected_jacobian(g, tik, x, d, false),
    })
}

/// Columns `(dG/dy_j) x`.
pub fn jacobian_reduced<T: Scalar>(g: &dyn ParamOperator<T>, x: &DVector<T>) -> DMatrix<T> {
    let mut j = DMatrix::zeros(g.nrows(), g.param_count());
    for k in 0..g.param_count() {
        j.set_column(k, &g.derivative_apply(k, x));
    }
    j
}

/// Gauss-Newton step `argmin ||J s + F||`.
pub fn gauss_newton_step<T: Scalar>(j: &DMatrix<T>, f: &DVector<T>) -> Result<DVector<T>> {
    lstsq(j, &(-f))
}

fn rel_err<T: Scalar>(v: &DVector<T>, truth: Option<&DVector<T>>) -> Option<T> {
    truth.and_then(|t| rre(v, t).ok())
}

/// Result of the inner problem at one `y`, together with the residual and
/// Jacobian used for the outer step.
struct Linearization<T: Scalar> {
    x: DVector<T>,
    eta: T,
    func_value: T,
    f: DVector<T>,
    j: DMatrix<T>,
}

struct Engine<'a, T: Scalar> {
    problem: VarproProblem<'a, T>,
    config: &'a VarproConfig<T>,
    p: T,
    dense: bool,
    l_dense: Option<DMatrix<T>>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(problem: VarproProblem<'a, T>, config: &'a VarproConfig<T>, p: T) -> Result<Self> {
        config.validate()?;
        problem.check()?;
        if !(p > T::zero() && p <= T::lit(2.0)) {
            return Err(Error::Config("p must lie in (0, 2]".into()));
        }
        let n = problem.model.ncols();
        let fixed = matches!(config.lambda_mode, LambdaMode::Fixed(_));
        let is_l2 = p == T::lit(2.0);
        let dense = match config.inner_solver {
            InnerSolver::Auto => is_l2 && fixed && n <= DENSE_LIMIT,
            InnerSolver::Krylov => false,
            InnerSolver::Dense => {
                if !(is_l2 && fixed) {
                    return Err(Error::Config(
                        "the dense inner solver needs p = 2 and a fixed lambda".into(),
                    ));
                }
                if n > DENSE_LIMIT {
                    return Err(Error::Config(format!(
                        "{n} unknowns exceed the dense limit of {DENSE_LIMIT}"
                    )));
                }
                true
            }
        };
        let needs_gsvd = config.jacobian != JacobianVariant::Reduced;
        if needs_gsvd && n > DENSE_LIMIT {
            return Err(Error::Config(format!(
                "{} Jacobian needs a dense GSVD; {n} unknowns exceed the limit of \
                 {DENSE_LIMIT}, use the reduced Jacobian",
                config.jacobian
            )));
        }
        let l_dense = (dense || needs_gsvd).then(|| problem.l.to_dense());
        Ok(Self {
            problem,
            config,
            p,
            dense,
            l_dense,
        })
    }

    fn inner_config(&self) -> MmgksConfig<T> {
        let eta_mode = match self.config.lambda_mode {
            LambdaMode::Fixed(lambda) => EtaMode::Fixed(lambda * self.p / T::lit(2.0)),
            LambdaMode::GcvAuto { omega } => EtaMode::GcvAuto { omega },
        };
        MmgksConfig {
            p: self.p,
            eta_mode,
            ..self.config.inner
        }
    }

    fn linearize(
        &self,
        g: &dyn ParamOperator<T>,
        x_prev: Option<&DVector<T>>,
        eta_prev: Option<T>,
    ) -> Result<Linearization<T>> {
        let d = self.problem.d;
        let l = self.problem.l;
        let variant = self.config.jacobian;
        let (x, eta, weights) = if self.dense {
            let LambdaMode::Fixed(lambda) = self.config.lambda_mode else {
                unreachable!("dense path requires a fixed lambda")
            };
            let l_dense = self.l_dense.as_ref().expect("dense regularizer");
            let x = match variant {
                JacobianVariant::Reduced => tik_solve(&g.to_dense(), l_dense, lambda, d)?,
                _ => TikhonovGsvd::new(&g.to_dense(), l_dense, lambda)?.solve(d),
            };
            (x, lambda, DVector::from_element(l.nrows(), T::one()))
        } else {
            let start = if self.config.warm_start { x_prev } else { None };
            let out = mmgks_solve_warm(g, l, d, &self.inner_config(), start, eta_prev)?;
            let w = majorant_weights(&l.apply(&out.x), self.p, self.config.inner.epsilon);
            (out.x, out.eta, w)
        };
        let scale = weights.map(|w| w.sqrt());
        let plx = l.apply(&x).component_mul(&scale);
        let resid = g.apply(&x) - d;
        let func_value = resid.norm_squared() + eta * plx.norm_squared();
        let (f, j) = match variant {
            JacobianVariant::Reduced => (resid, jacobian_reduced(g, &x)),
            _ => {
                let l_dense = self.l_dense.as_ref().expect("dense regularizer");
                let mut l_hat = l_dense.clone();
                for (i, mut row) in l_hat.row_iter_mut().enumerate() {
                    row *= scale[i];
                }
                let tik = TikhonovGsvd::new(&g.to_dense(), &l_hat, eta)?;
                // The projected residual and its derivative are defined at the
                // exact minimizer for the frozen weights.
                let x_lin = if self.dense { x.clone() } else { tik.solve(d) };
                let l_op = DenseOperator::new(l_hat);
                let f = stacked_residual(g, &l_op, eta, &x_lin, d);
                let j = projected_jacobian(g, &tik, &x_lin, d, variant == JacobianVariant::Full);
                (f, j)
            }
        };
        Ok(Linearization {
            x,
            eta,
            func_value,
            f,
            j,
        })
    }

    /// Objective after re-solving the inner problem at `y`, or `None` when `y`
    /// is outside the model's domain.
    fn merit(&self, y: &DVector<T>, x_prev: &DVector<T>, eta_prev: T) -> Result<Option<T>> {
        let Ok(g) = self.problem.model.at(y) else {
            return Ok(None);
        };
        Ok(Some(self.linearize(g.as_ref(), Some(x_prev), Some(eta_prev))?.func_value))
    }

    fn run(&self) -> Result<VarproOutput<T>> {
        let start = Instant::now();
        let pr = &self.problem;
        let mut y = pr.y0.clone();
        let mut record = RunRecord::new(&y);
        let rre_y0 = rel_err(&y, pr.y_true);
        let mut x_prev: Option<DVector<T>> = pr.x0.cloned();
        let mut x_last = DVector::zeros(pr.model.ncols());
        let mut best_rre: Option<T> = None;
        let mut eta_prev: Option<T> = None;
        for it in 1..=self.config.max_iter {
            let g = pr.model.at(&y)?;
            let lin = self.linearize(g.as_ref(), x_prev.as_ref(), eta_prev)?;
            eta_prev = Some(lin.eta);
            let grad_norm = lin.j.tr_mul(&lin.f).norm();
            let mut s = gauss_newton_step(&lin.j, &lin.f)?;
            let mut candidate = &y + &s;
            let mut halvings = 0;
            if self.config.damping {
                loop {
                    match self.merit(&candidate, &lin.x, lin.eta)? {
                        Some(v) if v <= lin.func_value => break,
                        _ if halvings >= self.config.max_halvings => break,
                        _ => {}
                    }
                    s *= T::lit(0.5);
                    candidate = &y + &s;
                    halvings += 1;
                }
            }
            while pr.model.at(&candidate).is_err() && halvings < self.config.max_halvings {
                s *= T::lit(0.5);
                candidate = &y + &s;
                halvings += 1;
            }
            let valid = pr.model.at(&candidate).is_ok();
            if valid {
                y = pr.model.canonical(&candidate);
            }
            let rre_x = rel_err(&lin.x, pr.x_true);
            let rre_y = rel_err(&y, pr.y_true);
            if let Some(v) = rre_x {
                if best_rre.is_none_or(|b| v < b) {
                    best_rre = Some(v);
                    record.best = Some((it, lin.x.clone()));
                }
            }
            if self.config.snapshots.contains(&it) {
                record.snapshots.push((it, lin.x.clone()));
            }
            record.rows.push(IterationRecord {
                iteration: it,
                y: y.clone(),
                eta: lin.eta,
                lambda: lin.eta * T::lit(2.0) / self.p,
                func_value: lin.func_value,
                grad_norm,
                step_norm: if valid { s.norm() } else { T::zero() },
                rre_x,
                rre_y,
                seconds: start.elapsed().as_secs_f64(),
            });
            x_last = lin.x.clone();
            x_prev = Some(lin.x);
            if !valid {
                record.stop = StopReason::Diverged(format!(
                    "iteration {it}: no step within {} halvings stays in the parameter domain",
                    self.config.max_halvings
                ));
                break;
            }
            if let (Some(r0), Some(r)) = (rre_y0, rre_y) {
                if r0 > T::zero() && r > self.config.divergence_factor * r0 {
                    record.stop = StopReason::Diverged(format!(
                        "iteration {it}: RRE(y) = {r} exceeds {} times the initial {r0}",
                        self.config.divergence_factor
                    ));
                    break;
                }
            }
            if s.norm() < self.config.step_tol * y.norm().max(T::one()) {
                record.stop = StopReason::StepTolerance;
                break;
            }
        }
        Ok(VarproOutput {
            x: x_last,
            y,
            record,
        })
    }
}

/// Variable projection with a Tikhonov inner problem at fixed `lambda`.
pub fn genvarpro_solve<T: Scalar>(
    problem: VarproProblem<'_, T>,
    lambda: T,
    config: &VarproConfig<T>,
) -> Result<VarproOutput<T>> {
    let config = VarproConfig {
        lambda_mode: LambdaMode::Fixed(lambda),
        ..config.clone()
    };
    Engine::new(problem, &config, T::lit(2.0))?.run()
}

/// Variable projection with an `l_p` regularizer (`p = config.inner.p`).
pub fn lp_varpro_solve<T: Scalar>(problem: VarproProblem<'_, T>, config: &VarproConfig<T>) -> Result<VarproOutput<T>> {
    Engine::new(problem, config, config.inner.p)?.run()
}

/// Gauss-Newton on the joint residual `[G(y) x - d; sqrt(lambda) L x]`.
///
/// Without `x0` the iteration starts from the Tikhonov solution at `y0`.
pub fn gn_nls_solve<T: Scalar>(
    problem: VarproProblem<'_, T>,
    lambda: T,
    config: &VarproConfig<T>,
) -> Result<VarproOutput<T>> {
    config.validate()?;
    problem.check()?;
    let pr = problem;
    let n = pr.model.ncols();
    if n > DENSE_LIMIT {
        return Err(Error::Config(format!(
            "joint Gauss-Newton assembles dense Jacobians; {n} unknowns exceed {DENSE_LIMIT}"
        )));
    }
    if lambda < T::zero() {
        return Err(Error::Domain("lambda must be nonnegative".into()));
    }
    let start = Instant::now();
    let l = pr.l.to_dense();
    let sl = lambda.sqrt();
    let mut y = pr.y0.clone();
    let mut x = match pr.x0 {
        Some(x0) => x0.clone(),
        None => tik_solve(&pr.model.at(&y)?.to_dense(), &l, lambda, pr.d)?,
    };
    let (m, q, r) = (pr.model.nrows(), l.nrows(), pr.model.param_count());
    let residual = |g: &dyn ParamOperator<T>, x: &DVector<T>| -> DVector<T> {
        let mut f = DVector::zeros(m + q);
        f.rows_mut(0, m).copy_from(&(g.apply(x) - pr.d));
        f.rows_mut(m, q).copy_from(&(&l * x * sl));
        f
    };
    let mut record = RunRecord::new(&y);
    let rre_y0 = rel_err(&y, pr.y_true);
    let mut best_rre: Option<T> = None;
    for it in 1..=config.max_iter {
        let g = pr.model.at(&y)?;
        let f = residual(g.as_ref(), &x);
        let mut jf = DMatrix::zeros(m + q, n + r);
        jf.view_mut((0, 0), (m, n)).copy_from(&g.to_dense());
        jf.view_mut((m, 0), (q, n)).copy_from(&(&l * sl));
        jf.view_mut((0, n), (m, r)).copy_from(&jacobian_reduced(g.as_ref(), &x));
        let func_value = f.norm_squared();
        let grad_norm = jf.tr_mul(&f).norm();
        let mut s = match gauss_newton_step(&jf, &f) {
            Ok(s) => s,
            Err(Error::NullSpace(_)) => {
                // Tiny ridge for a singular linearization.
                let mu = jf.norm() * T::lit(1e-8);
                let mut aug = DMatrix::zeros(m + q + n + r, n + r);
                aug.rows_mut(0, m + q).copy_from(&jf);
                aug.rows_mut(m + q, n + r).fill_diagonal(mu);
                let mut rhs = DVector::zeros(m + q + n + r);
                rhs.rows_mut(0, m + q).copy_from(&f);
                gauss_newton_step(&aug, &rhs)?
            }
            Err(e) => return Err(e),
        };
        let mut halvings = 0;
        let accept = |s: &DVector<T>| -> Option<T> {
            let yc = &y + s.rows(n, r);
            let gc = pr.model.at(&yc).ok()?;
            let xc = &x + s.rows(0, n);
            Some(residual(gc.as_ref(), &xc).norm_squared())
        };
        loop {
            let ok = match accept(&s) {
                Some(v) => !config.damping || v <= func_value,
                None => false,
            };
            if ok || halvings >= config.max_halvings {
                break;
            }
            s *= T::lit(0.5);
            halvings += 1;
        }
        let valid = accept(&s).is_some();
        if valid {
            x += s.rows(0, n);
            y = pr.model.canonical(&(&y + s.rows(n, r)));
        }
        let rre_x = rel_err(&x, pr.x_true);
        let rre_y = rel_err(&y, pr.y_true);
        if let Some(v) = rre_x {
            if best_rre.is_none_or(|b| v < b) {
                best_rre = Some(v);
                record.best = Some((it, x.clone()));
            }
        }
        if config.snapshots.contains(&it) {
            record.snapshots.push((it, x.clone()));
        }
        record.rows.push(IterationRecord {
            iteration: it,
            y: y.clone(),
            eta: lambda,
            lambda,
            func_value,
            grad_norm,
            step_norm: if valid { s.norm() } else { T::zero() },
            rre_x,
            rre_y,
            seconds: start.elapsed().as_secs_f64(),
        });
        if !valid {
            record.stop = StopReason::Diverged(format!(
                "iteration {it}: no step within {} halvings stays in the parameter domain",
                config.max_halvings
            ));
            break;
        }
        if let (Some(r0), Some(rv)) = (rre_y0, rre_y) {
            if r0 > T::zero() && rv > config.divergence_factor * r0 {
                record.stop = StopReason::Diverged(format!(
                    "iteration {it}: RRE(y) = {rv} exceeds {} times the initial {r0}",
                    config.divergence_factor
                ));
                break;
            }
        }
        let mut yx = DVector::zeros(n + r);
        yx.rows_mut(0, n).copy_from(&x);
        yx.rows_mut(n, r).copy_from(&y);
        if s.norm() < config.step_tol * yx.norm().max(T::one()) {
            record.stop = StopReason::StepTolerance;
            break;
        }
    }
    Ok(VarproOutput { x, y, record })
}
