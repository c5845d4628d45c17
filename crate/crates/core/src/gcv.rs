//! Weighted generalized cross validation on small projected problems
//! `min_z ||R_G z - dhat||^2 + eta ||R_L z||^2`, evaluated through the GSVD
//! of `{R_G, R_L}` so that each trial `eta` costs `O(k)`.

use crate::error::{domain, Error, Result};
use crate::linalg::Gsvd;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// GSVD of a square projected pair: `R_G = X_G diag(sigma_g) Y^T`,
/// `R_L = X_L diag(sigma_l) Y^T`.
#[derive(Clone, Debug)]
pub struct GsvdPair<T: Scalar> {
    pub x_g: DMatrix<T>,
    pub x_l: DMatrix<T>,
    pub y: DMatrix<T>,
    pub sigma_g: DVector<T>,
    pub sigma_l: DVector<T>,
}

pub fn gsvd_pair<T: Scalar>(r_g: &DMatrix<T>, r_l: &DMatrix<T>) -> Result<GsvdPair<T>> {
    let g = Gsvd::new(r_g, r_l)?;
    let y = g.y();
    Ok(GsvdPair {
        x_g: g.u,
        x_l: g.v,
        y,
        sigma_g: g.c,
        sigma_l: g.s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcvConfig<T: Scalar> {
    /// Trace weight in `(0, 1]`; `1` is plain GCV.
    pub omega: T,
    pub log10_lo: T,
    pub log10_hi: T,
    pub grid_count: usize,
    /// Relative tolerance of the golden-section refinement in `eta`.
    pub tol: T,
    /// Prefer the lowest interior local minimum of the grid over a minimum at
    /// either end. With `omega = 1` and a square projected pair the quotient
    /// tends to a `0/0` limit as `eta -> 0`, and rounding can make the lower
    /// end spuriously smallest.
    pub interior: bool,
}

impl<T: Scalar> Default for GcvConfig<T> {
    fn default() -> Self {
        Self {
            omega: T::one(),
            log10_lo: T::lit(-12.0),
            log10_hi: T::lit(4.0),
            grid_count: 200,
            tol: T::lit(1e-4),
            interior: false,
        }
    }
}

impl<T: Scalar> GcvConfig<T> {
    pub fn with_omega(mut self, omega: T) -> Self {
        self.omega = omega;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > T::zero() && self.omega <= T::one()) {
            return domain(format!("GCV weight must lie in (0, 1], got {}", self.omega));
        }
        if !(self.log10_hi > self.log10_lo) || self.grid_count < 3 {
            return domain("GCV grid needs increasing bounds and at least 3 points");
        }
        if !(self.tol > T::zero()) {
            return domain("GCV refinement tolerance must be positive");
        }
        Ok(())
    }
}

/// GCV quotient for one `eta`, from the GSVD diagonals.
pub fn gcv_value<T: Scalar>(gsvd: &GsvdPair<T>, dhat: &DVector<T>, eta: T, omega: T) -> Result<T> {
    let xd = gsvd.x_g.tr_mul(dhat);
    gcv_from_coeffs(&gsvd.sigma_g, &gsvd.sigma_l, &xd, eta, omega)
}

fn gcv_from_coeffs<T: Scalar>(
    sg: &DVector<T>,
    sl: &DVector<T>,
    xd: &DVector<T>,
    eta: T,
    omega: T,
) -> Result<T> {
    if !(eta > T::zero()) {
        return domain(format!("regularization parameter must be positive, got {eta}"));
    }
    let mut num = T::zero();
    let mut trace = T::zero();
    for i in 0..sg.len() {
        let c2 = sg[i] * sg[i];
        let g = eta * sl[i] * sl[i];
        let den = c2 + g;
        // 1 - f and 1 - omega f from their own numerators, so that filter
        // factors close to one keep their relative accuracy.
        let (keep, tr) = if den > T::zero() {
            (g / den, ((T::one() - omega) * c2 + g) / den)
        } else {
            (T::one(), T::one())
        };
        let res = keep * xd[i];
        num += res * res;
        trace += tr;
    }
    let denom = trace * trace;
    if !(denom > T::zero()) {
        return Err(Error::NullSpace(
            "GCV denominator vanishes: the regularization term has no effect".into(),
        ));
    }
    Ok(num / denom)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaSelection<T: Scalar> {
    pub eta: T,
    pub value: T,
    /// The GCV curve was flat over the whole grid; `eta` is the grid midpoint.
    pub degenerate: bool,
    /// The minimizer sits at an end of the grid.
    pub at_boundary: bool,
}

/// Minimizes the GCV function over a log grid, then refines the best bracket
/// by golden-section search in `log(eta)`.
pub fn select_eta<T: Scalar>(
    r_g: &DMatrix<T>,
    r_l: &DMatrix<T>,
    dhat: &DVector<T>,
    config: &GcvConfig<T>,
) -> Result<EtaSelection<T>> {
    let pair = gsvd_pair(r_g, r_l)?;
    select_eta_gsvd(&pair, dhat, config)
}

pub fn select_eta_gsvd<T: Scalar>(
    pair: &GsvdPair<T>,
    dhat: &DVector<T>,
    config: &GcvConfig<T>,
) -> Result<EtaSelection<T>> {
    config.validate()?;
    let xd = pair.x_g.tr_mul(dhat);
    let ln10 = T::ln_10();
    let f = |log_eta: T| -> T {
        gcv_from_coeffs(&pair.sigma_g, &pair.sigma_l, &xd, (log_eta * ln10).exp(), config.omega)
            .unwrap_or(T::max_value().unwrap_or(T::one() / T::epsilon()))
    };
    let n = config.grid_count;
    let step = (config.log10_hi - config.log10_lo) / T::lit((n - 1) as f64);
    let grid: Vec<T> = (0..n).map(|i| config.log10_lo + step * T::lit(i as f64)).collect();
    let values: Vec<T> = grid.iter().map(|&g| f(g)).collect();

    let (mut best, mut vmin, mut vmax) = (0, values[0], values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v < vmin {
            vmin = v;
            best = i;
        }
        vmax = vmax.max(v);
    }
    // Runs of values flat to roundoff at either end of the grid, where the
    // curve has reached a limit rather than a minimum.
    let flat = |a: T, b: T| (a - b).abs() <= T::lit(1e-4) * b.abs();
    let lo_flat = values.iter().take_while(|&&v| flat(v, values[0])).count();
    let hi_flat = values.iter().rev().take_while(|&&v| flat(v, values[n - 1])).count();
    let on_end = |i: usize| i < lo_flat || i >= n.saturating_sub(hi_flat);
    if config.interior && on_end(best) {
        let interior = (lo_flat.max(1)..n.saturating_sub(hi_flat).min(n - 1))
            .filter(|&i| values[i] < values[i - 1] && values[i] <= values[i + 1])
            .min_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(std::cmp::Ordering::Equal));
        if let Some(i) = interior {
            best = i;
        }
    }
    if vmin.is_finite() && vmax - vmin <= T::lit(1e-15) * vmax.magnitude() {
        let mid = (config.log10_lo + config.log10_hi) * T::lit(0.5);
        return Ok(EtaSelection {
            eta: (mid * ln10).exp(),
            value: f(mid),
            degenerate: true,
            at_boundary: false,
        });
    }
    if vmin >= T::max_value().unwrap_or(T::one() / T::epsilon()) {
        return Err(Error::NullSpace(
            "GCV denominator vanishes over the whole grid".into(),
        ));
    }

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n - 1)];
    let invphi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    // Interval width in log10 units equivalent to the relative tolerance.
    let width_tol = (T::one() + config.tol).ln() / ln10;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > width_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let mut log_eta = (a + b) * T::lit(0.5);
    let mut value = f(log_eta);
    if values[best] < value {
        log_eta = grid[best];
        value = values[best];
    }
    Ok(EtaSelection {
        eta: (log_eta * ln10).exp(),
        value,
        degenerate: false,
        at_boundary: on_end(best),
    })
}
