//! Reconstruction errors and per-iteration convergence rows.

use crate::error::{domain, Result};
use crate::scalar::Scalar;
use nalgebra::DVector;

/// Relative reconstruction error `||v - v_true|| / ||v_true||`.
pub fn rre<T: Scalar>(v: &DVector<T>, v_true: &DVector<T>) -> Result<T> {
    if v.len() != v_true.len() {
        return Err(crate::Error::Dimension(format!(
            "vectors have lengths {} and {}",
            v.len(),
            v_true.len()
        )));
    }
    let denom = v_true.norm();
    if denom == T::zero() {
        return domain("relative error against a zero reference");
    }
    Ok((v - v_true).norm() / denom)
}

/// Divides every entry by the first one.
pub fn relative_series<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let Some(&first) = values.first() else {
        return Ok(Vec::new());
    };
    if first == T::zero() {
        return domain("cannot normalize a series that starts at zero");
    }
    Ok(values.iter().map(|&v| v / first).collect())
}

/// One line of a convergence table. `seconds` is wall time since the start of
/// the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow<T: Scalar> {
    pub iteration: usize,
    pub rel_func_value: T,
    pub rel_grad_norm: T,
    pub rre_y: T,
    pub rre_x: T,
    pub eta: T,
    pub lambda: T,
    pub seconds: f64,
}
