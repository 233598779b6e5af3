//! Central finite-difference gradient oracle.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest relative error between `analytic` and the central difference
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` over all coordinates of `point`.
///
/// Relative error is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(f: F, point: &Tensor, analytic: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    grad_check_masked(f, point, analytic, h, |_| true)
}

/// As [`grad_check`], only visiting coordinates for which `include(i)` holds.
/// Use this to skip points sitting on a relu kink or a pooling tie.
pub fn grad_check_masked<F, M>(
    mut f: F,
    point: &Tensor,
    analytic: &Tensor,
    h: f64,
    include: M,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
    M: Fn(usize) -> bool,
{
    point.expect_same_shape("grad_check", analytic)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        if !include(i) {
            continue;
        }
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + h;
        let fp = f(&probe);
        probe.data_mut()[i] = x0 - h;
        let fm = f(&probe);
        probe.data_mut()[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} (f+ = {fp}, f- = {fm})"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::from_vec(vec![3.0]);
        let g = Tensor::from_vec(vec![6.0]);
        let err = grad_check(|t| t.data()[0] * t.data()[0], &x, &g, DEFAULT_STEP).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::from_vec(vec![3.0, 1.0]);
        let g = Tensor::from_vec(vec![6.0, 0.0]);
        let err = grad_check(|t| t.norm().powi(2), &x, &g, DEFAULT_STEP).unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn mask_skips_kink() {
        // relu at exactly 0 has no derivative; excluded coordinates are not probed
        let x = Tensor::from_vec(vec![0.0, 2.0]);
        let g = Tensor::from_vec(vec![0.0, 1.0]);
        let f = |t: &Tensor| t.data().iter().map(|v| v.max(0.0)).sum::<f64>();
        assert!(grad_check(f, &x, &g, DEFAULT_STEP).unwrap() > 0.4);
        let err = grad_check_masked(f, &x, &g, DEFAULT_STEP, |i| x.data()[i].abs() > 1e-6).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::from_vec(vec![0.0]);
        let g = Tensor::from_vec(vec![0.0]);
        let r = grad_check(|t| 1.0 / t.data()[0].abs().min(0.0), &x, &g, DEFAULT_STEP);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
