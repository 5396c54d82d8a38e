//! Logistic loss, the two rank transforms and their compositions.
//!
//! All logarithms are base 2. Derivatives carry explicit `1/ln 2` factors.
//!
//! The checked functions validate their inputs and are meant for library
//! callers; the [`raw`] module has the unchecked versions that the objective
//! and gradient loops use.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Selects one of the two monotone transforms applied to a sum of losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    /// `log2(t + 1)`: unbounded, slowly growing.
    Rho1,
    /// `1 - 1/log2(t + 2)`: saturates at 1.
    Rho2,
}

impl TransformKind {
    pub fn eval(self, t: f64) -> Result<f64> {
        transform(self, t)
    }

    pub fn grad(self, t: f64) -> Result<f64> {
        transform_grad(self, t)
    }
}

fn check_finite(t: f64) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("expected a finite argument, got {t}")))
    }
}

fn check_transform_domain(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "transform argument must be finite and >= 0, got {t}"
        )))
    }
}

/// `log2(1 + 2^-t)`.
pub fn logistic_loss(t: f64) -> Result<f64> {
    check_finite(t)?;
    Ok(raw::logistic_loss(t))
}

/// Derivative of [`logistic_loss`]: `-1 / (2^t + 1)`.
pub fn logistic_loss_grad(t: f64) -> Result<f64> {
    check_finite(t)?;
    Ok(raw::logistic_loss_grad(t))
}

pub fn transform(kind: TransformKind, t: f64) -> Result<f64> {
    check_transform_domain(t)?;
    Ok(raw::transform(kind, t))
}

pub fn transform_grad(kind: TransformKind, t: f64) -> Result<f64> {
    check_transform_domain(t)?;
    Ok(raw::transform_grad(kind, t))
}

/// Robust loss `transform(kind, logistic_loss(t))`.
pub fn robust_loss(kind: TransformKind, t: f64) -> Result<f64> {
    transform(kind, logistic_loss(t)?)
}

pub fn robust_loss_grad(kind: TransformKind, t: f64) -> Result<f64> {
    let inner = logistic_loss(t)?;
    Ok(transform_grad(kind, inner)? * raw::logistic_loss_grad(t))
}

/// Unchecked scalar kernels. Callers guarantee the domains.
pub mod raw {
    use super::{TransformKind, LN_2};

    #[inline]
    pub fn logistic_loss(t: f64) -> f64 {
        if t >= 0.0 {
            (-t).exp2().ln_1p() / LN_2
        } else {
            // 2^-t overflows for very negative t
            -t + t.exp2().ln_1p() / LN_2
        }
    }

    #[inline]
    pub fn logistic_loss_grad(t: f64) -> f64 {
        -1.0 / (t.exp2() + 1.0)
    }

    #[inline]
    pub fn transform(kind: TransformKind, t: f64) -> f64 {
        match kind {
            TransformKind::Rho1 => t.ln_1p() / LN_2,
            // log2(1 + t/2) / log2(t + 2), free of cancellation near 0
            TransformKind::Rho2 => (0.5 * t).ln_1p() / (t + 2.0).ln(),
        }
    }

    #[inline]
    pub fn transform_grad(kind: TransformKind, t: f64) -> f64 {
        match kind {
            TransformKind::Rho1 => 1.0 / ((t + 1.0) * LN_2),
            TransformKind::Rho2 => {
                let l = (t + 2.0).log2();
                1.0 / ((t + 2.0) * LN_2 * l * l)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, t: f64) -> f64 {
        let h = 1e-5;
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn logistic_loss_values() {
        assert_eq!(logistic_loss(0.0).unwrap(), 1.0);
        assert!(logistic_loss(60.0).unwrap() < 1e-17);
        assert!(logistic_loss(60.0).unwrap() > 0.0);
        // log2(1 + 2^50) = 50 + log2(1 + 2^-50) = 50 + 1.28e-15
        let v = logistic_loss(-50.0).unwrap();
        assert!(v >= 50.0 && v - 50.0 < 1e-14, "{v}");
        assert!(logistic_loss(-1e6).unwrap().is_finite());
        assert!(logistic_loss(1e6).unwrap() >= 0.0);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(matches!(logistic_loss(f64::NAN), Err(Error::Domain(_))));
        assert!(logistic_loss(f64::INFINITY).is_err());
        assert!(logistic_loss_grad(f64::NEG_INFINITY).is_err());
        assert!(transform(TransformKind::Rho1, -1e-9).is_err());
        assert!(transform_grad(TransformKind::Rho2, -1.0).is_err());
        assert!(robust_loss(TransformKind::Rho2, f64::NAN).is_err());
    }

    #[test]
    fn logistic_grad_values() {
        assert_eq!(logistic_loss_grad(0.0).unwrap(), -0.5);
        let g = logistic_loss_grad(60.0).unwrap();
        assert!(g < 0.0 && g > -1e-17);
        for t in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let fd = central_diff(raw::logistic_loss, t);
            assert!(rel_err(logistic_loss_grad(t).unwrap(), fd) <= 1e-6);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn transform_values() {
        use TransformKind::*;
        assert_eq!(transform(Rho1, 0.0).unwrap(), 0.0);
        assert_eq!(transform(Rho1, 1.0).unwrap(), 1.0);
        assert_eq!(transform(Rho2, 0.0).unwrap(), 0.0);
        assert_eq!(transform(Rho2, 2.0).unwrap(), 0.5);
        for t in [0.1, 1.0, 10.0, 1000.0] {
            assert!(transform(Rho1, t).unwrap() >= transform(Rho2, t).unwrap());
        }
        assert!((transform_grad(Rho1, 0.0).unwrap() - 1.0 / LN_2).abs() < 1e-15);
        assert!((transform_grad(Rho1, 0.0).unwrap() - 1.442695).abs() < 1e-6);
        assert!((transform_grad(Rho2, 0.0).unwrap() - 0.721348).abs() < 1e-6);
        for kind in [Rho1, Rho2] {
            for t in [0.0, 0.5, 5.0, 100.0] {
                // the raw kernels are defined slightly below 0, so the stencil may straddle it
                let fd = central_diff(|s| raw::transform(kind, s), t);
                assert!(rel_err(transform_grad(kind, t).unwrap(), fd) <= 1e-6);
            }
        }
    }

    #[test]
    fn robust_loss_values() {
        use TransformKind::*;
        assert_eq!(robust_loss(Rho1, 0.0).unwrap(), 1.0);
        let expect = 1.0 - 1.0 / 3f64.log2();
        assert!((robust_loss(Rho2, 0.0).unwrap() - expect).abs() < 1e-15);
        assert!((robust_loss(Rho2, 0.0).unwrap() - 0.369070).abs() < 1e-6);
        assert!(robust_loss(Rho2, -1e6).unwrap() < 1.0);
        assert!(robust_loss_grad(Rho1, -1e6).unwrap().abs() < 1e-5);
    }

    #[test]
    fn derivative_grids_match_finite_differences() {
        for i in 0..100 {
            let t = -20.0 + 40.0 * i as f64 / 99.0;
            let fd = central_diff(raw::logistic_loss, t);
            assert!(rel_err(raw::logistic_loss_grad(t), fd) <= 1e-6, "sigma0' at {t}");
            for kind in [TransformKind::Rho1, TransformKind::Rho2] {
                let fd = central_diff(|s| robust_loss(kind, s).unwrap(), t);
                assert!(rel_err(robust_loss_grad(kind, t).unwrap(), fd) <= 1e-6);
            }
        }
        for i in 0..100 {
            let t = 0.01 + 40.0 * i as f64 / 99.0;
            for kind in [TransformKind::Rho1, TransformKind::Rho2] {
                let fd = central_diff(|s| raw::transform(kind, s), t);
                assert!(rel_err(raw::transform_grad(kind, t), fd) <= 1e-6, "{kind:?} at {t}");
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn logistic_bounds_zero_one_loss(t in -1e3f64..1e3) {
                let v = raw::logistic_loss(t);
                prop_assert!(v > 0.0 || t > 1000.0);
                prop_assert!(v >= (-t).max(0.0));
                let indicator = if t < 0.0 { 1.0 } else { 0.0 };
                prop_assert!(v >= indicator);
            }

            #[test]
            fn type_one_dominates_type_two(t in -200f64..200.0) {
                prop_assert!(robust_loss(TransformKind::Rho1, t).unwrap()
                    >= robust_loss(TransformKind::Rho2, t).unwrap());
            }

            #[test]
            fn monotone(a in -50f64..50.0, b in -50f64..50.0) {
                prop_assume!(a < b);
                prop_assert!(raw::logistic_loss(a) > raw::logistic_loss(b));
                let (ta, tb) = (a.abs(), b.abs());
                prop_assume!(ta < tb);
                for kind in [TransformKind::Rho1, TransformKind::Rho2] {
                    prop_assert!(raw::transform(kind, ta) < raw::transform(kind, tb));
                    prop_assert!(raw::transform_grad(kind, ta) > 0.0);
                }
            }
        }
    }
}
