//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Used for the batch feature-track trainer. The objective there is smooth
//! but not convex, so the search direction is checked for descent on every
//! iteration and the curvature history is dropped when it is not.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-6,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f`, which returns the value and writes the gradient into its
/// second argument.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    check(fx, &g, 0)?;

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];

    let mut iterations = 0;
    while iterations < opts.max_iters {
        let gnorm = norm(&g);
        if gnorm < opts.grad_tol {
            return Ok(Minimum { x, value: fx, grad_norm: gnorm, iterations, converged: true });
        }
        iterations += 1;

        // two-loop recursion
        dir.copy_from_slice(&g);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= alpha[i] * yi;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha[i] - beta) * si;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&g, &dir);
        let mut step = 1.0;
        if history.is_empty() || slope.is_nan() || slope >= 0.0 {
            history.clear();
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = -gnorm * gnorm;
            step = 1.0 / gnorm.max(1.0);
        }

        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            for ((xn, xi), d) in x_new.iter_mut().zip(&x).zip(&dir) {
                *xn = xi + step * d;
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + opts.armijo * step * slope {
                check(f_new, &g_new, iterations)?;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if history.is_empty() {
                // no progress possible along the steepest direction
                let grad_norm = norm(&g);
                return Ok(Minimum { x, value: fx, grad_norm, iterations, converged: false });
            }
            history.clear();
        }
    }
    let grad_norm = norm(&g);
    Ok(Minimum { x, value: fx, grad_norm, iterations, converged: grad_norm < opts.grad_tol })
}

fn check(fx: f64, g: &[f64], iteration: usize) -> Result<()> {
    if fx.is_finite() && g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "non-finite objective or gradient at iteration {iteration}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let target = [1.0, -2.0, 3.0];
        let m = minimize(
            |x, g| {
                let mut v = 0.0;
                for i in 0..3 {
                    let d = x[i] - target[i];
                    v += (i + 1) as f64 * d * d;
                    g[i] = 2.0 * (i + 1) as f64 * d;
                }
                v
            },
            vec![0.0; 3],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!(m.converged);
        for i in 0..3 {
            assert!((m.x[i] - target[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &LbfgsOptions { max_iters: 2000, ..Default::default() },
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn nan_is_divergence() {
        let r = minimize(|_, g| {
            g[0] = 1.0;
            f64::NAN
        }, vec![0.0], &LbfgsOptions::default());
        assert!(matches!(r, Err(Error::Divergence(_))));
    }
}
