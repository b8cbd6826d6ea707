//! Quasi-Newton minimization over a feasible region that can only be
//! probed pointwise (here: the set of stable matrices).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖∇f‖∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers `f` by less than `f_tol · max(1, |f|)`.
    pub f_tol: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-9,
            f_tol: 1e-15,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vector,
    pub f: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
    pub evaluations: usize,
}

const ARMIJO: f64 = 1e-4;

/// Minimizes `f` starting at the feasible point `x0`.
///
/// Every trial point is screened with `feasible` before `f` is evaluated;
/// infeasible or non-finite trials halve the step. When the line search
/// cannot make progress the inverse-Hessian estimate is reset once before
/// giving up, and the best point found so far is returned.
pub fn minimize<F, P>(mut f: F, mut feasible: P, x0: Vector, opts: &BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
    P: FnMut(&Vector) -> bool,
{
    let dim = x0.len();
    if !feasible(&x0) {
        return Err(Error::invalid("optimizer start point is infeasible"));
    }
    let (mut fx, mut g) = f(&x0)?;
    if !fx.is_finite() || !g.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("objective is not finite at the start point".into()));
    }
    let mut x = x0;
    let mut evaluations = 1;
    let mut h = Mat::identity(dim, dim);
    let mut fresh = true;
    let mut iterations = 0;

    let converged_at = |fx: f64, g: &Vector| g.amax() <= opts.grad_tol * fx.abs().max(1.0);
    if dim == 0 || converged_at(fx, &g) {
        let grad_inf = if dim == 0 { 0.0 } else { g.amax() };
        return Ok(BfgsOutcome { x, f: fx, grad_inf, iterations, converged: true, evaluations });
    }

    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = Mat::identity(dim, dim);
            fresh = true;
            d = -g.clone();
            slope = -g.norm_squared();
        }
        // on a fresh metric, cap the first trial so it moves at most unit length
        let mut t = if fresh { (1.0 / d.amax()).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = &x + &d * t;
            if feasible(&trial) {
                let (ft, gt) = f(&trial)?;
                evaluations += 1;
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + ARMIJO * t * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                break;
            }
            h = Mat::identity(dim, dim);
            fresh = true;
            continue;
        };

        let s = &xn - &x;
        let y = &gn - &g;
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;

        if converged_at(fx, &g) {
            converged = true;
            break;
        }
        if decrease <= opts.f_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // BFGS inverse update written with rank-one terms
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
    }

    Ok(BfgsOutcome {
        grad_inf: g.amax(),
        x,
        f: fx,
        iterations,
        converged,
        evaluations,
    })
}
