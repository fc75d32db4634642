//! Damped Newton iteration with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative Jacobian step; coordinate `j` moves by `fd_step * max(|z_j|, 1)`.
    pub fd_step: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome<const N: usize> {
    pub z: [f64; N],
    pub norm: f64,
    pub iterations: usize,
}

fn norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite<const N: usize>(v: Option<[f64; N]>) -> Option<[f64; N]> {
    v.filter(|v| v.iter().all(|x| x.is_finite()))
}

/// Solves `f(z) = 0`. `f` returns `None` outside its domain; such points are
/// treated as non-decreasing steps by the line search.
pub(crate) fn damped_newton<const N: usize, F>(f: F, z0: [f64; N], opts: &NewtonOptions) -> Result<NewtonOutcome<N>>
where
    F: Fn(&[f64; N]) -> Option<[f64; N]>,
{
    let mut z = z0;
    let mut fz = finite(f(&z)).ok_or_else(|| Error::NoConvergence {
        iterations: 0,
        residual_norm: f64::NAN,
        reason: "residuals undefined at the initial guess".into(),
        trace: Vec::new(),
    })?;
    let mut current = norm(&fz);
    let mut trace = vec![current];

    for iter in 0..=opts.max_iter {
        if current < opts.tol {
            return Ok(NewtonOutcome {
                z,
                norm: current,
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            break;
        }

        let mut jac = DMatrix::<f64>::zeros(N, N);
        for j in 0..N {
            let h = opts.fd_step * z[j].abs().max(1.0);
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let (Some(fp), Some(fm)) = (finite(f(&zp)), finite(f(&zm))) else {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual_norm: current,
                    reason: format!("Jacobian column {j} undefined"),
                    trace,
                });
            };
            for i in 0..N {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let rhs = -DVector::<f64>::from_column_slice(&fz);
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual_norm: current,
                reason: "singular Jacobian".into(),
                trace,
            });
        };

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = z;
            for i in 0..N {
                trial[i] += lambda * step[i];
            }
            if let Some(ft) = finite(f(&trial)) {
                let n = norm(&ft);
                if n < current {
                    accepted = Some((trial, ft, n));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((zn, fzn, n)) = accepted else {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual_norm: current,
                reason: "line search failed to reduce the residual".into(),
                trace,
            });
        };
        z = zn;
        fz = fzn;
        current = n;
        trace.push(current);
    }

    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual_norm: current,
        reason: "iteration limit reached".into(),
        trace,
    })
}
