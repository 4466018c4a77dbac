//! Damped Newton iteration with a forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::SolveError;

#[derive(Clone, Debug)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Forward-difference step for the Jacobian columns.
    pub fd_step: f64,
    /// Step halvings tried before giving up on an iteration.
    pub max_backtracks: usize,
    /// Worker threads for Jacobian columns; 1 evaluates them in order.
    pub threads: usize,
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn jacobian<F>(
    f: &F,
    x: &DVector<f64>,
    fx: &DVector<f64>,
    h: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<DMatrix<f64>, SolveError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, SolveError> + Sync,
{
    let column = |j: usize| -> Result<DVector<f64>, SolveError> {
        let mut xp = x.clone();
        xp[j] += h;
        Ok((f(&xp)? - fx) / h)
    };
    let cols: Vec<DVector<f64>> = match pool {
        Some(pool) => pool.install(|| (0..x.len()).into_par_iter().map(column).collect::<Result<_, _>>())?,
        None => (0..x.len()).map(column).collect::<Result<_, _>>()?,
    };
    Ok(DMatrix::from_columns(&cols))
}

/// Solves `f(x) = 0` from `x0`.
///
/// Each iteration takes the full Newton step if it lowers `‖f‖`, otherwise
/// halves it up to `max_backtracks` times. When no trial step lowers the
/// norm the iteration stops and the current (best) iterate is returned with
/// `converged = false`, as it is when `max_iter` runs out.
pub fn solve<F>(f: F, x0: DVector<f64>, opts: &NewtonOptions) -> Result<NewtonOutcome, SolveError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, SolveError> + Sync,
{
    let pool = if opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.threads)
                .build()
                .map_err(|e| SolveError::Config(format!("cannot start worker pool: {e}")))?,
        )
    } else {
        None
    };
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut norm = fx.norm();
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iter {
        let jac = jacobian(&f, &x, &fx, opts.fd_step, pool.as_ref())?;
        let step = jac
            .lu()
            .solve(&(-&fx))
            .filter(|dx| dx.iter().all(|v| v.is_finite()))
            .ok_or(SolveError::SingularJacobian { iteration: iterations })?;
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = &x + &step * t;
            if let Ok(ft) = f(&trial) {
                let nt = ft.norm();
                if nt < norm {
                    accepted = Some((trial, ft, nt));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, fxn, nn)) => {
                x = xn;
                fx = fxn;
                norm = nn;
            }
            None => break,
        }
    }
    Ok(NewtonOutcome { converged: norm <= opts.tol, x, residual: fx, residual_norm: norm, iterations })
}
