//! A small dense Levenberg–Marquardt solver.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the step is smaller than this relative to the parameters.
    pub xtol: f64,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 500, ftol: 1e-15, xtol: 1e-14, gtol: 1e-20, lambda0: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step.
    pub trace: Vec<f64>,
}

/// Minimizes `sum(r(x)^2)`. `residuals` returns `None` when `x` is outside the
/// model's domain; such trial steps are rejected. The Jacobian is taken by
/// central differences.
pub fn minimize<F>(residuals: F, x0: &[f64], opts: LmOptions) -> Option<LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x)?;
    let m = r.len();
    let mut cost = sumsq(&r);
    let mut lambda = opts.lambda0;
    let mut trace = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&residuals, &x, m)?;
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        if grad.amax() < opts.gtol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_r = match residuals(&trial) {
                Some(tr) if tr.iter().all(|v| v.is_finite()) => tr,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial_cost = sumsq(&trial_r);
            if trial_cost <= cost {
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small_step = step.norm() <= opts.xtol * (xnorm + opts.xtol);
                let small_gain = cost - trial_cost <= opts.ftol * cost;
                x = trial;
                r = trial_r;
                cost = trial_cost;
                trace.push(cost);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Some(LmResult { x, cost, iterations, converged, trace })
}

fn sumsq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(residuals: &F, x: &[f64], m: usize) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let rp = residuals(&xp)?;
        xp[j] = x[j] - h;
        let rm = residuals(&xp)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Some(jac)
}
