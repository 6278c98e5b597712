//! Box-constrained quasi-Newton minimization (projected BFGS).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions {
    pub lower: f64,
    pub upper: f64,
    pub max_iters: usize,
    /// Stop once the projected gradient's max-abs entry is below this.
    pub gradient_tolerance: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions {
            lower: 0.0,
            upper: 1.0,
            max_iters: 50,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search failed before convergence; `x` is the best point seen.
    pub line_search_failed: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Minimize `f` over the box `[lower, upper]^d` starting from `start`.
/// `f` returns the value and writes the gradient into its second argument.
///
/// The result is never worse than the (clipped) start.
pub fn minimize_box<F>(mut f: F, start: &[f64], opts: &BoxOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = start.len();
    let clip = |v: f64| v.clamp(opts.lower, opts.upper);
    let mut x = DVector::from_iterator(d, start.iter().map(|v| clip(*v)));
    let mut g = DVector::zeros(d);
    let mut value = f(x.as_slice(), g.as_mut_slice());
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut trial = DVector::zeros(d);
    let mut g_trial = DVector::zeros(d);
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;

    while iterations < opts.max_iters {
        let projected = DVector::from_fn(d, |i, _| x[i] - clip(x[i] - g[i]));
        if projected.amax() < opts.gradient_tolerance {
            converged = true;
            break;
        }
        let mut accepted = false;
        for attempt in 0..2 {
            let mut p = -(&h * &g);
            for i in 0..d {
                let pinned = (x[i] <= opts.lower && g[i] > 0.0) || (x[i] >= opts.upper && g[i] < 0.0);
                if pinned {
                    p[i] = 0.0;
                }
            }
            if p.dot(&g) >= 0.0 || attempt == 1 {
                h.fill_with_identity();
                p = DVector::from_fn(d, |i, _| -projected[i]);
            }
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                for i in 0..d {
                    trial[i] = clip(x[i] + t * p[i]);
                }
                let step = &trial - &x;
                if step.amax() == 0.0 {
                    break;
                }
                let v = f(trial.as_slice(), g_trial.as_mut_slice());
                if v.is_finite() && v <= value + ARMIJO * g.dot(&step) {
                    let y = &g_trial - &g;
                    let sy = step.dot(&y);
                    if sy > 1e-12 {
                        let rho = 1.0 / sy;
                        let hy = &h * &y;
                        let yhy = y.dot(&hy);
                        h += (&step * step.transpose()) * (rho * (1.0 + rho * yhy))
                            - (&hy * step.transpose() + &step * hy.transpose()) * rho;
                    }
                    x.copy_from(&trial);
                    g.copy_from(&g_trial);
                    value = v;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        iterations += 1;
        if !accepted {
            line_search_failed = true;
            break;
        }
    }
    Minimum {
        x: x.as_slice().to_vec(),
        value,
        iterations,
        converged,
        line_search_failed,
    }
}
