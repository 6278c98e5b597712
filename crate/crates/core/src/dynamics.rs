//! GP simulation of a stochastic FitzHugh–Nagumo neuron: ground truth,
//! Euler–Maruyama unrolling with decoupled sample paths, and the iterative
//! conditioning baseline that grows its inducing set one step at a time.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::features::FourierBasis;
use crate::kernel::Kernel;
use crate::linalg::{cholesky_jittered, psd_sqrt, symmetrize};
use crate::metrics::{sinkhorn_distance, SinkhornResult, TransportPlanConfig};
use crate::models::{optimal_inducing, Dataset, ExactGp, InducingModel};
use crate::pathwise::{DecoupledPath, SparseDecoupledSampler};
use crate::rng::{uniform_matrix, SeedRng};

/// FitzHugh–Nagumo recovery constants `(a, b, c)`.
pub const FHN_A: f64 = 0.7;
pub const FHN_B: f64 = 0.8;
pub const FHN_C: f64 = 12.5;

/// Number of state variables (voltage, recovery).
pub const STATE_DIM: usize = 2;
/// GP input: normalized state plus normalized control.
pub const INPUT_DIM: usize = 3;

/// `(dv, dw) = (v − v³/3 − w + I, (v + a − b w) / c)`.
pub fn fhn_drift(state: [f64; 2], current: f64) -> [f64; 2] {
    let [v, w] = state;
    [v - v * v * v / 3.0 - w + current, (v + FHN_A - FHN_B * w) / FHN_C]
}

/// Fixed point of the drift under constant current, by Newton's method on
/// the voltage nullcline intersection.
pub fn fhn_equilibrium(current: f64) -> [f64; 2] {
    // w = (v + a)/b on the recovery nullcline; solve g(v) = 0 for the voltage.
    let g = |v: f64| v - v * v * v / 3.0 - (v + FHN_A) / FHN_B + current;
    let dg = |v: f64| 1.0 - v * v - 1.0 / FHN_B;
    let mut v = -1.0;
    for _ in 0..100 {
        let step = g(v) / dg(v);
        v -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    [v, (v + FHN_A) / FHN_B]
}

/// Applied current as a function of the step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Constant(f64),
    /// `offset + amplitude · sin(2π t / period)`, period in steps.
    Sinusoid { offset: f64, amplitude: f64, period: f64 },
}

impl Control {
    pub fn value(&self, step: usize) -> f64 {
        match *self {
            Control::Constant(c) => c,
            Control::Sinusoid {
                offset,
                amplitude,
                period,
            } => offset + amplitude * (std::f64::consts::TAU * step as f64 / period).sin(),
        }
    }

    /// `0.5 + 0.5 sin(2π t / T)` with `T` half the horizon.
    pub fn default_sinusoid(horizon: usize) -> Self {
        Control::Sinusoid {
            offset: 0.5,
            amplitude: 0.5,
            period: (horizon as f64 / 2.0).max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub dt: f64,
    /// Diagonal of the diffusion matrix Σ.
    pub diffusion: [f64; 2],
    pub horizon: usize,
    pub control: Control,
}

impl SdeConfig {
    /// Step 0.25, Σ = 0.01 I and the default sinusoidal control.
    pub fn new(horizon: usize) -> Self {
        SdeConfig {
            dt: 0.25,
            diffusion: [0.01, 0.01],
            horizon,
            control: Control::default_sinusoid(horizon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.diffusion.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid SDE settings {self:?}")));
        }
        Ok(())
    }
}

/// `s + f Δt + √(Δt Σ) ε` with `ε ∼ N(0, I)`.
pub fn euler_step<R: Rng + ?Sized>(state: [f64; 2], drift: [f64; 2], cfg: &SdeConfig, rng: &mut R) -> [f64; 2] {
    let mut next = state;
    for i in 0..STATE_DIM {
        let eps: f64 = rng.sample(StandardNormal);
        next[i] += drift[i] * cfg.dt + (cfg.dt * cfg.diffusion[i]).sqrt() * eps;
    }
    next
}

/// Ensemble of trajectories, each holding states at steps `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    count: usize,
    horizon: usize,
    states: Vec<f64>,
}

impl Trajectories {
    fn from_rows(rows: Vec<Vec<f64>>, horizon: usize) -> Self {
        Trajectories {
            count: rows.len(),
            horizon,
            states: rows.concat(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self, trajectory: usize, step: usize) -> [f64; 2] {
        let o = (trajectory * (self.horizon + 1) + step) * STATE_DIM;
        [self.states[o], self.states[o + 1]]
    }

    /// `count × 2` matrix of states at `step`.
    pub fn cloud(&self, step: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.count, STATE_DIM, |i, j| self.state(i, step)[j])
    }

    /// Same ensemble translated by `offset`.
    pub fn shifted(&self, offset: [f64; 2]) -> Self {
        let mut out = self.clone();
        for (i, v) in out.states.iter_mut().enumerate() {
            *v += offset[i % STATE_DIM];
        }
        out
    }
}

/// Seeds for `count` parallel tasks, drawn sequentially from `rng` so results
/// do not depend on scheduling.
fn task_rngs<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<SeedRng> {
    (0..count).map(|_| SeedRng::seed_from_u64(rng.random())).collect()
}

/// Ground-truth ensemble under the true drift.
pub fn simulate_truth<R: Rng + ?Sized>(start: [f64; 2], cfg: &SdeConfig, count: usize, rng: &mut R) -> Result<Trajectories> {
    cfg.validate()?;
    let rows = task_rngs(count, rng)
        .into_par_iter()
        .map(|mut r| {
            let mut s = start;
            let mut row = Vec::with_capacity((cfg.horizon + 1) * STATE_DIM);
            row.extend_from_slice(&s);
            for t in 0..cfg.horizon {
                s = euler_step(s, fhn_drift(s, cfg.control.value(t)), cfg, &mut r);
                row.extend_from_slice(&s);
            }
            row
        })
        .collect();
    Ok(Trajectories::from_rows(rows, cfg.horizon))
}

/// Affine map from raw states to the unit square; controls are used as-is
/// (they already live in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Normalizer {
    /// Observed state range of `pilot`, padded by 10% on each side. Fails if
    /// the pilot run diverged.
    pub fn from_pilot(pilot: &Trajectories) -> Result<Self> {
        if pilot.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("ground-truth pilot run diverged (non-finite state)".into()));
        }
        let mut lower = [f64::INFINITY; 2];
        let mut upper = [f64::NEG_INFINITY; 2];
        for chunk in pilot.states.chunks(STATE_DIM) {
            for i in 0..STATE_DIM {
                lower[i] = lower[i].min(chunk[i]);
                upper[i] = upper[i].max(chunk[i]);
            }
        }
        for i in 0..STATE_DIM {
            let pad = 0.1 * (upper[i] - lower[i]).max(1e-6);
            lower[i] -= pad;
            upper[i] += pad;
        }
        Ok(Normalizer { lower, upper })
    }

    pub fn input(&self, state: [f64; 2], control: f64) -> [f64; 3] {
        [
            (state[0] - self.lower[0]) / (self.upper[0] - self.lower[0]),
            (state[1] - self.lower[1]) / (self.upper[1] - self.lower[1]),
            control,
        ]
    }

    pub fn state(&self, input: &[f64]) -> [f64; 2] {
        [
            self.lower[0] + input[0] * (self.upper[0] - self.lower[0]),
            self.lower[1] + input[1] * (self.upper[1] - self.lower[1]),
        ]
    }
}

/// One noisy Euler–Maruyama transition `f(s, I) Δt + √(Δt Σ) ε` at a
/// normalized input.
pub fn transition_target<R: Rng + ?Sized>(input: &[f64], normalizer: &Normalizer, cfg: &SdeConfig, rng: &mut R) -> [f64; 2] {
    let s = normalizer.state(input);
    let next = euler_step(s, fhn_drift(s, input[2]), cfg, rng);
    [next[0] - s[0], next[1] - s[1]]
}

/// `n` uniform inputs in the normalized cube with transition targets, one
/// dataset per state dimension. The recorded noise variance is the true
/// transition noise `Δt Σᵢᵢ`.
pub fn generate_training_data<R: Rng + ?Sized>(
    cfg: &SdeConfig,
    normalizer: &Normalizer,
    n: usize,
    rng: &mut R,
) -> Result<[Dataset; 2]> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one training point".into()));
    }
    let x = uniform_matrix(n, INPUT_DIM, rng);
    let mut y = [DVector::zeros(n), DVector::zeros(n)];
    for i in 0..n {
        let input = [x[(i, 0)], x[(i, 1)], x[(i, 2)]];
        let t = transition_target(&input, normalizer, cfg, rng);
        y[0][i] = t[0];
        y[1][i] = t[1];
    }
    let [y0, y1] = y;
    Ok([
        Dataset::new(x.clone(), y0, cfg.dt * cfg.diffusion[0])?,
        Dataset::new(x, y1, cfg.dt * cfg.diffusion[1])?,
    ])
}

/// Hyperparameter search and sparse-model settings for the drift GPs.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftFitOptions {
    pub inducing: usize,
    /// Points used by the marginal-likelihood grid search.
    pub grid_subsample: usize,
    /// Candidate lengthscales, searched independently per input dimension.
    pub lengthscales: Vec<f64>,
    /// Candidate noise variances, in transition units.
    pub noise_variances: Vec<f64>,
}

impl Default for DriftFitOptions {
    fn default() -> Self {
        DriftFitOptions {
            inducing: 32,
            grid_subsample: 512,
            lengthscales: vec![0.1, 0.2, 0.4, 0.8, 1.6, 3.2],
            noise_variances: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
        }
    }
}

/// Sparse GP over one drift component.
#[derive(Debug, Clone)]
pub struct DriftComponent {
    pub kernel: Kernel,
    /// Noise variance in drift units.
    pub noise_variance: f64,
    pub inducing: InducingModel,
    pub log_marginal_likelihood: f64,
}

/// Independent sparse GPs for each drift component, on normalized inputs,
/// sharing their inducing locations.
#[derive(Debug, Clone)]
pub struct DriftModel {
    pub normalizer: Normalizer,
    pub components: [DriftComponent; 2],
}

/// Fit the drift GPs to transition data. Targets are divided by `dt` so the
/// GP models the drift itself; the amplitude is the empirical variance of
/// the scaled targets and lengthscales/noise come from a grid search over
/// the exact log marginal likelihood on a random subsample.
pub fn fit_drift_model<R: Rng + ?Sized>(
    data: &[Dataset; 2],
    normalizer: Normalizer,
    dt: f64,
    opts: &DriftFitOptions,
    rng: &mut R,
) -> Result<DriftModel> {
    let n = data[0].len();
    check_dim(n, data[1].len())?;
    if n == 0 || opts.inducing == 0 || opts.lengthscales.is_empty() || opts.noise_variances.is_empty() {
        return Err(Error::InvalidArgument("drift fit needs data and a nonempty grid".into()));
    }
    let mut sub = sample_indices(rng, n, opts.grid_subsample.min(n)).into_vec();
    sub.sort_unstable();
    let mut zi = sample_indices(rng, n, opts.inducing.min(n)).into_vec();
    zi.sort_unstable();
    let z = data[0].x.select_rows(&zi);

    let fit_one = |d: &Dataset| -> Result<DriftComponent> {
        let drift = Dataset::new(d.x.clone(), &d.y / dt, d.noise_variance / (dt * dt))?;
        let mean = drift.y.mean();
        let amplitude = drift.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let amplitude = if amplitude > 0.0 { amplitude } else { 1.0 };
        let subset = drift.subset(&sub);
        let grid = &opts.lengthscales;
        let mut candidates = Vec::new();
        for a in grid {
            for b in grid {
                for c in grid {
                    for noise in &opts.noise_variances {
                        candidates.push((vec![*a, *b, *c], noise / (dt * dt)));
                    }
                }
            }
        }
        let scores = candidates
            .par_iter()
            .map(|(ls, noise)| {
                let kernel = Kernel::matern52(amplitude, ls.clone())?;
                let candidate = Dataset { noise_variance: *noise, ..subset.clone() };
                Ok(ExactGp::fit(&kernel, &candidate)?.log_marginal_likelihood())
            })
            .collect::<Result<Vec<f64>>>()?;
        // First maximum in grid order, so the choice does not depend on the pool.
        let best = (0..candidates.len())
            .fold(None, |best: Option<usize>, i| match best {
                Some(j) if scores[j] >= scores[i] => Some(j),
                _ => Some(i),
            })
            .map(|i| (scores[i], candidates[i].0.clone(), candidates[i].1));
        let (lml, lengthscales, noise) = best.expect("grid is nonempty");
        let kernel = Kernel::matern52(amplitude, lengthscales)?;
        let full = Dataset { noise_variance: noise, ..drift };
        Ok(DriftComponent {
            inducing: optimal_inducing(&kernel, &full, &z)?,
            kernel,
            noise_variance: noise,
            log_marginal_likelihood: lml,
        })
    };
    Ok(DriftModel {
        normalizer,
        components: [fit_one(&data[0])?, fit_one(&data[1])?],
    })
}

/// Rollouts with one decoupled path per drift component per trajectory; the
/// same function draw is reused for every step of a trajectory.
pub fn rollout_decoupled<R: Rng + ?Sized>(
    model: &DriftModel,
    start: [f64; 2],
    cfg: &SdeConfig,
    count: usize,
    basis_count: usize,
    rng: &mut R,
) -> Result<Trajectories> {
    cfg.validate()?;
    let rows = task_rngs(count, rng)
        .into_par_iter()
        .map(|mut r| {
            let paths = draw_drift_paths(model, basis_count, &mut r)?;
            Ok(unroll(start, cfg, &mut r, |input| {
                [paths[0].eval_point_unchecked(input), paths[1].eval_point_unchecked(input)]
            }, &model.normalizer))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectories::from_rows(rows, cfg.horizon))
}

/// One decoupled posterior draw per drift component, each with a fresh basis.
pub fn draw_drift_paths<R: Rng + ?Sized>(model: &DriftModel, basis_count: usize, rng: &mut R) -> Result<[DecoupledPath; 2]> {
    let mut draw = |c: &DriftComponent| -> Result<DecoupledPath> {
        let basis = Arc::new(FourierBasis::build(&c.kernel, basis_count, rng)?);
        SparseDecoupledSampler::new(&c.inducing, basis)?.draw(rng)
    };
    Ok([draw(&model.components[0])?, draw(&model.components[1])?])
}

fn unroll<R: Rng + ?Sized>(
    start: [f64; 2],
    cfg: &SdeConfig,
    rng: &mut R,
    mut drift: impl FnMut(&[f64]) -> [f64; 2],
    normalizer: &Normalizer,
) -> Vec<f64> {
    let mut s = start;
    let mut row = Vec::with_capacity((cfg.horizon + 1) * STATE_DIM);
    row.extend_from_slice(&s);
    for t in 0..cfg.horizon {
        let input = normalizer.input(s, cfg.control.value(t));
        s = euler_step(s, drift(&input), cfg, rng);
        row.extend_from_slice(&s);
    }
    row
}

/// Rollouts from the iterative baseline, plus the number of steps whose
/// rank-1 downdate failed and fell back to refactorization.
pub fn rollout_iterative<R: Rng + ?Sized>(
    model: &DriftModel,
    start: [f64; 2],
    cfg: &SdeConfig,
    count: usize,
    rng: &mut R,
) -> Result<(Trajectories, usize)> {
    cfg.validate()?;
    let results = task_rngs(count, rng)
        .into_par_iter()
        .map(|mut r| {
            let mut samplers = [
                IterativeSampler::new(&model.components[0].inducing, cfg.horizon)?,
                IterativeSampler::new(&model.components[1].inducing, cfg.horizon)?,
            ];
            let mut noise_rng = SeedRng::seed_from_u64(r.random());
            let mut failure = None;
            let row = {
                let mut drift = |input: &[f64]| {
                    let mut out = [0.0; 2];
                    for (o, s) in out.iter_mut().zip(samplers.iter_mut()) {
                        match s.step(input, &mut r) {
                            Ok(v) => *o = v,
                            Err(e) => {
                                failure.get_or_insert(e);
                            }
                        }
                    }
                    out
                };
                // Drift draws and evolution noise use separate generators so
                // the samplers can borrow `r` inside the closure.
                unroll(start, cfg, &mut noise_rng, &mut drift, &model.normalizer)
            };
            if let Some(e) = failure {
                return Err(e);
            }
            Ok((row, samplers[0].fallbacks + samplers[1].fallbacks))
        })
        .collect::<Result<Vec<_>>>()?;
    let fallbacks = results.iter().map(|r| r.1).sum();
    let rows = results.into_iter().map(|r| r.0).collect();
    Ok((Trajectories::from_rows(rows, cfg.horizon), fallbacks))
}

/// Sequential sampler for `f(x₁), f(x₂), …` under a sparse posterior, where
/// each sampled value is appended to the inducing set as an exactly observed
/// inducing value.
///
/// The prior Cholesky over the augmented inducing set is kept in packed
/// row-major form and grown by one row per step; only the leading `m × m`
/// block of the inducing covariance is nonzero and its factor is updated by
/// a rank-1 downdate.
#[derive(Debug, Clone)]
pub struct IterativeSampler {
    kernel: Kernel,
    m: usize,
    size: usize,
    points: Vec<f64>,
    prior: Vec<f64>,
    mean: Vec<f64>,
    scale: DMatrix<f64>,
    jitter: f64,
    fallbacks: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl IterativeSampler {
    /// `capacity` is the expected number of steps (storage is reserved).
    pub fn new(model: &InducingModel, capacity: usize) -> Result<Self> {
        let m = model.len();
        let d = model.kernel.dim();
        let kmm = model.kernel.gram(&model.z, &model.z)?;
        let chol = cholesky_jittered(&kmm)?;
        let total = m + capacity;
        let mut prior = Vec::with_capacity(total * (total + 1) / 2);
        for i in 0..m {
            for j in 0..=i {
                prior.push(chol.factor()[(i, j)]);
            }
        }
        let mut points = Vec::with_capacity(total * d);
        for i in 0..m {
            for j in 0..d {
                points.push(model.z[(i, j)]);
            }
        }
        let scale = if model.cov_u.iter().all(|v| *v == 0.0) {
            DMatrix::zeros(m, m)
        } else {
            cholesky_jittered(&model.cov_u)?.into_factor()
        };
        let mut mean = Vec::with_capacity(total);
        mean.extend(model.mean_u.iter());
        Ok(IterativeSampler {
            jitter: (1e-6 * model.kernel.amplitude()).max(chol.jitter_used()),
            kernel: model.kernel.clone(),
            m,
            size: m,
            points,
            prior,
            mean,
            scale,
            fallbacks: 0,
            a: Vec::with_capacity(total),
            b: Vec::with_capacity(total),
        })
    }

    /// Current number of inducing locations (m + steps taken).
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Factor of the leading `m × m` inducing covariance block.
    pub fn inducing_scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn inducing_mean(&self) -> &[f64] {
        &self.mean
    }

    /// Predictive mean and variance of `f(x)` given the current state.
    pub fn predict(&mut self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.kernel.dim(), x.len())?;
        let (mean, var, _) = self.predict_inner(x);
        Ok((mean, var))
    }

    /// Returns mean, variance and `aᵀa` (prior variance explained), leaving
    /// `L⁻¹k` in `self.a` and `K⁻¹k` in `self.b`.
    fn predict_inner(&mut self, x: &[f64]) -> (f64, f64, f64) {
        let d = self.kernel.dim();
        let n = self.size;
        self.a.clear();
        for i in 0..n {
            self.a.push(self.kernel.eval_unchecked(&self.points[i * d..(i + 1) * d], x));
        }
        // Forward solve L a = k, row by row.
        let mut explained = 0.0;
        for i in 0..n {
            let row = &self.prior[i * (i + 1) / 2..(i + 1) * (i + 2) / 2];
            let mut acc = self.a[i];
            for j in 0..i {
                acc -= row[j] * self.a[j];
            }
            let v = acc / row[i];
            self.a[i] = v;
            explained += v * v;
        }
        // Back solve Lᵀ b = a, column-oriented so rows are read contiguously.
        self.b.clear();
        self.b.extend_from_slice(&self.a);
        for i in (0..n).rev() {
            let row = &self.prior[i * (i + 1) / 2..(i + 1) * (i + 2) / 2];
            let bi = self.b[i] / row[i];
            self.b[i] = bi;
            for j in 0..i {
                self.b[j] -= row[j] * bi;
            }
        }
        let mean: f64 = self.b.iter().zip(&self.mean).map(|(b, m)| b * m).sum();
        let mut spread = 0.0;
        for j in 0..self.m {
            let mut acc = 0.0;
            for i in j..self.m {
                acc += self.scale[(i, j)] * self.b[i];
            }
            spread += acc * acc;
        }
        let prior_var = self.kernel.amplitude();
        ((mean), (prior_var - explained).max(0.0) + spread, explained)
    }

    /// Sample `f(x)` given everything drawn so far and condition on it.
    pub fn step<R: Rng + ?Sized>(&mut self, x: &[f64], rng: &mut R) -> Result<f64> {
        check_dim(self.kernel.dim(), x.len())?;
        let (mean, var, explained) = self.predict_inner(x);
        let value = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        self.condition(x, value, mean, var, explained)?;
        Ok(value)
    }

    fn condition(&mut self, x: &[f64], value: f64, mean: f64, var: f64, explained: f64) -> Result<()> {
        let m = self.m;
        if var > 0.0 && m > 0 {
            // Σ b restricted to the leading block: S (Sᵀ b).
            let b_m = DVector::from_column_slice(&self.b[..m]);
            let sb = self.scale.tr_mul(&b_m);
            let cov_b = &self.scale * sb;
            let gain = (value - mean) / var;
            for i in 0..m {
                self.mean[i] += cov_b[i] * gain;
            }
            let mut v: Vec<f64> = cov_b.iter().map(|c| c / var.sqrt()).collect();
            let before = self.scale.clone();
            if rank1_downdate_in_place(&mut self.scale, &mut v).is_err() {
                self.fallbacks += 1;
                let v = &cov_b / var.sqrt();
                let target = symmetrize(&(&before * before.transpose() - &v * v.transpose()));
                self.scale = match cholesky_jittered(&target) {
                    Ok(c) => c.into_factor(),
                    Err(_) => psd_sqrt(&target),
                };
            }
        }
        let prior_var = self.kernel.amplitude();
        let diag = (prior_var + self.jitter - explained).max(self.jitter).sqrt();
        self.prior.extend_from_slice(&self.a);
        self.prior.push(diag);
        self.points.extend_from_slice(x);
        self.mean.push(value);
        self.size += 1;
        Ok(())
    }

    /// Prior Cholesky factor over the current inducing set, unpacked.
    pub fn prior_factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| {
            if j <= i {
                self.prior[i * (i + 1) / 2 + j]
            } else {
                0.0
            }
        })
    }
}

/// Lower-triangular `M` with `M Mᵀ = L Lᵀ − v vᵀ`, via hyperbolic rotations.
pub fn rank1_downdate(factor: &DMatrix<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim(factor.nrows(), factor.ncols())?;
    check_dim(factor.nrows(), v.len())?;
    let mut out = factor.clone();
    let mut work: Vec<f64> = v.iter().copied().collect();
    rank1_downdate_in_place(&mut out, &mut work)?;
    Ok(out)
}

fn rank1_downdate_in_place(l: &mut DMatrix<f64>, v: &mut [f64]) -> Result<()> {
    let n = l.nrows();
    let scale = l.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    for k in 0..n {
        let lkk = l[(k, k)];
        let vk = v[k];
        let r2 = lkk * lkk - vk * vk;
        if r2 < -1e-10 * scale * scale {
            return Err(Error::DowndateNotPsd { index: k, residual: r2 });
        }
        let r = r2.max(0.0).sqrt();
        if r <= tol {
            // Degenerate rotation: column k is fully removed, which is only
            // consistent if the rest of v is parallel to it.
            let s = if lkk != 0.0 { vk / lkk } else { 0.0 };
            for i in k + 1..n {
                let rest = v[i] - s * l[(i, k)];
                if rest.abs() > 1e-8 * scale {
                    return Err(Error::DowndateNotPsd { index: k, residual: rest });
                }
                v[i] = rest;
                l[(i, k)] = 0.0;
            }
            l[(k, k)] = 0.0;
            continue;
        }
        let c = r / lkk;
        let s = vk / lkk;
        l[(k, k)] = r;
        for i in k + 1..n {
            let lik = (l[(i, k)] - s * v[i]) / c;
            v[i] = c * v[i] - s * lik;
            l[(i, k)] = lik;
        }
    }
    Ok(())
}

/// Per-step distances between two ensembles, with the noise floor measured
/// between two independent ground-truth ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutComparison {
    pub steps: Vec<usize>,
    pub distance: Vec<f64>,
    pub noise_floor: Vec<f64>,
    /// Whether every Sinkhorn solve met its tolerance.
    pub converged: bool,
}

/// Steps `0, stride, 2·stride, …` plus the final step.
pub fn comparison_steps(horizon: usize, stride: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=horizon).step_by(stride.max(1)).collect();
    if steps.last() != Some(&horizon) {
        steps.push(horizon);
    }
    steps
}

/// Sinkhorn distance between the state clouds of `a` and `b` at each step.
pub fn distance_series(
    a: &Trajectories,
    b: &Trajectories,
    steps: &[usize],
    cfg: &TransportPlanConfig,
) -> Result<Vec<SinkhornResult>> {
    check_dim(a.horizon(), b.horizon())?;
    if let Some(&t) = steps.iter().find(|t| **t > a.horizon()) {
        return Err(Error::InvalidArgument(format!("step {t} beyond horizon {}", a.horizon())));
    }
    steps
        .par_iter()
        .map(|t| sinkhorn_distance(&a.cloud(*t), &b.cloud(*t), cfg))
        .collect()
}

/// Sinkhorn distance between `truth` and `candidate` state clouds at every
/// `stride`-th step (and the final one), alongside `truth` vs `reference`.
pub fn compare_rollouts(
    truth: &Trajectories,
    reference: &Trajectories,
    candidate: &Trajectories,
    cfg: &TransportPlanConfig,
    stride: usize,
) -> Result<RolloutComparison> {
    check_dim(truth.horizon(), reference.horizon())?;
    let steps = comparison_steps(truth.horizon(), stride);
    let distance = distance_series(truth, candidate, &steps, cfg)?;
    let floor = distance_series(truth, reference, &steps, cfg)?;
    Ok(RolloutComparison {
        converged: distance.iter().chain(&floor).all(|r| r.converged),
        distance: distance.iter().map(|r| r.distance).collect(),
        noise_floor: floor.iter().map(|r| r.distance).collect(),
        steps,
    })
}
