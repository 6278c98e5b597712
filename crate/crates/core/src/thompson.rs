//! Parallel Thompson sampling on the unit box: function-space (mesh plus
//! joint draw on an active set), weight-space and decoupled pathwise samplers
//! with multi-start gradient refinement, and a random-search baseline.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FourierBasis;
use crate::kernel::{row_vec, Kernel};
use crate::linalg::cholesky_jittered;
use crate::models::{optimal_inducing, Dataset, ExactGp, GaussianMoments, SparseGp};
use crate::optimize::{minimize_box, BoxOptions};
use crate::pathwise::{DecoupledPath, ExactDecoupledSampler, SparseDecoupledSampler, WeightPathwiseSampler};
use crate::rng::{standard_normal_matrix, uniform_matrix, SeedRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TsSampler {
    FunctionSpace,
    WeightSpace,
    Decoupled,
    RandomSearch,
}

impl TsSampler {
    pub const ALL: [TsSampler; 4] = [
        TsSampler::FunctionSpace,
        TsSampler::WeightSpace,
        TsSampler::Decoupled,
        TsSampler::RandomSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TsSampler::FunctionSpace => "function_space",
            TsSampler::WeightSpace => "weight_space",
            TsSampler::Decoupled => "decoupled",
            TsSampler::RandomSearch => "random_search",
        }
    }
}

impl fmt::Display for TsSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TsSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TsSampler::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsConfig {
    pub dim: usize,
    /// Points selected per iteration (κ).
    pub batch_size: usize,
    /// Random candidates per iteration.
    pub mesh_size: usize,
    /// Active-set size for the function-space sampler.
    pub top_s: usize,
    /// Gradient starts for the pathwise samplers.
    pub starts: usize,
    /// Total number of objective evaluations.
    pub budget: usize,
    pub sampler: TsSampler,
    /// Initial random features ℓ. The weight-space sampler additionally gets
    /// one feature per observation so that both pathwise samplers use the
    /// same total number of basis functions.
    pub basis_count: usize,
    pub noise_variance: f64,
    /// Largest training set handled by the exact GP.
    pub exact_limit: usize,
    /// Inducing points used once the exact limit is exceeded.
    pub max_inducing: usize,
}

impl TsConfig {
    /// Mesh and active-set sizes used for the published runs.
    pub fn paper(dim: usize, sampler: TsSampler) -> Self {
        let mesh_size = match sampler {
            TsSampler::FunctionSpace => 1_000_000,
            _ => 250_000,
        };
        TsConfig {
            dim,
            batch_size: dim,
            mesh_size,
            top_s: 2048,
            starts: 32,
            budget: 1024,
            sampler,
            basis_count: 1024,
            noise_variance: 1e-3,
            exact_limit: 1024,
            max_inducing: 512,
        }
    }

    /// Sizes that run in seconds to minutes on a laptop.
    pub fn desk(dim: usize, sampler: TsSampler) -> Self {
        TsConfig {
            mesh_size: 4096,
            top_s: 256,
            starts: 8,
            budget: 256,
            basis_count: 256,
            ..Self::paper(dim, sampler)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.dim == 0 {
            return bad("dimension must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.mesh_size == 0 || self.top_s == 0 || self.top_s > self.mesh_size {
            return bad("need 1 ≤ top_s ≤ mesh_size");
        }
        if self.starts == 0 || self.starts > self.mesh_size {
            return bad("need 1 ≤ starts ≤ mesh_size");
        }
        if self.basis_count == 0 {
            return bad("basis count must be positive");
        }
        if !(self.noise_variance > 0.0) {
            return bad("noise variance must be positive");
        }
        if self.max_inducing == 0 {
            return bad("max_inducing must be positive");
        }
        Ok(())
    }
}

/// One Thompson-sampling iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TsRecord {
    pub iteration: usize,
    /// Selected points, one per row.
    pub points: DMatrix<f64>,
    /// Noisy observations returned to the model.
    pub observations: Vec<f64>,
    /// Noise-free objective values at the selected points.
    pub values: Vec<f64>,
    /// Smallest noise-free value evaluated so far.
    pub incumbent: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TsTrace {
    pub records: Vec<TsRecord>,
}

impl TsTrace {
    pub fn evaluations(&self) -> usize {
        self.records.iter().map(|r| r.values.len()).sum()
    }

    pub fn final_incumbent(&self) -> Option<f64> {
        self.records.last().map(|r| r.incumbent)
    }
}

/// Posterior used inside the TS loop: exact up to `exact_limit`
/// observations, sparse beyond.
#[derive(Debug, Clone)]
pub enum Posterior {
    Exact(ExactGp),
    Sparse(SparseGp),
}

const MARGINAL_CHUNK: usize = 4096;

impl Posterior {
    pub fn fit<R: Rng + ?Sized>(kernel: &Kernel, data: &Dataset, cfg: &TsConfig, rng: &mut R) -> Result<Self> {
        if data.len() <= cfg.exact_limit {
            return Ok(Posterior::Exact(ExactGp::fit(kernel, data)?));
        }
        let m = data.len().min(cfg.max_inducing);
        let mut rows = sample_indices(rng, data.len(), m).into_vec();
        rows.sort_unstable();
        let z = data.x.select_rows(&rows);
        Ok(Posterior::Sparse(SparseGp::new(optimal_inducing(kernel, data, &z)?)?))
    }

    pub fn marginals(&self, points: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = points.nrows();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        let mut start = 0;
        while start < n {
            let len = MARGINAL_CHUNK.min(n - start);
            let chunk = points.rows(start, len).into_owned();
            let (m, v) = match self {
                Posterior::Exact(gp) => gp.marginals(&chunk)?,
                Posterior::Sparse(gp) => gp.marginals(&chunk)?,
            };
            mean.rows_mut(start, len).copy_from(&m);
            var.rows_mut(start, len).copy_from(&v);
            start += len;
        }
        Ok((mean, var))
    }

    pub fn moments(&self, points: &DMatrix<f64>) -> Result<GaussianMoments> {
        match self {
            Posterior::Exact(gp) => gp.moments(points),
            Posterior::Sparse(gp) => gp.moments(points),
        }
    }
}

fn element_rngs<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<SeedRng> {
    (0..count).map(|_| SeedRng::seed_from_u64(rng.random())).collect()
}

/// Indices of the `count` smallest entries, ties broken by index.
fn smallest(values: &DVector<f64>, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| values[*a].total_cmp(&values[*b]).then(a.cmp(b));
    if count < idx.len() {
        idx.select_nth_unstable_by(count, cmp);
        idx.truncate(count);
    }
    idx.sort_by(cmp);
    idx
}

/// One function-space TS batch: a shared mesh, then per element a marginal
/// draw, an active set of its `top_s` smallest values, a joint draw on the
/// active set and its argmin.
pub fn ts_step_function_space<R: Rng + ?Sized>(
    kernel: &Kernel,
    data: &Dataset,
    cfg: &TsConfig,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let posterior = Posterior::fit(kernel, data, cfg, rng)?;
    step_function_space(&posterior, cfg, cfg.batch_size, rng)
}

fn step_function_space<R: Rng + ?Sized>(posterior: &Posterior, cfg: &TsConfig, batch: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let mesh = uniform_matrix(cfg.mesh_size, cfg.dim, rng);
    let (mean, var) = posterior.marginals(&mesh)?;
    let sd = var.map(f64::sqrt);
    let rngs = element_rngs(batch, rng);
    let picks = rngs
        .into_par_iter()
        .map(|mut r| {
            let draw = DVector::from_fn(mesh.nrows(), |i, _| mean[i] + sd[i] * r.sample::<f64, _>(StandardNormal));
            let active = smallest(&draw, cfg.top_s);
            let joint = posterior.moments(&mesh.select_rows(&active))?;
            let chol = cholesky_jittered(&joint.cov)?;
            let f = &joint.mean + chol.factor() * standard_normal_matrix(active.len(), 1, &mut r).column(0);
            Ok(active[f.imin()])
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(mesh.select_rows(&picks))
}

/// Produces independent posterior function draws.
pub type PathFactory<'a> = dyn Fn(&mut SeedRng) -> Result<DecoupledPath> + Sync + 'a;

/// One pathwise TS batch: per element draw a path, evaluate it on a shared
/// mesh, refine the `starts` best mesh points with bounded quasi-Newton and
/// keep the best refined point.
pub fn ts_step_pathwise<R: Rng + ?Sized>(factory: &PathFactory<'_>, cfg: &TsConfig, rng: &mut R) -> Result<DMatrix<f64>> {
    pathwise_batch(factory, cfg, cfg.batch_size, rng)
}

fn pathwise_batch<R: Rng + ?Sized>(factory: &PathFactory<'_>, cfg: &TsConfig, batch: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let mesh = uniform_matrix(cfg.mesh_size, cfg.dim, rng);
    let rngs = element_rngs(batch, rng);
    let picks = rngs
        .into_par_iter()
        .map(|mut r| {
            let path = factory(&mut r)?;
            Ok(minimize_path(&path, &mesh, cfg.starts).0)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(DMatrix::from_fn(batch, cfg.dim, |i, j| picks[i][j]))
}

/// Multi-start minimization of a path from its `starts` best mesh points.
/// Returns the minimizer (inside the unit box) and its value.
pub fn minimize_path(path: &DecoupledPath, mesh: &DMatrix<f64>, starts: usize) -> (Vec<f64>, f64) {
    minimize_path_with(path, mesh, starts, &BoxOptions::default())
}

fn minimize_path_with(path: &DecoupledPath, mesh: &DMatrix<f64>, starts: usize, opts: &BoxOptions) -> (Vec<f64>, f64) {
    let values = path.eval(mesh).expect("mesh dimension matches path");
    let mut best = (Vec::new(), f64::INFINITY);
    for i in smallest(&values, starts.min(mesh.nrows())) {
        let start = row_vec(mesh, i);
        let m = minimize_box(|x, g| path.value_and_gradient_unchecked(x, g), &start, opts);
        let (x, v) = if m.value <= values[i] { (m.x, m.value) } else { (start, values[i]) };
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Builds the path factory for `cfg.sampler` given the current data.
fn path_factory<'a>(kernel: &'a Kernel, data: &'a Dataset, posterior: &'a Posterior, cfg: &'a TsConfig) -> Box<PathFactory<'a>> {
    match cfg.sampler {
        TsSampler::WeightSpace => Box::new(move |rng: &mut SeedRng| {
            let basis = FourierBasis::build(kernel, cfg.basis_count + data.len(), rng)?;
            let w = WeightPathwiseSampler::new(&basis, data)?.draw(1, rng).column(0).into_owned();
            DecoupledPath::new(
                kernel.clone(),
                Arc::new(basis),
                w,
                DMatrix::zeros(0, kernel.dim()),
                DVector::zeros(0),
            )
        }),
        _ => match posterior {
            Posterior::Exact(_) => Box::new(move |rng: &mut SeedRng| {
                let basis = Arc::new(FourierBasis::build(kernel, cfg.basis_count, rng)?);
                ExactDecoupledSampler::new(kernel, data, basis)?.draw(rng)
            }),
            Posterior::Sparse(gp) => Box::new(move |rng: &mut SeedRng| {
                let basis = Arc::new(FourierBasis::build(kernel, cfg.basis_count, rng)?);
                SparseDecoupledSampler::new(gp.model(), basis)?.draw(rng)
            }),
        },
    }
}

/// Thompson-sampling loop minimizing `objective` on the unit box. Each
/// iteration refits the model, selects a batch, observes it with Gaussian
/// noise of variance `cfg.noise_variance`, and hands the record to
/// `on_record` before continuing.
pub fn run_ts<R, F>(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    kernel: &Kernel,
    cfg: &TsConfig,
    rng: &mut R,
    mut on_record: F,
) -> Result<TsTrace>
where
    R: Rng + ?Sized,
    F: FnMut(&TsRecord),
{
    cfg.validate()?;
    if kernel.dim() != cfg.dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim,
            actual: kernel.dim(),
        });
    }
    let mut data = Dataset::empty(cfg.dim, cfg.noise_variance);
    let mut trace = TsTrace::default();
    let mut incumbent = f64::INFINITY;
    let mut iteration = 0;
    while data.len() < cfg.budget {
        let batch = cfg.batch_size.min(cfg.budget - data.len());
        let clock = Instant::now();
        let points = match cfg.sampler {
            TsSampler::RandomSearch => uniform_matrix(batch, cfg.dim, rng),
            TsSampler::FunctionSpace => {
                let posterior = Posterior::fit(kernel, &data, cfg, rng)?;
                step_function_space(&posterior, cfg, batch, rng)?
            }
            TsSampler::WeightSpace | TsSampler::Decoupled => {
                let posterior = Posterior::fit(kernel, &data, cfg, rng)?;
                let factory = path_factory(kernel, &data, &posterior, cfg);
                pathwise_batch(factory.as_ref(), cfg, batch, rng)?
            }
        };
        let seconds = clock.elapsed().as_secs_f64();
        let mut values = Vec::with_capacity(batch);
        let mut observations = Vec::with_capacity(batch);
        for i in 0..batch {
            let x = row_vec(&points, i);
            let f = objective(&x);
            let y = f + cfg.noise_variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
            data.push(&x, y)?;
            incumbent = incumbent.min(f);
            values.push(f);
            observations.push(y);
        }
        let record = TsRecord {
            iteration,
            points,
            observations,
            values,
            incumbent,
            seconds,
        };
        on_record(&record);
        trace.records.push(record);
        iteration += 1;
    }
    Ok(trace)
}

/// Search effort spent locating a test function's global minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    pub features: usize,
    pub starts: usize,
    pub mesh_size: usize,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            features: 1 << 14,
            starts: 512,
            mesh_size: 1 << 15,
        }
    }
}

/// A prior function draw together with an estimate of its global minimum.
#[derive(Debug, Clone)]
pub struct TestObjective {
    pub path: DecoupledPath,
    pub minimum: f64,
    pub argmin: Vec<f64>,
}

impl TestObjective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.path.eval_point_unchecked(x)
    }

    /// Re-estimate the minimum with a different number of starts.
    pub fn estimate_minimum<R: Rng + ?Sized>(&self, starts: usize, mesh_size: usize, rng: &mut R) -> (Vec<f64>, f64) {
        estimate_minimum(&self.path, starts, mesh_size, rng)
    }
}

fn estimate_minimum<R: Rng + ?Sized>(path: &DecoupledPath, starts: usize, mesh_size: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let mesh = uniform_matrix(mesh_size.max(starts), path.dim(), rng);
    let values = path.eval(&mesh).expect("mesh dimension matches path");
    let opts = BoxOptions {
        max_iters: 200,
        gradient_tolerance: 1e-9,
        ..BoxOptions::default()
    };
    smallest(&values, starts)
        .into_par_iter()
        .map(|i| {
            let start = row_vec(&mesh, i);
            let m = minimize_box(|x, g| path.value_and_gradient_unchecked(x, g), &start, &opts);
            if m.value <= values[i] {
                (m.x, m.value)
            } else {
                (start, values[i])
            }
        })
        // Ties broken by position so the result does not depend on how the
        // reduction was split.
        .reduce(
            || (Vec::new(), f64::INFINITY),
            |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        )
}

/// Draw a test function from the prior (as a weight-space path with many
/// features) and estimate its global minimum by multi-start descent.
pub fn sample_test_objective<R: Rng + ?Sized>(kernel: &Kernel, opts: &ObjectiveOptions, rng: &mut R) -> Result<TestObjective> {
    let basis = FourierBasis::build(kernel, opts.features, rng)?;
    let w = basis.draw_prior_function(rng).0;
    let path = DecoupledPath::new(
        kernel.clone(),
        Arc::new(basis),
        w,
        DMatrix::zeros(0, kernel.dim()),
        DVector::zeros(0),
    )?;
    let (argmin, minimum) = estimate_minimum(&path, opts.starts, opts.mesh_size, rng);
    Ok(TestObjective { path, minimum, argmin })
}
