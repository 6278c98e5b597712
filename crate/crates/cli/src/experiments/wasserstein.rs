//! Sample quality: 2-Wasserstein distance between the empirical moments of
//! each sampler's draws and the exact posterior, as the training set grows.

use std::path::Path;
use std::sync::Arc;

use gp_pathwise::linalg::cholesky_jittered;
use gp_pathwise::metrics::{w2_gaussian, MomentAccumulator};
use gp_pathwise::models::{exact_posterior, location_scale_sample, optimal_inducing, sparse_posterior};
use gp_pathwise::pathwise::{ExactDecoupledSampler, SparseDecoupledSampler, WeightPathwiseSampler};
use gp_pathwise::rng::{child_rng, standard_normal_matrix, stream_rng, uniform_matrix, SeedRng};
use gp_pathwise::{Dataset, FourierBasis, GaussianMoments, Kernel};
use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;

use super::{run_ordered, timed};
use crate::config::ExperimentConfig;
use crate::output::{num, TableWriter};
use crate::CliError;

/// Observation noise variance for the synthetic training sets.
pub const NOISE_VARIANCE: f64 = 1e-3;
const CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinRow {
    pub replicate: usize,
    pub dim: usize,
    pub n: usize,
    pub inducing: usize,
    pub sampler: String,
    pub w2: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
struct Task {
    index: usize,
    dim: usize,
    n: usize,
    replicate: usize,
}

/// Fixed hyperparameters: unit amplitude, lengthscale `√(d/100)`.
pub fn study_kernel(dim: usize) -> Kernel {
    Kernel::isotropic(1.0, (dim as f64 / 100.0).sqrt(), dim).expect("valid kernel")
}

pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<WassersteinRow>, CliError> {
    let mut tasks = Vec::new();
    for &dim in &cfg.dims {
        for &n in &cfg.train_sizes {
            for replicate in 0..cfg.replicates {
                tasks.push(Task {
                    index: tasks.len(),
                    dim,
                    n,
                    replicate,
                });
            }
        }
    }
    let hash = cfg.hash();
    let mut tables = match out {
        Some(dir) => Some((
            TableWriter::create(
                dir,
                "wasserstein",
                &["replicate", "dim", "n", "inducing", "basis", "sampler", "draws", "w2"],
                &hash,
                cfg.json,
            )?,
            cfg.timing
                .then(|| {
                    TableWriter::create(
                        dir,
                        "wasserstein_timing",
                        &["replicate", "dim", "n", "sampler", "seconds"],
                        &hash,
                        cfg.json,
                    )
                })
                .transpose()?,
        )),
        None => None,
    };
    let mut rows = Vec::new();
    run_ordered(
        tasks,
        |t| run_task(cfg, t),
        |_, result| {
            if let Some((main, timing)) = tables.as_mut() {
                for r in &result {
                    main.write_row(&[
                        r.replicate.to_string(),
                        r.dim.to_string(),
                        r.n.to_string(),
                        r.inducing.to_string(),
                        cfg.basis.to_string(),
                        r.sampler.clone(),
                        cfg.draws.to_string(),
                        num(r.w2),
                    ])?;
                    if let Some(timing) = timing.as_mut() {
                        timing.write_row(&[
                            r.replicate.to_string(),
                            r.dim.to_string(),
                            r.n.to_string(),
                            r.sampler.clone(),
                            num(r.seconds),
                        ])?;
                    }
                }
                main.flush()?;
                if let Some(timing) = timing.as_mut() {
                    timing.flush()?;
                }
            }
            rows.extend(result);
            Ok(())
        },
    )?;
    if let Some((main, timing)) = tables {
        main.finish()?;
        if let Some(t) = timing {
            t.finish()?;
        }
    }
    Ok(rows)
}

fn run_task(cfg: &ExperimentConfig, task: &Task) -> Result<Vec<WassersteinRow>, CliError> {
    let mut rng = stream_rng(cfg.seed, task.index as u64);
    let kernel = study_kernel(task.dim);
    let x = uniform_matrix(task.n, task.dim, &mut rng);
    let mut prior = GaussianMoments::prior(&kernel, &x)?;
    for i in 0..task.n {
        prior.cov[(i, i)] += NOISE_VARIANCE;
    }
    let y = location_scale_sample(&prior, 1, &mut rng)?.row(0).transpose();
    let data = Dataset::new(x, y, NOISE_VARIANCE)?;
    let points = uniform_matrix(cfg.test_points, task.dim, &mut rng);
    let target = exact_posterior(&kernel, &data, &points)?;

    let z = if cfg.inducing == 0 || cfg.inducing >= task.n {
        data.x.clone()
    } else {
        let mut rows = sample_indices(&mut rng, task.n, cfg.inducing).into_vec();
        rows.sort_unstable();
        data.x.select_rows(&rows)
    };
    let inducing = optimal_inducing(&kernel, &data, &z)?;

    let mut out = Vec::new();
    for name in &cfg.samplers {
        let mut r = child_rng(&mut rng);
        let (w2, seconds) = timed(|| -> Result<f64, CliError> {
            let draws: Box<dyn FnMut(usize, &mut SeedRng) -> Result<DMatrix<f64>, CliError>> = match name.as_str() {
                "exact" => location_scale(target.clone())?,
                "sparse" => location_scale(sparse_posterior(&inducing, &points)?)?,
                "weight_space" => {
                    let basis = FourierBasis::build(&kernel, z.nrows() + cfg.basis, &mut r)?;
                    let phi = basis.features(&points)?;
                    let sampler = WeightPathwiseSampler::new(&basis, &data)?;
                    Box::new(move |count, rng| Ok((&phi * sampler.draw(count, rng)).transpose()))
                }
                "decoupled_sparse" => {
                    let basis = Arc::new(FourierBasis::build(&kernel, cfg.basis, &mut r)?);
                    let sampler = SparseDecoupledSampler::new(&inducing, basis)?;
                    let points = points.clone();
                    Box::new(move |count, rng| Ok(sampler.draw_values(&points, count, rng)?))
                }
                "decoupled_exact" => {
                    let basis = Arc::new(FourierBasis::build(&kernel, cfg.basis, &mut r)?);
                    let sampler = ExactDecoupledSampler::new(&kernel, &data, basis)?;
                    let points = points.clone();
                    Box::new(move |count, rng| Ok(sampler.draw_values(&points, count, rng)?))
                }
                other => return Err(CliError::Config(format!("unknown sampler `{other}`"))),
            };
            empirical_w2(draws, cfg.draws, &target, &mut r)
        });
        out.push(WassersteinRow {
            replicate: task.replicate,
            dim: task.dim,
            n: task.n,
            inducing: z.nrows(),
            sampler: name.clone(),
            w2: w2?,
            seconds,
        });
    }
    Ok(out)
}

type DrawFn = Box<dyn FnMut(usize, &mut SeedRng) -> Result<DMatrix<f64>, CliError>>;

/// Location-scale draws with the square root computed once.
fn location_scale(moments: GaussianMoments) -> Result<DrawFn, CliError> {
    let factor = cholesky_jittered(&moments.cov)?.into_factor();
    Ok(Box::new(move |count, rng| {
        let mut v = &factor * standard_normal_matrix(moments.dim(), count, rng);
        for mut col in v.column_iter_mut() {
            col += &moments.mean;
        }
        Ok(v.transpose())
    }))
}

fn empirical_w2(mut draws: DrawFn, total: usize, target: &GaussianMoments, rng: &mut SeedRng) -> Result<f64, CliError> {
    let mut acc = MomentAccumulator::new(target.dim());
    let mut done = 0;
    while done < total {
        let count = CHUNK.min(total - done);
        acc.push_rows(&draws(count, rng)?)?;
        done += count;
    }
    Ok(w2_gaussian(&acc.moments()?, target)?)
}
