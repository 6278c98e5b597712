//! Parallel Thompson sampling on functions drawn from the prior: regret of
//! each sampler per iteration, with seeds matched across samplers.

use std::path::Path;

use gp_pathwise::rng::{child_rng, stream_rng};
use gp_pathwise::thompson::{run_ts, sample_test_objective, ObjectiveOptions, TsConfig, TsSampler};
use gp_pathwise::Kernel;

use super::run_ordered;
use crate::config::ExperimentConfig;
use crate::output::{num, TableWriter};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ThompsonRow {
    pub replicate: usize,
    pub dim: usize,
    pub sampler: String,
    pub iteration: usize,
    pub evaluations: usize,
    pub incumbent: f64,
    pub minimum: f64,
    pub regret: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
struct Task {
    index: usize,
    dim: usize,
    replicate: usize,
}

/// Per-sampler loop settings derived from the flat config.
pub fn ts_config(cfg: &ExperimentConfig, dim: usize, sampler: TsSampler) -> TsConfig {
    TsConfig {
        dim,
        batch_size: if cfg.batch_size == 0 { dim } else { cfg.batch_size },
        mesh_size: if sampler == TsSampler::FunctionSpace {
            cfg.function_mesh_size
        } else {
            cfg.mesh_size
        },
        top_s: cfg.top_s,
        starts: cfg.starts,
        budget: cfg.budget,
        sampler,
        basis_count: cfg.basis,
        noise_variance: 1e-3,
        exact_limit: cfg.exact_limit,
        max_inducing: cfg.inducing.max(1),
    }
}

pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<ThompsonRow>, CliError> {
    let samplers = cfg
        .samplers
        .iter()
        .map(|s| s.parse::<TsSampler>())
        .collect::<Result<Vec<_>, _>>()?;
    for &dim in &cfg.dims {
        for &s in &samplers {
            ts_config(cfg, dim, s).validate()?;
        }
    }
    let mut tasks = Vec::new();
    for &dim in &cfg.dims {
        for replicate in 0..cfg.replicates {
            tasks.push(Task {
                index: tasks.len(),
                dim,
                replicate,
            });
        }
    }
    let hash = cfg.hash();
    let mut tables = match out {
        Some(dir) => Some((
            TableWriter::create(
                dir,
                "thompson",
                &["replicate", "dim", "sampler", "iteration", "evaluations", "incumbent", "estimated_minimum", "regret"],
                &hash,
                cfg.json,
            )?,
            cfg.timing
                .then(|| {
                    TableWriter::create(
                        dir,
                        "thompson_timing",
                        &["replicate", "dim", "sampler", "iteration", "seconds"],
                        &hash,
                        cfg.json,
                    )
                })
                .transpose()?,
        )),
        None => None,
    };
    let mut rows = Vec::new();
    let mut failure = None;
    run_ordered(
        tasks,
        |t| Ok(run_task(cfg, &samplers, t)),
        |_, (result, error)| {
            if let Some((main, timing)) = tables.as_mut() {
                for r in &result {
                    main.write_row(&[
                        r.replicate.to_string(),
                        r.dim.to_string(),
                        r.sampler.clone(),
                        r.iteration.to_string(),
                        r.evaluations.to_string(),
                        num(r.incumbent),
                        num(r.minimum),
                        num(r.regret),
                    ])?;
                    if let Some(timing) = timing.as_mut() {
                        timing.write_row(&[
                            r.replicate.to_string(),
                            r.dim.to_string(),
                            r.sampler.clone(),
                            r.iteration.to_string(),
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
            if let Some(e) = error {
                failure.get_or_insert(e);
            }
            Ok(())
        },
    )?;
    if let Some((main, timing)) = tables {
        main.finish()?;
        if let Some(t) = timing {
            t.finish()?;
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

/// Rows for every sampler on one test function. Rows recorded before a
/// failure are kept alongside the error.
fn run_task(cfg: &ExperimentConfig, samplers: &[TsSampler], task: &Task) -> (Vec<ThompsonRow>, Option<CliError>) {
    let mut rows = Vec::new();
    let mut rng = stream_rng(cfg.seed, task.index as u64);
    let kernel = Kernel::isotropic(1.0, (task.dim as f64 / 100.0).sqrt(), task.dim).expect("valid kernel");
    let opts = ObjectiveOptions {
        features: cfg.objective_features,
        starts: cfg.objective_starts,
        mesh_size: cfg.objective_mesh,
    };
    let objective = match sample_test_objective(&kernel, &opts, &mut rng) {
        Ok(o) => o,
        Err(e) => return (rows, Some(e.into())),
    };
    let mut seeds: Vec<_> = samplers.iter().map(|_| child_rng(&mut rng)).collect();
    for (sampler, r) in samplers.iter().zip(seeds.iter_mut()) {
        let ts = ts_config(cfg, task.dim, *sampler);
        let f = |x: &[f64]| objective.eval(x);
        let mut evaluations = 0;
        let result = run_ts(&f, &kernel, &ts, r, |record| {
            evaluations += record.values.len();
            rows.push(ThompsonRow {
                replicate: task.replicate,
                dim: task.dim,
                sampler: sampler.name().to_string(),
                iteration: record.iteration,
                evaluations,
                incumbent: record.incumbent,
                minimum: objective.minimum,
                regret: record.incumbent - objective.minimum,
                seconds: record.seconds,
            });
        });
        if let Err(e) = result {
            return (rows, Some(e.into()));
        }
    }
    (rows, None)
}
