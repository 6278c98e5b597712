//! Stochastic FitzHugh–Nagumo simulation with learned drift: ground truth
//! against decoupled and iterative GP rollouts, plus rollout timing.

use std::path::Path;

use gp_pathwise::dynamics::{
    comparison_steps, distance_series, fhn_equilibrium, fit_drift_model, generate_training_data, rollout_decoupled,
    rollout_iterative, simulate_truth, Control, DriftFitOptions, DriftModel, Normalizer, SdeConfig, Trajectories,
};
use gp_pathwise::rng::{child_rng, stream_rng, SeedRng};
use gp_pathwise::TransportPlanConfig;

use super::{quantile, timed};
use crate::config::ExperimentConfig;
use crate::output::{num, TableWriter};
use crate::CliError;

/// Methods whose ensembles are reported, in table order.
pub const METHODS: [&str; 3] = ["truth", "decoupled", "iterative"];

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub replicate: usize,
    pub step: usize,
    pub noise_floor: f64,
    pub truth_decoupled: Option<f64>,
    pub truth_iterative: Option<f64>,
    pub decoupled_iterative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageRow {
    pub replicate: usize,
    pub method: &'static str,
    pub step: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub replicate: usize,
    pub method: &'static str,
    pub horizon: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DynamicsReport {
    pub distances: Vec<DistanceRow>,
    pub voltage: Vec<VoltageRow>,
    pub timing: Vec<TimingRow>,
    /// Iterative steps whose downdate fell back to refactorization.
    pub fallbacks: usize,
    /// Whether every Sinkhorn solve met its tolerance.
    pub converged: bool,
}

pub fn sde_config(cfg: &ExperimentConfig, horizon: usize) -> SdeConfig {
    SdeConfig {
        dt: cfg.dt,
        diffusion: [cfg.diffusion; 2],
        horizon,
        control: Control::default_sinusoid(horizon),
    }
}

/// Initial state: the resting equilibrium with no applied current.
pub fn start_state() -> [f64; 2] {
    fhn_equilibrium(0.0)
}

/// Pilot run, training data and drift fit for one replicate.
pub fn train(cfg: &ExperimentConfig, rng: &mut SeedRng) -> Result<DriftModel, CliError> {
    let sde = sde_config(cfg, cfg.horizon);
    let pilot = simulate_truth(start_state(), &sde, cfg.pilot_trajectories, rng)?;
    let normalizer = Normalizer::from_pilot(&pilot)?;
    let data = generate_training_data(&sde, &normalizer, cfg.training_points, rng)?;
    let opts = DriftFitOptions {
        inducing: cfg.inducing,
        grid_subsample: cfg.grid_subsample,
        ..DriftFitOptions::default()
    };
    Ok(fit_drift_model(&data, normalizer, sde.dt, &opts, rng)?)
}

fn has(cfg: &ExperimentConfig, sampler: &str) -> bool {
    cfg.samplers.iter().any(|s| s == sampler)
}

pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<DynamicsReport, CliError> {
    let mut report = DynamicsReport {
        converged: true,
        ..DynamicsReport::default()
    };
    let hash = cfg.hash();
    let table = |name: &str, header: &[&str]| -> Result<Option<TableWriter>, CliError> {
        out.map(|dir| TableWriter::create(dir, name, header, &hash, cfg.json)).transpose()
    };
    let mut distance_t = table(
        "dynamics_distance",
        &["replicate", "step", "time", "noise_floor", "truth_decoupled", "truth_iterative", "decoupled_iterative"],
    )?;
    let mut voltage_t = table("dynamics_voltage", &["replicate", "method", "step", "time", "median", "q25", "q75"])?;
    let mut model_t = table(
        "dynamics_model",
        &["replicate", "component", "lengthscales", "amplitude", "noise_variance", "log_marginal_likelihood"],
    )?;
    let mut timing_t = if cfg.timing {
        table("dynamics_timing", &["replicate", "method", "horizon", "seconds"])?
    } else {
        None
    };
    let mut traj_t = if cfg.write_trajectories {
        table("dynamics_trajectories", &["replicate", "method", "trajectory", "step", "v", "w"])?
    } else {
        None
    };
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let time = |step: usize| num(step as f64 * cfg.dt);

    // Replicates run one after another: each already parallelizes over
    // trajectories and comparison steps.
    for replicate in 0..cfg.replicates {
        let mut rng = stream_rng(cfg.seed, replicate as u64);
        let model = train(cfg, &mut rng)?;
        if let Some(t) = model_t.as_mut() {
            for (i, c) in model.components.iter().enumerate() {
                t.write_row(&[
                    replicate.to_string(),
                    ["v", "w"][i].to_string(),
                    c.kernel.lengthscales().iter().map(|l| num(*l)).collect::<Vec<_>>().join(";"),
                    num(c.kernel.amplitude()),
                    num(c.noise_variance),
                    num(c.log_marginal_likelihood),
                ])?;
            }
            t.flush()?;
        }

        let sde = sde_config(cfg, cfg.horizon);
        let s0 = start_state();
        let mut streams: Vec<SeedRng> = (0..5).map(|_| child_rng(&mut rng)).collect();
        let truth = simulate_truth(s0, &sde, cfg.trajectories, &mut streams[0])?;
        let reference = simulate_truth(s0, &sde, cfg.trajectories, &mut streams[1])?;
        let decoupled = if has(cfg, "decoupled") {
            Some(rollout_decoupled(&model, s0, &sde, cfg.trajectories, cfg.basis, &mut streams[2])?)
        } else {
            None
        };
        let iterative = if has(cfg, "iterative") {
            let (t, fallbacks) = rollout_iterative(&model, s0, &sde, cfg.trajectories, &mut streams[3])?;
            if fallbacks > 0 {
                eprintln!("iterative rollout: {fallbacks} downdates fell back to refactorization");
            }
            report.fallbacks += fallbacks;
            Some(t)
        } else {
            None
        };

        let ensembles: Vec<(&'static str, &Trajectories)> = [Some(&truth), decoupled.as_ref(), iterative.as_ref()]
            .into_iter()
            .zip(METHODS)
            .filter_map(|(t, m)| t.map(|t| (m, t)))
            .collect();
        for (method, traj) in &ensembles {
            for step in 0..=cfg.horizon {
                let v: Vec<f64> = (0..traj.count()).map(|i| traj.state(i, step)[0]).collect();
                let row = VoltageRow {
                    replicate,
                    method,
                    step,
                    median: quantile(&v, 0.5),
                    q25: quantile(&v, 0.25),
                    q75: quantile(&v, 0.75),
                };
                if let Some(t) = voltage_t.as_mut() {
                    t.write_row(&[
                        replicate.to_string(),
                        method.to_string(),
                        step.to_string(),
                        time(step),
                        num(row.median),
                        num(row.q25),
                        num(row.q75),
                    ])?;
                }
                report.voltage.push(row);
            }
            if let Some(t) = traj_t.as_mut() {
                for i in 0..traj.count() {
                    for step in 0..=cfg.horizon {
                        let s = traj.state(i, step);
                        t.write_row(&[
                            replicate.to_string(),
                            method.to_string(),
                            i.to_string(),
                            step.to_string(),
                            num(s[0]),
                            num(s[1]),
                        ])?;
                    }
                }
                t.flush()?;
            }
        }
        if let Some(t) = voltage_t.as_mut() {
            t.flush()?;
        }

        let transport = TransportPlanConfig {
            epsilon: cfg.sinkhorn_epsilon,
            max_iters: cfg.sinkhorn_iters,
            tolerance: cfg.sinkhorn_tolerance,
        };
        let steps = comparison_steps(cfg.horizon, cfg.stride);
        let mut series = |a: &Trajectories, b: &Trajectories| -> Result<Vec<f64>, CliError> {
            let results = distance_series(a, b, &steps, &transport)?;
            report.converged &= results.iter().all(|r| r.converged);
            Ok(results.iter().map(|r| r.distance).collect())
        };
        let floor = series(&truth, &reference)?;
        let td = decoupled.as_ref().map(|d| series(&truth, d)).transpose()?;
        let ti = iterative.as_ref().map(|i| series(&truth, i)).transpose()?;
        let di = match (&decoupled, &iterative) {
            (Some(d), Some(i)) => Some(series(d, i)?),
            _ => None,
        };
        for (k, &step) in steps.iter().enumerate() {
            let row = DistanceRow {
                replicate,
                step,
                noise_floor: floor[k],
                truth_decoupled: td.as_ref().map(|s| s[k]),
                truth_iterative: ti.as_ref().map(|s| s[k]),
                decoupled_iterative: di.as_ref().map(|s| s[k]),
            };
            if let Some(t) = distance_t.as_mut() {
                t.write_row(&[
                    replicate.to_string(),
                    step.to_string(),
                    time(step),
                    num(row.noise_floor),
                    opt(row.truth_decoupled),
                    opt(row.truth_iterative),
                    opt(row.decoupled_iterative),
                ])?;
            }
            report.distances.push(row);
        }
        if let Some(t) = distance_t.as_mut() {
            t.flush()?;
        }

        if cfg.timing {
            let rows = time_rollouts(cfg, &model, &mut streams[4], replicate)?;
            if let Some(t) = timing_t.as_mut() {
                for r in &rows {
                    t.write_row(&[replicate.to_string(), r.method.to_string(), r.horizon.to_string(), num(r.seconds)])?;
                }
                t.flush()?;
            }
            report.timing.extend(rows);
        }
    }
    for t in [distance_t, voltage_t, model_t, timing_t, traj_t].into_iter().flatten() {
        t.finish()?;
    }
    Ok(report)
}

/// Wall-clock of each rollout method against horizon on a single thread
/// (best of two runs).
pub fn time_rollouts(
    cfg: &ExperimentConfig,
    model: &DriftModel,
    rng: &mut SeedRng,
    replicate: usize,
) -> Result<Vec<TimingRow>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    let mut rows = Vec::new();
    for method in ["decoupled", "iterative"] {
        if !has(cfg, method) {
            continue;
        }
        for &horizon in &cfg.timing_horizons {
            let sde = sde_config(cfg, horizon);
            let mut best = f64::INFINITY;
            for _ in 0..2 {
                let mut r = child_rng(rng);
                let (result, seconds) = pool.install(|| {
                    timed(|| -> Result<(), CliError> {
                        if method == "decoupled" {
                            rollout_decoupled(model, start_state(), &sde, cfg.timing_trajectories, cfg.basis, &mut r)?;
                        } else {
                            rollout_iterative(model, start_state(), &sde, cfg.timing_trajectories, &mut r)?;
                        }
                        Ok(())
                    })
                });
                result?;
                best = best.min(seconds);
            }
            rows.push(TimingRow {
                replicate,
                method,
                horizon,
                seconds: best,
            });
        }
    }
    Ok(rows)
}
