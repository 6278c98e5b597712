//! Flat `key = value` experiment configuration.
//!
//! Every experiment shares one key space. Defaults depend on the experiment
//! and on the scale (desk or paper); a config file and then command-line
//! overrides are applied on top. Unknown keys are rejected.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Wasserstein,
    Thompson,
    Dynamics,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::Wasserstein, Experiment::Thompson, Experiment::Dynamics];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Wasserstein => "wasserstein",
            Experiment::Thompson => "thompson",
            Experiment::Dynamics => "dynamics",
        }
    }

    /// Sampler names accepted by the `samplers` key.
    pub fn samplers(self) -> &'static [&'static str] {
        match self {
            Experiment::Wasserstein => &["exact", "sparse", "weight_space", "decoupled_sparse", "decoupled_exact"],
            Experiment::Thompson => &["decoupled", "weight_space", "function_space", "random_search"],
            Experiment::Dynamics => &["decoupled", "iterative"],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment `{s}` (expected wasserstein, thompson or dynamics)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub replicates: usize,
    /// Write a JSON mirror next to every CSV table.
    pub json: bool,
    /// Write the wall-clock table.
    pub timing: bool,
    pub samplers: Vec<String>,
    pub dims: Vec<usize>,
    /// Initial Fourier basis size ℓ.
    pub basis: usize,
    /// Inducing locations: `0` means `Z = X` for the Wasserstein study; the
    /// sparse-switch cap for Thompson sampling; `m` for the dynamics GPs.
    pub inducing: usize,

    pub train_sizes: Vec<usize>,
    pub test_points: usize,
    pub draws: usize,

    pub budget: usize,
    /// `0` means one point per input dimension.
    pub batch_size: usize,
    pub mesh_size: usize,
    pub function_mesh_size: usize,
    pub top_s: usize,
    pub starts: usize,
    pub exact_limit: usize,
    pub objective_features: usize,
    pub objective_starts: usize,
    pub objective_mesh: usize,

    pub training_points: usize,
    pub horizon: usize,
    pub trajectories: usize,
    pub pilot_trajectories: usize,
    pub grid_subsample: usize,
    pub stride: usize,
    pub timing_horizons: Vec<usize>,
    pub timing_trajectories: usize,
    pub dt: f64,
    pub diffusion: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tolerance: f64,
    pub write_trajectories: bool,
}

/// Keys in serialization order.
pub const KEYS: &[&str] = &[
    "experiment",
    "seed",
    "replicates",
    "json",
    "timing",
    "samplers",
    "dims",
    "basis",
    "inducing",
    "train_sizes",
    "test_points",
    "draws",
    "budget",
    "batch_size",
    "mesh_size",
    "function_mesh_size",
    "top_s",
    "starts",
    "exact_limit",
    "objective_features",
    "objective_starts",
    "objective_mesh",
    "training_points",
    "horizon",
    "trajectories",
    "pilot_trajectories",
    "grid_subsample",
    "stride",
    "timing_horizons",
    "timing_trajectories",
    "dt",
    "diffusion",
    "sinkhorn_epsilon",
    "sinkhorn_iters",
    "sinkhorn_tolerance",
    "write_trajectories",
];

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("`{key}`: cannot parse `{value}` as {what}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| bad(key, value, std::any::type_name::<T>()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults sized for a laptop and CI.
    pub fn desk(experiment: Experiment) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            seed: 0,
            replicates: 4,
            json: false,
            timing: true,
            samplers: experiment.samplers().iter().map(|s| s.to_string()).collect(),
            dims: vec![2],
            basis: 1024,
            inducing: 0,
            train_sizes: vec![16, 64, 256],
            test_points: 64,
            draws: 10_000,
            budget: 256,
            batch_size: 0,
            mesh_size: 4096,
            function_mesh_size: 4096,
            top_s: 256,
            starts: 8,
            exact_limit: 1024,
            objective_features: 1 << 14,
            objective_starts: 512,
            objective_mesh: 1 << 15,
            training_points: 2000,
            horizon: 200,
            trajectories: 200,
            pilot_trajectories: 64,
            grid_subsample: 512,
            stride: 10,
            timing_horizons: vec![250, 500, 1000],
            timing_trajectories: 2,
            dt: 0.25,
            diffusion: 0.01,
            sinkhorn_epsilon: 1e-3,
            sinkhorn_iters: 5000,
            sinkhorn_tolerance: 1e-4,
            write_trajectories: false,
        };
        match experiment {
            Experiment::Wasserstein => {}
            Experiment::Thompson => {
                cfg.basis = 256;
                cfg.inducing = 512;
            }
            Experiment::Dynamics => {
                cfg.replicates = 1;
                cfg.inducing = 32;
            }
        }
        cfg
    }

    /// Magnitudes used for the published experiments.
    pub fn paper(experiment: Experiment) -> Self {
        let mut cfg = Self::desk(experiment);
        match experiment {
            Experiment::Wasserstein => {
                cfg.replicates = 64;
                cfg.dims = vec![2, 4, 8];
                cfg.train_sizes = vec![16, 64, 256, 1024];
                cfg.test_points = 1024;
                cfg.draws = 100_000;
            }
            Experiment::Thompson => {
                cfg.replicates = 32;
                cfg.dims = vec![2, 4, 8];
                cfg.budget = 1024;
                cfg.mesh_size = 250_000;
                cfg.function_mesh_size = 1_000_000;
                cfg.top_s = 2048;
                cfg.starts = 32;
                cfg.basis = 1024;
            }
            Experiment::Dynamics => {
                cfg.training_points = 10_000;
                cfg.trajectories = 1000;
                cfg.horizon = 1000;
                cfg.timing_horizons = vec![250, 500, 1000, 2000];
            }
        }
        cfg
    }

    pub fn defaults(experiment: Experiment, paper_scale: bool) -> Self {
        if paper_scale {
            Self::paper(experiment)
        } else {
            Self::desk(experiment)
        }
    }

    /// Set one key. Dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "experiment" => {
                let e: Experiment = v.parse()?;
                if e != self.experiment {
                    return Err(CliError::Config(format!(
                        "config is for `{e}` but the experiment is `{}`",
                        self.experiment
                    )));
                }
            }
            "seed" => self.seed = parse_num(k, v)?,
            "replicates" => self.replicates = parse_num(k, v)?,
            "json" => self.json = parse_bool(k, v)?,
            "timing" => self.timing = parse_bool(k, v)?,
            "samplers" => {
                self.samplers = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "dims" => self.dims = parse_list(k, v)?,
            "basis" => self.basis = parse_num(k, v)?,
            "inducing" => self.inducing = parse_num(k, v)?,
            "train_sizes" => self.train_sizes = parse_list(k, v)?,
            "test_points" => self.test_points = parse_num(k, v)?,
            "draws" => self.draws = parse_num(k, v)?,
            "budget" => self.budget = parse_num(k, v)?,
            "batch_size" => self.batch_size = parse_num(k, v)?,
            "mesh_size" => self.mesh_size = parse_num(k, v)?,
            "function_mesh_size" => self.function_mesh_size = parse_num(k, v)?,
            "top_s" => self.top_s = parse_num(k, v)?,
            "starts" => self.starts = parse_num(k, v)?,
            "exact_limit" => self.exact_limit = parse_num(k, v)?,
            "objective_features" => self.objective_features = parse_num(k, v)?,
            "objective_starts" => self.objective_starts = parse_num(k, v)?,
            "objective_mesh" => self.objective_mesh = parse_num(k, v)?,
            "training_points" => self.training_points = parse_num(k, v)?,
            "horizon" => self.horizon = parse_num(k, v)?,
            "trajectories" => self.trajectories = parse_num(k, v)?,
            "pilot_trajectories" => self.pilot_trajectories = parse_num(k, v)?,
            "grid_subsample" => self.grid_subsample = parse_num(k, v)?,
            "stride" => self.stride = parse_num(k, v)?,
            "timing_horizons" => self.timing_horizons = parse_list(k, v)?,
            "timing_trajectories" => self.timing_trajectories = parse_num(k, v)?,
            "dt" => self.dt = parse_num(k, v)?,
            "diffusion" => self.diffusion = parse_num(k, v)?,
            "sinkhorn_epsilon" => self.sinkhorn_epsilon = parse_num(k, v)?,
            "sinkhorn_iters" => self.sinkhorn_iters = parse_num(k, v)?,
            "sinkhorn_tolerance" => self.sinkhorn_tolerance = parse_num(k, v)?,
            "write_trajectories" => self.write_trajectories = parse_bool(k, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Parse a complete config. The `experiment` key picks the desk
    /// defaults that unspecified keys fall back to.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let experiment = text
            .lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .find(|(k, _)| k.trim() == "experiment")
            .map(|(_, v)| v.trim().parse::<Experiment>())
            .transpose()?
            .ok_or_else(|| CliError::Config("missing `experiment` key".into()))?;
        let mut cfg = Self::desk(experiment);
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.experiment.to_string(),
            self.seed.to_string(),
            self.replicates.to_string(),
            self.json.to_string(),
            self.timing.to_string(),
            self.samplers.join(","),
            join(&self.dims),
            self.basis.to_string(),
            self.inducing.to_string(),
            join(&self.train_sizes),
            self.test_points.to_string(),
            self.draws.to_string(),
            self.budget.to_string(),
            self.batch_size.to_string(),
            self.mesh_size.to_string(),
            self.function_mesh_size.to_string(),
            self.top_s.to_string(),
            self.starts.to_string(),
            self.exact_limit.to_string(),
            self.objective_features.to_string(),
            self.objective_starts.to_string(),
            self.objective_mesh.to_string(),
            self.training_points.to_string(),
            self.horizon.to_string(),
            self.trajectories.to_string(),
            self.pilot_trajectories.to_string(),
            self.grid_subsample.to_string(),
            self.stride.to_string(),
            join(&self.timing_horizons),
            self.timing_trajectories.to_string(),
            self.dt.to_string(),
            self.diffusion.to_string(),
            self.sinkhorn_epsilon.to_string(),
            self.sinkhorn_iters.to_string(),
            self.sinkhorn_tolerance.to_string(),
            self.write_trajectories.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("replicates", self.replicates),
            ("basis", self.basis),
            ("test_points", self.test_points),
            ("draws", self.draws),
            ("budget", self.budget),
            ("mesh_size", self.mesh_size),
            ("function_mesh_size", self.function_mesh_size),
            ("top_s", self.top_s),
            ("starts", self.starts),
            ("exact_limit", self.exact_limit),
            ("objective_features", self.objective_features),
            ("objective_starts", self.objective_starts),
            ("objective_mesh", self.objective_mesh),
            ("training_points", self.training_points),
            ("horizon", self.horizon),
            ("trajectories", self.trajectories),
            ("pilot_trajectories", self.pilot_trajectories),
            ("grid_subsample", self.grid_subsample),
            ("stride", self.stride),
            ("timing_trajectories", self.timing_trajectories),
            ("sinkhorn_iters", self.sinkhorn_iters),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(CliError::Config(format!("`{key}` must be at least 1")));
            }
        }
        let lists = [
            ("dims", &self.dims),
            ("train_sizes", &self.train_sizes),
            ("timing_horizons", &self.timing_horizons),
        ];
        for (key, list) in lists {
            if list.is_empty() || list.contains(&0) {
                return Err(CliError::Config(format!("`{key}` must be a nonempty list of positive counts")));
            }
        }
        if self.samplers.is_empty() {
            return Err(CliError::Config("`samplers` must name at least one sampler".into()));
        }
        let allowed = self.experiment.samplers();
        for s in &self.samplers {
            if !allowed.contains(&s.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown sampler `{s}` for {} (expected one of {})",
                    self.experiment,
                    allowed.join(", ")
                )));
            }
        }
        if self.experiment == Experiment::Dynamics && self.inducing == 0 {
            return Err(CliError::Config("`inducing` must be at least 1 for dynamics".into()));
        }
        if self.top_s > self.function_mesh_size {
            return Err(CliError::Config("`top_s` cannot exceed `function_mesh_size`".into()));
        }
        let reals = [
            ("dt", self.dt),
            ("sinkhorn_epsilon", self.sinkhorn_epsilon),
            ("sinkhorn_tolerance", self.sinkhorn_tolerance),
        ];
        for (key, value) in reals {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CliError::Config(format!("`{key}` must be positive")));
            }
        }
        if !(self.diffusion >= 0.0 && self.diffusion.is_finite()) {
            return Err(CliError::Config("`diffusion` must be nonnegative".into()));
        }
        Ok(())
    }
}
