//! Run configuration: JSON file, command-line overrides, validation.

use std::path::{Path, PathBuf};

use relaxstab::ensemble::{DiagonalConvention, DEFAULT_DIMENSION, DEFAULT_HALF_WIDTH};
use relaxstab::perturbation::{DEFAULT_EPSILON, DEFAULT_MU_GRID};
use relaxstab::{TargetDynamics, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_TAU: f64 = 15.0;
pub const DEFAULT_ALPHA: f64 = 0.027;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub t_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dt: 0.1, t_max: 90.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceConfig {
    pub tau_prime: f64,
    pub recurrence_time: f64,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        Self { tau_prime: 2.0, recurrence_time: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub half_width: f64,
    pub tau: f64,
    /// Relative strength `‖V‖/‖H₀‖`; zero runs every cell unperturbed.
    pub epsilon: f64,
    pub mu_list: Vec<f64>,
    /// Defaults to the four closed-form targets at `tau`.
    pub targets: Option<Vec<TargetDynamics>>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub grid: GridConfig,
    /// Fixes `α` instead of fitting it at the widest band.
    pub alpha: Option<f64>,
    /// Fixes `β` for every cell instead of fitting it.
    pub beta: Option<f64>,
    /// `α` for the recurrence experiment when neither an override nor a fit
    /// is available.
    pub default_alpha: f64,
    /// Fit window; defaults to `[0, 4τ]`.
    pub fit_window: Option<(f64, f64)>,
    pub fidelity_window: (f64, f64),
    pub recurrence: RecurrenceConfig,
    pub diagonal: DiagonalConvention,
    pub omega_max: f64,
    pub envelope_bins: usize,
    pub output: PathBuf,
    pub workers: usize,
    /// Dimensions probed by the `nsweep` command.
    pub n_sweep: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            half_width: DEFAULT_HALF_WIDTH,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            mu_list: DEFAULT_MU_GRID.to_vec(),
            targets: None,
            seeds: vec![1, 2, 3],
            master_seed: 0,
            grid: GridConfig::default(),
            alpha: None,
            beta: None,
            default_alpha: DEFAULT_ALPHA,
            fit_window: None,
            fidelity_window: (0.0, 60.0),
            recurrence: RecurrenceConfig::default(),
            diagonal: DiagonalConvention::default(),
            omega_max: 30.0,
            envelope_bins: 8192,
            output: PathBuf::from("out"),
            workers: 1,
            n_sweep: vec![500, 1000, 2000, 4000],
        }
    }
}

/// Command-line overrides; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub workers: Option<usize>,
    pub dimension: Option<usize>,
    pub mu_list: Option<Vec<f64>>,
    pub target: Option<String>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn window(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo >= 0.0 && hi > lo && hi.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must satisfy 0 <= lo < hi, got [{lo}, {hi}]")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        if let Some(out) = o.output {
            self.output = out;
        }
        if let Some(seed) = o.master_seed {
            self.master_seed = seed;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(n) = o.dimension {
            self.dimension = n;
        }
        if let Some(mu) = o.mu_list {
            self.mu_list = mu;
        }
        if let Some(name) = o.target {
            let targets = name
                .split(',')
                .map(|n| TargetDynamics::from_name(n.trim(), self.tau))
                .collect::<relaxstab::Result<Vec<_>>>()?;
            self.targets = Some(targets);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(invalid(format!("dimension must be at least 2, got {}", self.dimension)));
        }
        positive("half_width", self.half_width)?;
        positive("tau", self.tau)?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.mu_list.is_empty() {
            return Err(invalid("mu_list is empty"));
        }
        for &mu in &self.mu_list {
            if !(mu > 0.0 && mu <= 2.0) {
                return Err(invalid(format!("band width mu must lie in (0, 2], got {mu}")));
            }
        }
        let mut labels: Vec<String> = self.mu_list.iter().map(|m| mu_label(*m)).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.mu_list.len() {
            return Err(invalid("mu_list contains duplicates"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds is empty"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(invalid("seeds contains duplicates"));
        }
        let targets = self.targets();
        if targets.is_empty() {
            return Err(invalid("targets is empty"));
        }
        for t in &targets {
            t.validate()?;
        }
        let mut names: Vec<&str> = targets.iter().map(|t| t.name()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != targets.len() {
            return Err(invalid("targets must have distinct kinds; their names label output files"));
        }
        TimeGrid::spanning(self.grid.dt, self.grid.t_max).map_err(|e| invalid(format!("grid: {e}")))?;
        positive("grid.dt", self.grid.dt)?;
        positive("grid.t_max", self.grid.t_max)?;
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid(format!("alpha must be non-negative, got {a}")));
            }
        }
        if let Some(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(invalid(format!("beta must lie in [0, 1], got {b}")));
            }
            if self.alpha.is_none() {
                return Err(invalid("a beta override needs an alpha override"));
            }
        }
        if !(self.default_alpha >= 0.0 && self.default_alpha.is_finite()) {
            return Err(invalid(format!("default_alpha must be non-negative, got {}", self.default_alpha)));
        }
        window("fit_window", self.fit_window())?;
        window("fidelity_window", self.fidelity_window)?;
        positive("recurrence.tau_prime", self.recurrence.tau_prime)?;
        if self.recurrence.recurrence_time < 3.0 * self.recurrence.tau_prime {
            return Err(invalid("recurrence.recurrence_time must be at least 3 tau_prime"));
        }
        if self.recurrence.recurrence_time + 2.0 * self.recurrence.tau_prime > self.grid.t_max {
            return Err(invalid("grid.t_max must extend past recurrence_time + 2 tau_prime"));
        }
        positive("omega_max", self.omega_max)?;
        if self.envelope_bins < 64 {
            return Err(invalid(format!("envelope_bins must be at least 64, got {}", self.envelope_bins)));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.n_sweep.iter().any(|&n| n < 2) {
            return Err(invalid("n_sweep dimensions must be at least 2"));
        }
        Ok(())
    }

    pub fn targets(&self) -> Vec<TargetDynamics> {
        self.targets.clone().unwrap_or_else(|| TargetDynamics::table_one(self.tau).to_vec())
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::spanning(self.grid.dt, self.grid.t_max).expect("validated grid")
    }

    pub fn fit_window(&self) -> (f64, f64) {
        self.fit_window.unwrap_or((0.0, 4.0 * self.tau))
    }

    /// The band width at which `α` is calibrated: the widest one configured.
    pub fn reference_mu(&self) -> f64 {
        self.mu_list.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Hash of everything that influences results. Output location, worker
    /// count and the sweep list are excluded.
    pub fn results_key(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.workers = 1;
        c.n_sweep.clear();
        c.targets = Some(self.targets());
        crate::artifact::sha256_bytes(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

/// Directory label for a band width, e.g. `0.1` or `2`.
pub fn mu_label(mu: f64) -> String {
    format!("{mu}")
}

pub fn parse_mu_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}
