//! Stage scheduler and the tasks of each stage.
//!
//! A stage is a list of independent tasks. Each task names its input and
//! output artifacts; its input key hashes the results-relevant configuration
//! together with the hashes of its inputs. A task whose outputs are all on
//! disk with matching hashes under the same key is skipped, which makes every
//! command resumable. Tasks run on a pool of `workers` threads and write only
//! to their own paths; the manifest is updated from the calling thread once
//! the stage is over.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use relaxstab::ensemble::{spectral_statistics, ModelSpec, SpectralReport};
use relaxstab::evolve::{assemble, autocorrelation_series, fidelity_series, fit_exponential_rate, EvolutionSummary};
use relaxstab::fitting::{fit_alpha, fit_params, prediction_rms, FitResult};
use relaxstab::memkernel::{
    dynamics_from_kernel, kernel_from_dynamics, predict_perturbed, recurrence_check, recurrence_dynamics,
    RecurrenceReport,
};
use relaxstab::perturbation::{band_fill_fraction, calibration_report, commutator_norm, CalibrationRow};
use relaxstab::{
    build_observable, build_perturbation, envelope_for, linalg, HeuristicParams, Perturbation, TailoredModel,
    TargetDynamics, TimeGrid, TimeSeries,
};
use serde::{Deserialize, Serialize};

use crate::artifact::{self, derive_seed, BETA_HEADER, KERNEL_HEADER, SIGMA_HEADER};
use crate::config::{mu_label, RunConfig};
use crate::error::{CliError, Result};
use crate::layout;
use crate::manifest::{ArtifactEntry, Manifest, StageRecord, TaskFailure};
use crate::report;

/// A file a task produced.
#[derive(Debug, Clone)]
pub struct Written {
    pub path: String,
    pub sha256: String,
    pub seed: Option<u64>,
}

impl Written {
    fn seeded(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

type Job = Box<dyn Fn(&Context) -> Result<Vec<Written>> + Send + Sync>;

pub struct Task {
    pub id: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    job: Job,
}

impl Task {
    fn new(
        id: impl Into<String>,
        inputs: Vec<String>,
        outputs: Vec<String>,
        job: impl Fn(&Context) -> Result<Vec<Written>> + Send + Sync + 'static,
    ) -> Self {
        Self { id: id.into(), inputs, outputs, job: Box::new(job) }
    }
}

/// Shared read-only state of a run.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub grid: TimeGrid,
    key: String,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            out: config.output.clone(),
            grid: config.time_grid(),
            key: config.results_key(),
            config,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn written(&self, rel: &str, sha256: String) -> Written {
        Written { path: rel.to_string(), sha256, seed: None }
    }

    fn csv(&self, rel: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Written> {
        Ok(self.written(rel, artifact::write_csv(&self.path(rel), header, rows)?))
    }

    fn series(&self, rel: &str, s: &TimeSeries) -> Result<Written> {
        Ok(self.written(rel, artifact::write_series(&self.path(rel), s)?))
    }

    fn json<T: Serialize>(&self, rel: &str, value: &T) -> Result<Written> {
        Ok(self.written(rel, artifact::write_json(&self.path(rel), value)?))
    }

    pub fn read_series(&self, rel: &str) -> Result<TimeSeries> {
        artifact::read_series(&self.path(rel))
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        artifact::read_json(&self.path(rel))
    }

    fn read_model(&self, rel: &str) -> Result<TailoredModel> {
        artifact::read_model(&self.path(rel))
    }

    pub fn seed_for(&self, rel: &str) -> u64 {
        derive_seed(self.config.master_seed, rel)
    }

    fn targets(&self) -> Vec<TargetDynamics> {
        self.config.targets()
    }

    fn cells(&self) -> Vec<(TargetDynamics, f64, u64)> {
        let mut cells = Vec::new();
        for t in self.targets() {
            for &mu in &self.config.mu_list {
                for &s in &self.config.seeds {
                    cells.push((t.clone(), mu, s));
                }
            }
        }
        cells
    }

    fn model_runs(&self) -> Vec<(TargetDynamics, u64)> {
        let mut runs = Vec::new();
        for t in self.targets() {
            for &s in &self.config.seeds {
                runs.push((t.clone(), s));
            }
        }
        runs
    }
}

/// Persisted next to each model blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub spec: ModelSpec,
    pub rescale: f64,
    pub envelope_warning: Option<String>,
    pub blob_sha256: String,
    pub spectral: SpectralReport,
}

/// Persisted for each perturbation; `V` itself is regenerated from `seed`
/// and checked against `v_sha256`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDescriptor {
    pub mu: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub sigma: f64,
    pub fill_fraction: f64,
    pub commutator_norm: f64,
    /// `None` for the zero perturbation.
    pub v_sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub target: String,
    pub mu: f64,
    pub seed: u64,
    pub model_seed: u64,
    pub perturbation_seed: u64,
    pub epsilon: f64,
    pub sigma: f64,
    pub dt: f64,
    pub t_max: f64,
    pub fidelity_window: (f64, f64),
    pub evolution: EvolutionSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSummary {
    pub target: String,
    pub seed: u64,
    pub local_coefficient: f64,
    /// Max `|dynamics_from_kernel(kernel_from_dynamics(x)) - x|` for the
    /// unperturbed series (`a`) and each perturbed one (`mu-<μ>`).
    pub round_trip: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFit {
    pub target: String,
    pub mu: f64,
    pub seed: u64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaFit {
    pub target: String,
    pub seed: u64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    Override,
    Fitted,
    Default,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitsSummary {
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub reference_mu: f64,
    pub alpha_fits: Vec<AlphaFit>,
    pub cells: Vec<CellFit>,
    /// Target whose `β` medians make up `beta_mu.csv`.
    pub beta_target: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrenceSummary {
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub checks: Vec<RecurrenceReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub target: String,
    pub seed: u64,
    pub dimension: usize,
    pub epsilon: f64,
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NSweepPoint {
    pub dimension: usize,
    pub target: String,
    pub seed: u64,
    pub tailoring_error: f64,
    pub kolmogorov_distance: f64,
    pub unit_radius_distance: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn v_sha256(p: &Perturbation) -> String {
    use sha2::{Digest, Sha256};
    let n = p.dimension();
    let mut h = Sha256::new();
    let mut row = Vec::with_capacity(8 * n);
    for i in 0..n {
        row.clear();
        for j in 0..n {
            row.extend_from_slice(&p.v_matrix[(i, j)].to_le_bytes());
        }
        h.update(&row);
    }
    artifact::to_hex(&h.finalize())
}

/// Regenerate the perturbation a descriptor describes and check its hash.
fn regenerate(model: &TailoredModel, d: &PerturbationDescriptor, path: &Path) -> Result<Perturbation> {
    match &d.v_sha256 {
        None => Ok(Perturbation::zero(model.dimension())),
        Some(expected) => {
            let p = build_perturbation(model, d.mu, d.epsilon, d.seed)?;
            if &v_sha256(&p) != expected {
                return Err(CliError::malformed(path, "regenerated perturbation does not match its recorded hash"));
            }
            Ok(p)
        }
    }
}

/// `max |C - g|` over `[0, t_hi]`.
pub fn tailoring_error(c: &TimeSeries, target: &TargetDynamics, t_hi: f64) -> Result<f64> {
    let g0 = target.evaluate(0.0)?;
    let mut worst: f64 = 0.0;
    for i in c.grid.window(0.0, t_hi) {
        let t = c.grid.time(i);
        worst = worst.max((c.values[i] - target.evaluate(t)? / g0).abs());
    }
    Ok(worst)
}

fn build_model(config: &RunConfig, target: &TargetDynamics, dimension: usize, seed: u64) -> Result<TailoredModel> {
    let spec = ModelSpec {
        dimension,
        half_width: config.half_width,
        seed,
        target: target.clone(),
        diagonal: config.diagonal,
    };
    let envelope = envelope_for(target, config.omega_max, config.envelope_bins)?;
    Ok(build_observable(&spec, &envelope)?)
}

// Stage task lists.

fn build_tasks(ctx: &Context) -> Vec<Task> {
    let mut tasks = Vec::new();
    for t in ctx.targets() {
        let name = t.name();
        let rel = layout::target_curve(name);
        let target = t.clone();
        tasks.push(Task::new(format!("target {name}"), vec![], vec![rel.clone()], move |ctx| {
            let g0 = target.evaluate(0.0)?;
            let mut rows = Vec::new();
            for time in ctx.grid.times() {
                match target.evaluate(time) {
                    Ok(g) => rows.push(vec![time, g / g0]),
                    Err(_) => break,
                }
            }
            Ok(vec![ctx.csv(&rel, &artifact::SERIES_HEADER, rows)?])
        }));
    }
    for (target, s) in ctx.model_runs() {
        let name = target.name();
        let blob = layout::model_blob(name, s);
        let sidecar = layout::model_sidecar(name, s);
        let perts: Vec<(f64, String)> =
            ctx.config.mu_list.iter().map(|&mu| (mu, layout::perturbation(name, mu, s))).collect();
        let mut outputs = vec![blob.clone(), sidecar.clone()];
        outputs.extend(perts.iter().map(|p| p.1.clone()));
        tasks.push(Task::new(format!("model {name} seed {s}"), vec![], outputs, move |ctx| {
            let model_seed = ctx.seed_for(&blob);
            let model = build_model(&ctx.config, &target, ctx.config.dimension, model_seed)?;
            if let Some(w) = &model.envelope_warning {
                warn!("{blob}: {w}");
            }
            let blob_sha = artifact::write_model(&ctx.path(&blob), &model)?;
            let sc = ModelSidecar {
                spec: model.spec.clone(),
                rescale: model.rescale,
                envelope_warning: model.envelope_warning.clone(),
                blob_sha256: blob_sha.clone(),
                spectral: spectral_statistics(&model),
            };
            let mut written = vec![ctx.written(&blob, blob_sha).seeded(model_seed), ctx.json(&sidecar, &sc)?];
            for (mu, rel) in &perts {
                let seed = ctx.seed_for(rel);
                let d = if ctx.config.epsilon > 0.0 {
                    let p = build_perturbation(&model, *mu, ctx.config.epsilon, seed)?;
                    PerturbationDescriptor {
                        mu: *mu,
                        epsilon: p.epsilon,
                        seed,
                        sigma: p.sigma,
                        fill_fraction: band_fill_fraction(&p),
                        commutator_norm: commutator_norm(&model, &p),
                        v_sha256: Some(v_sha256(&p)),
                    }
                } else {
                    PerturbationDescriptor {
                        mu: *mu,
                        epsilon: 0.0,
                        seed,
                        sigma: 0.0,
                        fill_fraction: 0.0,
                        commutator_norm: 0.0,
                        v_sha256: None,
                    }
                };
                written.push(ctx.json(rel, &d)?.seeded(seed));
            }
            Ok(written)
        }));
    }
    tasks
}

fn calibration_tasks(ctx: &Context) -> Vec<Task> {
    if ctx.config.epsilon == 0.0 {
        return vec![];
    }
    let target = ctx.targets()[0].clone();
    let s = ctx.config.seeds[0];
    let blob = layout::model_blob(target.name(), s);
    let outputs = vec![layout::CALIBRATION_CSV.to_string(), layout::CALIBRATION_JSON.to_string()];
    vec![Task::new("calibration", vec![blob.clone()], outputs, move |ctx| {
        let model = ctx.read_model(&blob)?;
        let seed = ctx.seed_for(layout::CALIBRATION_CSV);
        let rows = calibration_report(&model, ctx.config.epsilon, &ctx.config.mu_list, seed)?;
        let csv = ctx.csv(
            layout::CALIBRATION_CSV,
            &SIGMA_HEADER,
            rows.iter().map(|r| vec![r.mu, r.sigma_exact, r.sigma_estimate, r.ratio]),
        )?;
        let table = CalibrationTable {
            target: target.name().to_string(),
            seed: s,
            dimension: model.dimension(),
            epsilon: ctx.config.epsilon,
            rows,
        };
        Ok(vec![csv.seeded(seed), ctx.json(layout::CALIBRATION_JSON, &table)?])
    })]
}

fn evolve_tasks(ctx: &Context) -> Vec<Task> {
    let mut tasks = Vec::new();
    for (target, s) in ctx.model_runs() {
        let name = target.name();
        let blob = layout::model_blob(name, s);
        let out = layout::unperturbed(name, s);
        tasks.push(Task::new(format!("evolve {name} seed {s}"), vec![blob.clone()], vec![out.clone()], move |ctx| {
            let model = ctx.read_model(&blob)?;
            let a = autocorrelation_series(model.frame(), &ctx.grid)?;
            Ok(vec![ctx.series(&out, &a)?])
        }));
    }
    for (target, mu, s) in ctx.cells() {
        let name = target.name().to_string();
        let blob = layout::model_blob(&name, s);
        let pert = layout::perturbation(&name, mu, s);
        let outputs = vec![
            layout::perturbed(&name, mu, s),
            layout::fidelity(&name, mu, s),
            layout::cell_summary(&name, mu, s),
        ];
        let id = format!("evolve {name} mu {} seed {s}", mu_label(mu));
        tasks.push(Task::new(id, vec![blob.clone(), pert.clone()], outputs.clone(), move |ctx| {
            let model = ctx.read_model(&blob)?;
            let d: PerturbationDescriptor = ctx.read_json(&pert)?;
            let p = regenerate(&model, &d, &ctx.path(&pert))?;
            let sys = assemble(&model, &p)?;
            let a_tilde = autocorrelation_series(sys.frame(), &ctx.grid)?;
            let fidelity = fidelity_series(&sys, &ctx.grid)?;
            let (lo, hi) = ctx.config.fidelity_window;
            let max_level_shift = sys
                .h_eigenvalues
                .iter()
                .zip(&model.spectrum.eigenvalues)
                .map(|(e, e0)| (e - e0).abs())
                .fold(0.0, f64::max);
            let summary = CellSummary {
                target: name.clone(),
                mu,
                seed: s,
                model_seed: model.spec.seed,
                perturbation_seed: d.seed,
                epsilon: d.epsilon,
                sigma: d.sigma,
                dt: ctx.grid.dt,
                t_max: ctx.grid.t_max(),
                fidelity_window: (lo, hi),
                evolution: EvolutionSummary {
                    fidelity_rate: fit_exponential_rate(&fidelity, lo, hi)?,
                    trace_defect: sys.trace_defect(),
                    max_level_shift,
                },
            };
            Ok(vec![
                ctx.series(&outputs[0], &a_tilde)?,
                ctx.series(&outputs[1], &fidelity)?,
                ctx.json(&outputs[2], &summary)?,
            ])
        }));
    }
    tasks
}

fn round_trip_residual(series: &TimeSeries) -> Result<(f64, f64)> {
    let k = kernel_from_dynamics(series)?;
    let back = dynamics_from_kernel(&k, series.values[0], &series.grid)?;
    Ok((back.max_abs_diff(series)?, k.local_coefficient))
}

fn kernel_tasks(ctx: &Context) -> Vec<Task> {
    let mu_list = ctx.config.mu_list.clone();
    ctx.model_runs()
        .into_iter()
        .map(|(target, s)| {
            let name = target.name().to_string();
            let a_rel = layout::unperturbed(&name, s);
            let mut inputs = vec![a_rel.clone()];
            inputs.extend(mu_list.iter().map(|&mu| layout::perturbed(&name, mu, s)));
            let outputs = vec![layout::kernel_csv(&name, s), layout::kernel_json(&name, s)];
            let mu_list = mu_list.clone();
            Task::new(format!("kernel {name} seed {s}"), inputs, outputs.clone(), move |ctx| {
                let a = ctx.read_series(&a_rel)?;
                let kernel = kernel_from_dynamics(&a)?;
                let (a_residual, _) = round_trip_residual(&a)?;
                let mut round_trip = BTreeMap::from([("a".to_string(), a_residual)]);
                for &mu in &mu_list {
                    let at = ctx.read_series(&layout::perturbed(&name, mu, s))?;
                    round_trip.insert(format!("mu-{}", mu_label(mu)), round_trip_residual(&at)?.0);
                }
                let smooth = kernel.smoothed();
                let csv = ctx.csv(
                    &outputs[0],
                    &KERNEL_HEADER,
                    kernel.grid.times().zip(smooth).map(|(t, k)| vec![t, k]),
                )?;
                let summary = KernelSummary {
                    target: name.clone(),
                    seed: s,
                    local_coefficient: kernel.local_coefficient,
                    round_trip,
                };
                Ok(vec![csv, ctx.json(&outputs[1], &summary)?])
            })
        })
        .collect()
}

fn alpha_fit_tasks(ctx: &Context) -> Vec<Task> {
    if ctx.config.alpha.is_some() {
        return vec![];
    }
    let mu_ref = ctx.config.reference_mu();
    ctx.model_runs()
        .into_iter()
        .map(|(target, s)| {
            let name = target.name().to_string();
            let a_rel = layout::unperturbed(&name, s);
            let at_rel = layout::perturbed(&name, mu_ref, s);
            let out = layout::alpha_fit(&name, s);
            Task::new(
                format!("fit alpha {name} seed {s}"),
                vec![a_rel.clone(), at_rel.clone()],
                vec![out.clone()],
                move |ctx| {
                    let a = ctx.read_series(&a_rel)?;
                    let at = ctx.read_series(&at_rel)?;
                    let fit = fit_alpha(&a, &at, 1.0, ctx.config.fit_window())?;
                    Ok(vec![ctx.json(&out, &AlphaFit { target: name.clone(), seed: s, fit })?])
                },
            )
        })
        .collect()
}

fn alpha_inputs(ctx: &Context) -> Vec<String> {
    if ctx.config.alpha.is_some() {
        return vec![];
    }
    ctx.model_runs().iter().map(|(t, s)| layout::alpha_fit(t.name(), *s)).collect()
}

/// The frozen `α`: the override, or the median of the per-run fits.
fn frozen_alpha(ctx: &Context) -> Result<(f64, Vec<AlphaFit>)> {
    if let Some(a) = ctx.config.alpha {
        return Ok((a, vec![]));
    }
    let fits: Vec<AlphaFit> = alpha_inputs(ctx).iter().map(|rel| ctx.read_json(rel)).collect::<Result<_>>()?;
    let mut values: Vec<f64> = fits.iter().map(|f| f.fit.params.alpha).collect();
    Ok((median(&mut values), fits))
}

fn fit_tasks(ctx: &Context) -> Vec<Task> {
    ctx.cells()
        .into_iter()
        .map(|(target, mu, s)| {
            let name = target.name().to_string();
            let a_rel = layout::unperturbed(&name, s);
            let at_rel = layout::perturbed(&name, mu, s);
            let mut inputs = vec![a_rel.clone(), at_rel.clone()];
            inputs.extend(alpha_inputs(ctx));
            let outputs = vec![layout::cell_fit(&name, mu, s), layout::prediction(&name, mu, s)];
            Task::new(format!("fit {name} mu {} seed {s}", mu_label(mu)), inputs, outputs.clone(), move |ctx| {
                let (alpha, _) = frozen_alpha(ctx)?;
                let a = ctx.read_series(&a_rel)?;
                let at = ctx.read_series(&at_rel)?;
                let window = ctx.config.fit_window();
                let fit = match ctx.config.beta {
                    Some(beta) => {
                        let params = HeuristicParams::new(alpha, beta)?;
                        FitResult {
                            params,
                            rms_residual: prediction_rms(&a, &at, params, window)?,
                            window,
                            degenerate: false,
                            refinement_failed: false,
                        }
                    }
                    None => fit_params(&a, &at, Some(alpha), window)?,
                };
                let predicted = predict_perturbed(&a, fit.params)?;
                let cell = CellFit { target: name.clone(), mu, seed: s, fit };
                Ok(vec![ctx.json(&outputs[0], &cell)?, ctx.series(&outputs[1], &predicted)?])
            })
        })
        .collect()
}

/// Target whose `β(μ)` curve is reported: exponential when present.
fn beta_target(ctx: &Context) -> String {
    let targets = ctx.targets();
    targets
        .iter()
        .find(|t| matches!(t, TargetDynamics::Exponential { .. }))
        .unwrap_or(&targets[0])
        .name()
        .to_string()
}

fn fit_summary_tasks(ctx: &Context) -> Vec<Task> {
    let mut inputs = alpha_inputs(ctx);
    inputs.extend(ctx.cells().iter().map(|(t, mu, s)| layout::cell_fit(t.name(), *mu, *s)));
    let outputs = vec![layout::FITS_JSON.to_string(), layout::BETA_CSV.to_string()];
    vec![Task::new("fit summary", inputs, outputs, |ctx| {
        let (alpha, alpha_fits) = frozen_alpha(ctx)?;
        let cells: Vec<CellFit> = ctx
            .cells()
            .iter()
            .map(|(t, mu, s)| ctx.read_json(&layout::cell_fit(t.name(), *mu, *s)))
            .collect::<Result<_>>()?;
        let beta_target = beta_target(ctx);
        let rows = ctx.config.mu_list.iter().map(|&mu| {
            let of: Vec<&CellFit> = cells.iter().filter(|c| c.target == beta_target && c.mu == mu).collect();
            let mut betas: Vec<f64> = of.iter().map(|c| c.fit.params.beta).collect();
            let mut rms: Vec<f64> = of.iter().map(|c| c.fit.rms_residual).collect();
            vec![mu, median(&mut betas), median(&mut rms)]
        });
        let csv = ctx.csv(layout::BETA_CSV, &BETA_HEADER, rows.collect::<Vec<_>>())?;
        let summary = FitsSummary {
            alpha,
            alpha_source: if ctx.config.alpha.is_some() { AlphaSource::Override } else { AlphaSource::Fitted },
            reference_mu: ctx.config.reference_mu(),
            alpha_fits,
            cells,
            beta_target,
        };
        Ok(vec![ctx.json(layout::FITS_JSON, &summary)?, csv])
    })]
}

fn recurrence_tasks(ctx: &Context) -> Vec<Task> {
    let use_fit = ctx.config.alpha.is_none() && ctx.path(layout::FITS_JSON).exists();
    let inputs = if use_fit { vec![layout::FITS_JSON.to_string()] } else { vec![] };
    let outputs = vec![
        layout::RECURRENCE_JSON.to_string(),
        layout::RECURRENCE_TARGET.to_string(),
        layout::recurrence_prediction(0.0),
        layout::recurrence_prediction(1.0),
    ];
    vec![Task::new("recurrence", inputs, outputs, move |ctx| {
        let (alpha, alpha_source) = match ctx.config.alpha {
            Some(a) => (a, AlphaSource::Override),
            None if use_fit => (ctx.read_json::<FitsSummary>(layout::FITS_JSON)?.alpha, AlphaSource::Fitted),
            None => (ctx.config.default_alpha, AlphaSource::Default),
        };
        let rc = ctx.config.recurrence;
        let a_r = recurrence_dynamics(rc.tau_prime, rc.recurrence_time, &ctx.grid)?;
        let mut written = vec![ctx.series(layout::RECURRENCE_TARGET, &a_r)?];
        let mut checks = Vec::new();
        for beta in [0.0, 1.0] {
            let params = HeuristicParams::new(alpha, beta)?;
            checks.push(recurrence_check(&a_r, params, rc.tau_prime, rc.recurrence_time)?);
            written.push(ctx.series(&layout::recurrence_prediction(beta), &predict_perturbed(&a_r, params)?)?);
        }
        let summary = RecurrenceSummary { alpha, alpha_source, checks };
        written.insert(0, ctx.json(layout::RECURRENCE_JSON, &summary)?);
        Ok(written)
    })]
}

fn report_tasks(ctx: &Context) -> Vec<Task> {
    vec![Task::new("report", report::inputs(ctx), vec![layout::REPORT_JSON.to_string()], |ctx| {
        let r = report::compute(ctx)?;
        Ok(vec![ctx.json(layout::REPORT_JSON, &r)?])
    })]
}

fn n_sweep_tasks(ctx: &Context) -> Vec<Task> {
    let target_list = ctx.targets();
    let s = ctx.config.seeds[0];
    let mut tasks = Vec::new();
    for &n in &ctx.config.n_sweep {
        for target in &target_list {
            let target = target.clone();
            let out = layout::n_sweep_point(n, target.name());
            tasks.push(Task::new(format!("n-sweep {n} {}", target.name()), vec![], vec![out.clone()], move |ctx| {
                let seed = ctx.seed_for(&out);
                let model = build_model(&ctx.config, &target, n, seed)?;
                let c = autocorrelation_series(model.frame(), &ctx.grid)?;
                let spectral = spectral_statistics(&model);
                let point = NSweepPoint {
                    dimension: n,
                    target: target.name().to_string(),
                    seed: s,
                    tailoring_error: tailoring_error(&c, &target, 3.0 * target.tau())?,
                    kolmogorov_distance: spectral.kolmogorov_distance,
                    unit_radius_distance: spectral.unit_radius_distance,
                };
                Ok(vec![ctx.json(&out, &point)?.seeded(seed)])
            }));
        }
    }
    tasks
}

fn n_sweep_summary_tasks(ctx: &Context) -> Vec<Task> {
    let mut inputs = Vec::new();
    for &n in &ctx.config.n_sweep {
        for t in ctx.targets() {
            inputs.push(layout::n_sweep_point(n, t.name()));
        }
    }
    let points = inputs.clone();
    vec![Task::new("n-sweep summary", inputs, vec![layout::N_SWEEP_JSON.to_string()], move |ctx| {
        let rows: Vec<NSweepPoint> = points.iter().map(|p| ctx.read_json(p)).collect::<Result<_>>()?;
        Ok(vec![ctx.json(layout::N_SWEEP_JSON, &rows)?])
    })]
}

// Scheduling.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Build,
    Calibrate,
    Evolve,
    Kernel,
    FitAlpha,
    Fit,
    FitSummary,
    Recurrence,
    Report,
    NSweep,
    NSweepSummary,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::Calibrate => "calibrate",
            Stage::Evolve => "evolve",
            Stage::Kernel => "kernel",
            Stage::FitAlpha => "fit-alpha",
            Stage::Fit => "fit",
            Stage::FitSummary => "fit-summary",
            Stage::Recurrence => "recurrence",
            Stage::Report => "report",
            Stage::NSweep => "n-sweep",
            Stage::NSweepSummary => "n-sweep-summary",
        }
    }

    fn tasks(self, ctx: &Context) -> Vec<Task> {
        match self {
            Stage::Build => build_tasks(ctx),
            Stage::Calibrate => calibration_tasks(ctx),
            Stage::Evolve => evolve_tasks(ctx),
            Stage::Kernel => kernel_tasks(ctx),
            Stage::FitAlpha => alpha_fit_tasks(ctx),
            Stage::Fit => fit_tasks(ctx),
            Stage::FitSummary => fit_summary_tasks(ctx),
            Stage::Recurrence => recurrence_tasks(ctx),
            Stage::Report => report_tasks(ctx),
            Stage::NSweep => n_sweep_tasks(ctx),
            Stage::NSweepSummary => n_sweep_summary_tasks(ctx),
        }
    }
}

/// Stages making up each command, in order.
pub fn stages_for(command: &str) -> Option<&'static [Stage]> {
    use Stage::*;
    Some(match command {
        "build" => &[Build, Calibrate],
        "evolve" => &[Evolve],
        "kernel" => &[Kernel],
        "fit" => &[FitAlpha, Fit, FitSummary],
        "recurrence" => &[Recurrence],
        "report" => &[Report],
        "sweep" => &[Build, Calibrate, Evolve, Kernel, FitAlpha, Fit, FitSummary, Recurrence, Report],
        "nsweep" => &[NSweep, NSweepSummary],
        _ => return None,
    })
}

fn input_key(ctx: &Context, manifest: &Manifest, task: &Task) -> Result<String> {
    let mut text = format!("{}\n{}", ctx.key, task.id);
    for rel in &task.inputs {
        let path = ctx.path(rel);
        if !path.exists() {
            return Err(CliError::Missing(path));
        }
        let sha = match manifest.artifacts.get(rel) {
            Some(e) => e.sha256.clone(),
            None => artifact::sha256_file(&path)?,
        };
        text.push_str(&format!("\n{rel}:{sha}"));
    }
    Ok(artifact::sha256_bytes(text.as_bytes()))
}

fn up_to_date(ctx: &Context, manifest: &Manifest, task: &Task, key: &str) -> bool {
    task.outputs.iter().all(|rel| match manifest.artifacts.get(rel) {
        Some(e) if e.inputs == key => artifact::sha256_file(&ctx.path(rel)).is_ok_and(|sha| sha == e.sha256),
        _ => false,
    })
}

fn failure(task: &str, e: &CliError) -> TaskFailure {
    TaskFailure { task: task.to_string(), code: e.exit_code(), message: e.to_string() }
}

/// Run one stage and record it in the manifest (saved on return).
pub fn run_stage(ctx: &Context, pool: &rayon::ThreadPool, manifest: &mut Manifest, stage: Stage) -> Result<StageRecord> {
    let start = Instant::now();
    let tasks = stage.tasks(ctx);
    let total = tasks.len();
    let mut failures = Vec::new();
    let mut pending = Vec::new();
    let mut skipped = 0;
    for task in tasks {
        match input_key(ctx, manifest, &task) {
            Err(e) => failures.push(failure(&task.id, &e)),
            Ok(key) if up_to_date(ctx, manifest, &task, &key) => skipped += 1,
            Ok(key) => pending.push((task, key)),
        }
    }
    info!("{}: {} tasks, {} up to date", stage.name(), total, skipped);
    let results: Vec<Result<Vec<Written>>> = pool.install(|| {
        pending
            .par_iter()
            .map(|(task, _)| {
                let t0 = Instant::now();
                let r = (task.job)(ctx);
                info!("{} finished in {:.1} s", task.id, t0.elapsed().as_secs_f64());
                r
            })
            .collect()
    });
    for ((task, key), result) in pending.iter().zip(results) {
        match result {
            Ok(written) => {
                for w in written {
                    manifest.artifacts.insert(w.path, ArtifactEntry { sha256: w.sha256, inputs: key.clone(), seed: w.seed });
                }
            }
            Err(e) => {
                warn!("{} failed: {e}", task.id);
                failures.push(failure(&task.id, &e));
            }
        }
    }
    after_stage(ctx, manifest, stage);
    let record = StageRecord { seconds: start.elapsed().as_secs_f64(), tasks: total, skipped, failures };
    manifest.stages.insert(stage.name().to_string(), record.clone());
    manifest.save(&ctx.out)?;
    Ok(record)
}

/// Copy headline numbers into the manifest.
fn after_stage(ctx: &Context, manifest: &mut Manifest, stage: Stage) {
    match stage {
        Stage::Kernel => {
            for (t, s) in ctx.model_runs() {
                let rel = layout::kernel_json(t.name(), s);
                if let Ok(k) = ctx.read_json::<KernelSummary>(&rel) {
                    manifest.local_coefficients.insert(layout::kernel_csv(t.name(), s), k.local_coefficient);
                }
            }
        }
        Stage::FitSummary => {
            if let Ok(f) = ctx.read_json::<FitsSummary>(layout::FITS_JSON) {
                manifest.alpha = Some(f.alpha);
            }
        }
        _ => {}
    }
}

/// Run the stages of `command`, stopping after the first stage with failed
/// tasks. The error carries the highest exit code among the failures.
pub fn run_command(config: RunConfig, command: &str) -> Result<Manifest> {
    let stages = stages_for(command).ok_or_else(|| CliError::Config(format!("unknown command `{command}`")))?;
    let ctx = Context::new(config)?;
    linalg::pin_sequential();
    std::fs::create_dir_all(&ctx.out).map_err(|e| CliError::io(&ctx.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", ctx.config.workers)))?;
    let mut manifest = Manifest::load_or_new(&ctx.out, &ctx.config)?;
    for &stage in stages {
        let record = run_stage(&ctx, &pool, &mut manifest, stage)?;
        if !record.failures.is_empty() {
            for f in &record.failures {
                log::error!("{}: {} (exit {})", f.task, f.message, f.code);
            }
            return Err(CliError::Tasks {
                failed: record.failures.len(),
                total: record.tasks,
                code: record.failures.iter().map(|f| f.code).max().unwrap_or(3),
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_even_and_odd_counts() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn every_command_has_stages() {
        for c in ["build", "evolve", "kernel", "fit", "recurrence", "report", "sweep", "nsweep"] {
            assert!(stages_for(c).is_some(), "{c}");
        }
        assert!(stages_for("plot").is_none());
    }

    #[test]
    fn tailoring_error_of_the_exact_curve_is_zero() {
        let grid = TimeGrid::spanning(0.1, 60.0).unwrap();
        let t = TargetDynamics::gaussian(15.0);
        let c = TimeSeries::from_fn(grid, |x| t.evaluate(x).unwrap());
        assert_eq!(tailoring_error(&c, &t, 45.0).unwrap(), 0.0);
    }
}
