//! `report.json`: headline statistics of a completed run, aggregated over
//! seeds.

use relaxstab::fitting::BetaRow;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layout;
use crate::pipeline::{
    median, tailoring_error, CalibrationTable, CellSummary, Context, FitsSummary, KernelSummary, ModelSidecar,
    RecurrenceSummary,
};

/// One statistic per seed for a target (and band width), with its median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu: Option<f64>,
    pub values: Vec<f64>,
    pub median: f64,
}

impl Stat {
    fn new(target: &str, mu: Option<f64>, values: Vec<f64>) -> Self {
        let median = median(&mut values.clone());
        Self { target: target.to_string(), mu, values, median }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub dimension: usize,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub mu_list: Vec<f64>,
    pub targets: Vec<String>,
    /// `max |C(t) - g(t)|` over `[0, 3τ]`, per target.
    pub tailoring: Vec<Stat>,
    /// Kolmogorov distance to the moment-matched semicircle, per target.
    pub semicircle: Vec<Stat>,
    pub semicircle_unit_radius: Vec<Stat>,
    /// Fitted decay rate of `F(t)`, per cell.
    pub fidelity_rate: Vec<Stat>,
    pub fidelity_rate_median: f64,
    /// Largest kernel round-trip residual over every series.
    pub kernel_round_trip_max: f64,
    pub alpha: f64,
    pub fit_window: (f64, f64),
    /// RMS of prediction minus measurement over the fit window, per cell.
    pub heuristic_rms: Vec<Stat>,
    /// `max |ã(t) - a(t)|` over the fit window, per cell.
    pub deviation: Vec<Stat>,
    pub beta: Vec<Stat>,
    pub beta_target: String,
    pub beta_curve: Vec<BetaRow>,
    pub recurrence: RecurrenceSummary,
    pub calibration: Option<CalibrationTable>,
}

impl Report {
    pub fn find<'a>(stats: &'a [Stat], target: &str, mu: Option<f64>) -> Option<&'a Stat> {
        stats.iter().find(|s| s.target == target && s.mu == mu)
    }
}

pub fn inputs(ctx: &Context) -> Vec<String> {
    let c = &ctx.config;
    let mut v = Vec::new();
    for t in c.targets() {
        for &s in &c.seeds {
            v.push(layout::model_sidecar(t.name(), s));
            v.push(layout::unperturbed(t.name(), s));
            v.push(layout::kernel_json(t.name(), s));
            for &mu in &c.mu_list {
                v.push(layout::perturbed(t.name(), mu, s));
                v.push(layout::cell_summary(t.name(), mu, s));
            }
        }
    }
    v.push(layout::FITS_JSON.to_string());
    v.push(layout::RECURRENCE_JSON.to_string());
    if c.epsilon > 0.0 {
        v.push(layout::CALIBRATION_JSON.to_string());
    }
    v
}

pub fn compute(ctx: &Context) -> Result<Report> {
    let c = &ctx.config;
    let fits: FitsSummary = ctx.read_json(layout::FITS_JSON)?;
    let window = c.fit_window();
    let mut r = Report {
        dimension: c.dimension,
        epsilon: c.epsilon,
        seeds: c.seeds.clone(),
        mu_list: c.mu_list.clone(),
        targets: c.targets().iter().map(|t| t.name().to_string()).collect(),
        tailoring: vec![],
        semicircle: vec![],
        semicircle_unit_radius: vec![],
        fidelity_rate: vec![],
        fidelity_rate_median: f64::NAN,
        kernel_round_trip_max: 0.0,
        alpha: fits.alpha,
        fit_window: window,
        heuristic_rms: vec![],
        deviation: vec![],
        beta: vec![],
        beta_target: fits.beta_target.clone(),
        beta_curve: vec![],
        recurrence: ctx.read_json(layout::RECURRENCE_JSON)?,
        calibration: if c.epsilon > 0.0 { Some(ctx.read_json(layout::CALIBRATION_JSON)?) } else { None },
    };
    for target in c.targets() {
        let name = target.name();
        let mut tailoring = Vec::new();
        let mut ks = Vec::new();
        let mut ks_unit = Vec::new();
        let mut a_series = Vec::new();
        for &s in &c.seeds {
            let a = ctx.read_series(&layout::unperturbed(name, s))?;
            tailoring.push(tailoring_error(&a, &target, 3.0 * target.tau())?);
            let sc: ModelSidecar = ctx.read_json(&layout::model_sidecar(name, s))?;
            ks.push(sc.spectral.kolmogorov_distance);
            ks_unit.push(sc.spectral.unit_radius_distance);
            let k: KernelSummary = ctx.read_json(&layout::kernel_json(name, s))?;
            for v in k.round_trip.values() {
                r.kernel_round_trip_max = r.kernel_round_trip_max.max(*v);
            }
            a_series.push(a);
        }
        r.tailoring.push(Stat::new(name, None, tailoring));
        r.semicircle.push(Stat::new(name, None, ks));
        r.semicircle_unit_radius.push(Stat::new(name, None, ks_unit));
        for &mu in &c.mu_list {
            let mut rates = Vec::new();
            let mut deviation = Vec::new();
            for (&s, a) in c.seeds.iter().zip(&a_series) {
                let cell: CellSummary = ctx.read_json(&layout::cell_summary(name, mu, s))?;
                rates.push(cell.evolution.fidelity_rate);
                let at = ctx.read_series(&layout::perturbed(name, mu, s))?;
                at.check_same_grid(a)?;
                let d = a.grid.window(window.0, window.1).map(|i| (at.values[i] - a.values[i]).abs()).fold(0.0, f64::max);
                deviation.push(d);
            }
            r.fidelity_rate.push(Stat::new(name, Some(mu), rates));
            r.deviation.push(Stat::new(name, Some(mu), deviation));
            let of: Vec<_> = fits.cells.iter().filter(|f| f.target == name && f.mu == mu).collect();
            r.heuristic_rms.push(Stat::new(name, Some(mu), of.iter().map(|f| f.fit.rms_residual).collect()));
            r.beta.push(Stat::new(name, Some(mu), of.iter().map(|f| f.fit.params.beta).collect()));
        }
    }
    let mut cell_medians: Vec<f64> = r.fidelity_rate.iter().map(|s| s.median).collect();
    r.fidelity_rate_median = median(&mut cell_medians);
    r.beta_curve = c
        .mu_list
        .iter()
        .map(|&mu| {
            let beta = Report::find(&r.beta, &fits.beta_target, Some(mu)).map_or(f64::NAN, |s| s.median);
            let rms = Report::find(&r.heuristic_rms, &fits.beta_target, Some(mu)).map_or(f64::NAN, |s| s.median);
            BetaRow { mu, beta, rms }
        })
        .collect();
    Ok(r)
}
