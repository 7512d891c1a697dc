//! Estimation of the heuristic parameters `(α, β)` from pairs of unperturbed
//! and perturbed dynamics.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memkernel::{HeuristicModel, HeuristicParams};
use crate::series::TimeSeries;

pub const ALPHA_MAX: f64 = 0.1;
pub const ALPHA_STEP: f64 = 0.002;
pub const BETA_STEP: f64 = 0.02;

/// Residuals this close to the optimum count as equally good when deciding
/// whether the landscape is flat.
const FLAT_ABS: f64 = 1e-4;
const FLAT_REL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HeuristicParams,
    pub rms_residual: f64,
    pub window: (f64, f64),
    /// The near-optimal set spans more than five `α` steps or ten `β`
    /// steps, so at least one parameter is not identified by the data.
    pub degenerate: bool,
    /// The simplex refinement failed or did not improve on the grid optimum;
    /// `params` is then the grid optimum.
    pub refinement_failed: bool,
}

/// Prediction residual for one pair over a fixed window.
struct Objective<'a> {
    model: HeuristicModel,
    target: &'a TimeSeries,
    range: std::ops::Range<usize>,
}

impl Objective<'_> {
    fn rms(&self, params: HeuristicParams) -> Result<f64> {
        let p = self.model.predict(params)?;
        let sum: f64 = self.range.clone().map(|i| (p.values[i] - self.target.values[i]).powi(2)).sum();
        Ok((sum / self.range.len() as f64).sqrt())
    }
}

/// Simplex objective over the free parameters. Points outside the bounds are
/// evaluated at the nearest admissible point plus a penalty growing with the
/// distance, which keeps the simplex inside without hard walls.
struct Simplex<'a> {
    objective: &'a Objective<'a>,
    free: Free,
}

/// Which parameters the fit may move.
#[derive(Debug, Clone, Copy)]
enum Free {
    Both,
    Beta { alpha: f64 },
    Alpha { beta: f64 },
}

impl Simplex<'_> {
    fn params(&self, x: &[f64]) -> (HeuristicParams, f64) {
        let (alpha, beta) = match self.free {
            Free::Both => (x[0], x[1]),
            Free::Beta { alpha } => (alpha, x[0]),
            Free::Alpha { beta } => (x[0], beta),
        };
        let ca = alpha.max(0.0);
        let cb = beta.clamp(0.0, 1.0);
        let outside = (ca - alpha).abs() / ALPHA_STEP + (cb - beta).abs() / BETA_STEP;
        (HeuristicParams { alpha: ca, beta: cb }, outside)
    }
}

impl CostFunction for Simplex<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let (params, outside) = self.params(x);
        let rms = self.objective.rms(params).map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        Ok(rms + outside * 1e-3)
    }
}

fn check_pair(a: &TimeSeries, a_tilde: &TimeSeries) -> Result<()> {
    if !a.grid.same_as(&a_tilde.grid) || a.len() != a_tilde.len() {
        return Err(Error::domain("unperturbed and perturbed series are on different grids"));
    }
    for (name, s) in [("a", a), ("a_tilde", a_tilde)] {
        if (s.values[0] - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("{name}(0) = {} but must be 1", s.values[0])));
        }
    }
    Ok(())
}

fn objective<'a>(a: &TimeSeries, a_tilde: &'a TimeSeries, window: (f64, f64)) -> Result<Objective<'a>> {
    check_pair(a, a_tilde)?;
    let (lo, hi) = window;
    if !(lo >= 0.0 && hi > lo) || hi > a.grid.t_max() + 1e-9 * a.grid.dt {
        return Err(Error::domain(format!(
            "fit window [{lo}, {hi}] must lie inside [0, {}]",
            a.grid.t_max()
        )));
    }
    let range = a.grid.window(lo, hi);
    if range.is_empty() {
        return Err(Error::domain("fit window contains no grid points"));
    }
    // Predictions only need to reach the end of the window.
    let model = HeuristicModel::new(&a.truncated(range.end)?)?;
    Ok(Objective { model, target: a_tilde, range })
}

fn axis(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Fit `(α, β)` so that the heuristic prediction from `a` matches `a_tilde`
/// over `window`; with `fix_alpha` only `β` is fit.
pub fn fit_params(a: &TimeSeries, a_tilde: &TimeSeries, fix_alpha: Option<f64>, window: (f64, f64)) -> Result<FitResult> {
    let free = match fix_alpha {
        Some(alpha) => {
            HeuristicParams::new(alpha, 0.0)?;
            Free::Beta { alpha }
        }
        None => Free::Both,
    };
    fit(a, a_tilde, free, window)
}

/// Fit `α` alone with `β` held fixed (used at `μ = 2`, where `β = 1`).
pub fn fit_alpha(a: &TimeSeries, a_tilde: &TimeSeries, beta: f64, window: (f64, f64)) -> Result<FitResult> {
    HeuristicParams::new(0.0, beta)?;
    fit(a, a_tilde, Free::Alpha { beta }, window)
}

fn fit(a: &TimeSeries, a_tilde: &TimeSeries, free: Free, window: (f64, f64)) -> Result<FitResult> {
    let obj = objective(a, a_tilde, window)?;
    let (alphas, betas) = match free {
        Free::Both => (axis(ALPHA_MAX, ALPHA_STEP), axis(1.0, BETA_STEP)),
        Free::Beta { alpha } => (vec![alpha], axis(1.0, BETA_STEP)),
        Free::Alpha { beta } => (axis(ALPHA_MAX, ALPHA_STEP), vec![beta]),
    };

    let mut table = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in &alphas {
        for &beta in &betas {
            table.push((alpha, beta, obj.rms(HeuristicParams { alpha, beta })?));
        }
    }
    let &(ga, gb, grms) = table.iter().min_by(|x, y| x.2.total_cmp(&y.2)).expect("non-empty grid");

    let tol = grms + FLAT_ABS.max(FLAT_REL * grms);
    let near: Vec<_> = table.iter().filter(|r| r.2 <= tol).collect();
    let span = |f: fn(&&(f64, f64, f64)) -> f64| {
        let lo = near.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = near.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let degenerate = span(|r| r.0) > 5.0 * ALPHA_STEP + 1e-12 || span(|r| r.1) > 10.0 * BETA_STEP + 1e-12;

    let grid_best = FitResult {
        params: HeuristicParams { alpha: ga, beta: gb },
        rms_residual: grms,
        window,
        degenerate,
        refinement_failed: false,
    };
    if grms == 0.0 {
        return Ok(grid_best);
    }

    let start = match free {
        Free::Both => vec![vec![ga, gb], vec![ga + 0.5 * ALPHA_STEP, gb], vec![ga, gb + 0.5 * BETA_STEP]],
        Free::Beta { .. } => vec![vec![gb], vec![gb + 0.5 * BETA_STEP]],
        Free::Alpha { .. } => vec![vec![ga], vec![ga + 0.5 * ALPHA_STEP]],
    };
    let refined = NelderMead::new(start)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::numeric(e.to_string()))
        .and_then(|solver| {
            Executor::new(Simplex { objective: &obj, free }, solver)
                .configure(|s| s.max_iters(300))
                .run()
                .map_err(|e| Error::numeric(e.to_string()))
        });
    let best = refined.ok().and_then(|res| {
        let x = res.state().get_best_param()?.clone();
        let (params, _) = Simplex { objective: &obj, free }.params(&x);
        let rms = obj.rms(params).ok()?;
        (rms <= grms).then_some((params, rms))
    });
    Ok(match best {
        Some((params, rms)) => FitResult { params, rms_residual: rms, ..grid_best },
        None => FitResult { refinement_failed: true, ..grid_best },
    })
}

/// RMS of `predict_perturbed(a, params) - a_tilde` over `window`.
pub fn prediction_rms(a: &TimeSeries, a_tilde: &TimeSeries, params: HeuristicParams, window: (f64, f64)) -> Result<f64> {
    objective(a, a_tilde, window)?.rms(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub mu: f64,
    pub beta: f64,
    pub rms: f64,
}

/// `β` fitted with `α` frozen, one row per `(μ, a, ã)` entry in input order.
pub fn beta_curve(pairs: &[(f64, &TimeSeries, &TimeSeries)], alpha: f64, window: (f64, f64)) -> Result<Vec<BetaRow>> {
    pairs
        .iter()
        .map(|&(mu, a, a_tilde)| {
            let fit = fit_params(a, a_tilde, Some(alpha), window)?;
            Ok(BetaRow { mu, beta: fit.params.beta, rms: fit.rms_residual })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memkernel::predict_perturbed;
    use crate::series::TimeGrid;
    use crate::targets::TargetDynamics;

    const WINDOW: (f64, f64) = (0.0, 60.0);

    fn sampled(target: &TargetDynamics) -> TimeSeries {
        let grid = TimeGrid::spanning(0.1, 90.0).unwrap();
        TimeSeries::from_fn(grid, |t| target.evaluate(t).unwrap())
    }

    #[test]
    fn unperturbed_pair_is_degenerate_with_zero_alpha() {
        let a = sampled(&TargetDynamics::gaussian(15.0));
        let fit = fit_params(&a, &a, None, WINDOW).unwrap();
        assert_eq!(fit.params.alpha, 0.0);
        assert_eq!(fit.rms_residual, 0.0);
        assert!(fit.degenerate);
    }

    #[test]
    fn exponential_damping_is_full_beta() {
        let a = sampled(&TargetDynamics::gaussian(15.0));
        let values = a.values.iter().enumerate().map(|(i, v)| v * (-0.027 * a.grid.time(i)).exp()).collect();
        let damped = TimeSeries::new(a.grid, values).unwrap();
        let fit = fit_params(&a, &damped, None, WINDOW).unwrap();
        assert!((fit.params.alpha - 0.027).abs() <= ALPHA_STEP, "{fit:?}");
        assert!(fit.params.beta >= 1.0 - BETA_STEP, "{fit:?}");
        assert!(!fit.degenerate);
    }

    #[test]
    fn synthetic_pairs_are_identifiable() {
        let truth = HeuristicParams::new(0.05, 0.3).unwrap();
        for target in [TargetDynamics::damped_oscillation(15.0), TargetDynamics::linear(15.0), TargetDynamics::gaussian(15.0)] {
            let a = sampled(&target);
            let a_tilde = predict_perturbed(&a, truth).unwrap();
            let fit = fit_params(&a, &a_tilde, None, WINDOW).unwrap();
            assert!((fit.params.alpha - 0.05).abs() <= 0.004, "{}: {fit:?}", target.name());
            assert!((fit.params.beta - 0.3).abs() <= 0.05, "{}: {fit:?}", target.name());
            assert!(!fit.degenerate, "{}", target.name());
        }
    }

    #[test]
    fn exponential_pairs_are_flagged_degenerate() {
        let a = sampled(&TargetDynamics::exponential(15.0));
        let a_tilde = predict_perturbed(&a, HeuristicParams::new(0.05, 0.3).unwrap()).unwrap();
        let fit = fit_params(&a, &a_tilde, None, WINDOW).unwrap();
        assert!(fit.degenerate, "{fit:?}");
        // Only the product is identified.
        assert!((fit.params.alpha * fit.params.beta - 0.015).abs() < 2e-3, "{fit:?}");
    }

    #[test]
    fn fixed_alpha_fits_beta_only() {
        let a = sampled(&TargetDynamics::gaussian(15.0));
        let a_tilde = predict_perturbed(&a, HeuristicParams::new(0.027, 0.6).unwrap()).unwrap();
        let fit = fit_params(&a, &a_tilde, Some(0.027), WINDOW).unwrap();
        assert_eq!(fit.params.alpha, 0.027);
        assert!((fit.params.beta - 0.6).abs() < 1e-3, "{fit:?}");
        assert!(fit.rms_residual < 1e-5);
    }

    #[test]
    fn alpha_alone_with_full_damping() {
        let a = sampled(&TargetDynamics::linear(15.0));
        let a_tilde = predict_perturbed(&a, HeuristicParams::new(0.031, 1.0).unwrap()).unwrap();
        let fit = fit_alpha(&a, &a_tilde, 1.0, WINDOW).unwrap();
        assert_eq!(fit.params.beta, 1.0);
        assert!((fit.params.alpha - 0.031).abs() < 1e-4, "{fit:?}");
        assert!(fit_alpha(&a, &a_tilde, 1.5, WINDOW).is_err());
    }

    #[test]
    fn mismatched_grids_are_domain_errors() {
        let a = sampled(&TargetDynamics::gaussian(15.0));
        let short = a.truncated(300).unwrap();
        assert!(matches!(fit_params(&a, &short, None, WINDOW), Err(Error::Domain(_))));
        let off = TimeSeries::from_fn(a.grid, |t| 0.5 + 0.0 * t);
        assert!(matches!(fit_params(&a, &off, None, WINDOW), Err(Error::Domain(_))));
        assert!(matches!(fit_params(&a, &a, None, (0.0, 200.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn single_mu_gives_a_single_row() {
        let a = sampled(&TargetDynamics::gaussian(15.0));
        let a_tilde = predict_perturbed(&a, HeuristicParams::new(0.027, 1.0).unwrap()).unwrap();
        let rows = beta_curve(&[(2.0, &a, &a_tilde)], 0.027, WINDOW).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mu, 2.0);
        assert!(rows[0].beta > 0.98);
    }
}
