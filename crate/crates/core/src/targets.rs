//! Prescribed relaxation functions `g(t)` and their power spectra.
//!
//! The four closed-form shapes all share one time scale `tau`: they fall to
//! one half at `t = tau` (the damped oscillation instead has its first
//! maximum there). The recurrence shape adds a single late revival at
//! `recurrence_time`. Spectra use the convention
//! `f²(ω) = ∫ g(t) e^{-iωt} dt`, so `g(t) = (1/2π) ∫ f²(ω) cos(ωt) dω`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prescribed autocorrelation shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum TargetDynamics {
    /// `exp(-ln2 |t| / tau)`
    Exponential { tau: f64 },
    /// `cos(2π t / tau) exp(-|t| / (2 tau))`
    #[serde(alias = "oscillation")]
    DampedOscillation { tau: f64 },
    /// `1 - |t| / (2 tau)` inside `|t| <= 2 tau`, zero outside.
    Linear { tau: f64 },
    /// `exp(-ln2 t² / tau²)`
    Gaussian { tau: f64 },
    /// `exp(-|t| / tau) + ½ exp(-||t| - T| / tau)` with `T = recurrence_time`.
    Recurrence { tau: f64, recurrence_time: f64 },
    /// Linear interpolation through `(t, g)` pairs starting at `t = 0`,
    /// extended evenly to negative times.
    Tabulated { table: Vec<(f64, f64)> },
}

impl TargetDynamics {
    pub fn exponential(tau: f64) -> Self {
        Self::Exponential { tau }
    }

    pub fn damped_oscillation(tau: f64) -> Self {
        Self::DampedOscillation { tau }
    }

    pub fn linear(tau: f64) -> Self {
        Self::Linear { tau }
    }

    pub fn gaussian(tau: f64) -> Self {
        Self::Gaussian { tau }
    }

    pub fn recurrence(tau: f64, recurrence_time: f64) -> Self {
        Self::Recurrence { tau, recurrence_time }
    }

    /// The four closed-form shapes, in the order used for reports.
    pub fn table_one(tau: f64) -> [Self; 4] {
        [
            Self::exponential(tau),
            Self::damped_oscillation(tau),
            Self::linear(tau),
            Self::gaussian(tau),
        ]
    }

    /// Build a closed-form or recurrence target from its short name.
    pub fn from_name(name: &str, tau: f64) -> Result<Self> {
        let target = match name {
            "exponential" | "exp" => Self::exponential(tau),
            "damped_oscillation" | "oscillation" | "osc" => Self::damped_oscillation(tau),
            "linear" | "lin" => Self::linear(tau),
            "gaussian" | "gauss" => Self::gaussian(tau),
            "recurrence" => Self::recurrence(tau, 10.0 * tau),
            other => return Err(Error::domain(format!("unknown target `{other}`"))),
        };
        target.validate()?;
        Ok(target)
    }

    /// Short label used in file names.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::DampedOscillation { .. } => "oscillation",
            Self::Linear { .. } => "linear",
            Self::Gaussian { .. } => "gaussian",
            Self::Recurrence { .. } => "recurrence",
            Self::Tabulated { .. } => "tabulated",
        }
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(
            self,
            Self::Exponential { .. } | Self::DampedOscillation { .. } | Self::Linear { .. } | Self::Gaussian { .. }
        )
    }

    /// Characteristic time; for tables the time at which `g` first drops to
    /// half its initial value (or the table end).
    pub fn tau(&self) -> f64 {
        match self {
            Self::Exponential { tau }
            | Self::DampedOscillation { tau }
            | Self::Linear { tau }
            | Self::Gaussian { tau }
            | Self::Recurrence { tau, .. } => *tau,
            Self::Tabulated { table } => {
                let g0 = table[0].1;
                table
                    .iter()
                    .find(|(_, g)| g.abs() <= 0.5 * g0.abs())
                    .or(table.last())
                    .map(|(t, _)| *t)
                    .unwrap_or(1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_tau = |tau: f64| {
            if tau > 0.0 && tau.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("tau must be positive and finite, got {tau}")))
            }
        };
        match self {
            Self::Exponential { tau }
            | Self::DampedOscillation { tau }
            | Self::Linear { tau }
            | Self::Gaussian { tau } => check_tau(*tau),
            Self::Recurrence { tau, recurrence_time } => {
                check_tau(*tau)?;
                if !(recurrence_time.is_finite() && *recurrence_time >= 3.0 * tau) {
                    return Err(Error::domain(format!(
                        "recurrence time {recurrence_time} must be at least 3 tau = {}",
                        3.0 * tau
                    )));
                }
                Ok(())
            }
            Self::Tabulated { table } => {
                if table.len() < 2 {
                    return Err(Error::domain("a tabulated target needs at least two points"));
                }
                if table[0].0 != 0.0 {
                    return Err(Error::domain("a tabulated target must start at t = 0"));
                }
                if table.iter().any(|(t, g)| !t.is_finite() || !g.is_finite()) {
                    return Err(Error::domain("tabulated target holds non-finite entries"));
                }
                if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::domain("tabulated times must increase strictly"));
                }
                Ok(())
            }
        }
    }

    /// `g(t)`; every shape is even in `t`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::domain(format!("cannot evaluate the target at t = {t}")));
        }
        let s = t.abs();
        let value = match self {
            Self::Exponential { tau } => (-LN_2 / tau * s).exp(),
            Self::DampedOscillation { tau } => (2.0 * PI / tau * s).cos() * (-s / (2.0 * tau)).exp(),
            Self::Linear { tau } => {
                if s <= 2.0 * tau {
                    1.0 - s / (2.0 * tau)
                } else {
                    0.0
                }
            }
            Self::Gaussian { tau } => (-LN_2 / (tau * tau) * s * s).exp(),
            Self::Recurrence { tau, recurrence_time } => {
                (-s / tau).exp() + 0.5 * (-(s - recurrence_time).abs() / tau).exp()
            }
            Self::Tabulated { table } => interpolate_table(table, s)?,
        };
        Ok(value)
    }

    /// Analytic power spectrum for the closed-form shapes.
    pub fn spectral_density(&self, omega: f64) -> Option<f64> {
        let w = omega.abs();
        match self {
            Self::Exponential { tau } => {
                let lambda = LN_2 / tau;
                Some(2.0 * lambda / (lambda * lambda + w * w))
            }
            Self::DampedOscillation { tau } => {
                let gamma = 1.0 / (2.0 * tau);
                let w0 = 2.0 * PI / tau;
                let lorentz = |x: f64| gamma / (gamma * gamma + x * x);
                Some(lorentz(w - w0) + lorentz(w + w0))
            }
            Self::Linear { tau } => {
                let x = w * tau;
                let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
                Some(2.0 * tau * sinc * sinc)
            }
            Self::Gaussian { tau } => {
                let c = LN_2 / (tau * tau);
                Some((PI / c).sqrt() * (-w * w / (4.0 * c)).exp())
            }
            Self::Recurrence { .. } | Self::Tabulated { .. } => None,
        }
    }
}

fn interpolate_table(table: &[(f64, f64)], s: f64) -> Result<f64> {
    let last = table[table.len() - 1].0;
    if s > last {
        return Err(Error::Range(format!("t = {s} lies outside the tabulated range [0, {last}]")));
    }
    let idx = table.partition_point(|(t, _)| *t <= s).clamp(1, table.len() - 1);
    let (t0, g0) = table[idx - 1];
    let (t1, g1) = table[idx];
    Ok(g0 + (g1 - g0) * (s - t0) / (t1 - t0))
}

/// Sampled power spectrum `f²(ω)` on the symmetric grid
/// `ω_k = (k - n_bins/2) Δω`, `k = 0..=n_bins`, `Δω = 2 omega_max / n_bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEnvelope {
    pub omega_max: f64,
    pub n_bins: usize,
    pub values: Vec<f64>,
    /// Most negative sample of the raw transform before clipping.
    pub min_before_clip: f64,
    /// Clipped (negative) mass relative to the total absolute mass.
    pub clipped_fraction: f64,
    /// Set when the raw transform dipped below `-1e-3 × peak`.
    pub warning: Option<String>,
}

/// Default frequency cutoff, half the span of the unperturbed spectrum.
pub const DEFAULT_OMEGA_MAX: f64 = 30.0;
pub const DEFAULT_ENVELOPE_BINS: usize = 8192;
const CLIP_TOLERANCE: f64 = 1e-3;

impl SpectralEnvelope {
    pub fn step(&self) -> f64 {
        2.0 * self.omega_max / self.n_bins as f64
    }

    pub fn omega(&self, k: usize) -> f64 {
        (k as f64 - self.n_bins as f64 / 2.0) * self.step()
    }

    pub fn omegas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_bins).map(|k| self.omega(k))
    }

    /// Linear interpolation on the grid, zero outside `[-omega_max, omega_max]`.
    pub fn value_at(&self, omega: f64) -> f64 {
        let x = omega / self.step() + self.n_bins as f64 / 2.0;
        if !(0.0..=self.n_bins as f64).contains(&x) {
            return 0.0;
        }
        let k = (x.floor() as usize).min(self.n_bins - 1);
        let frac = x - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    /// `(1/2π) ∫ f²(ω) cos(ωt) dω` by the trapezoid rule over the grid.
    pub fn inverse_transform(&self, t: f64) -> f64 {
        let n = self.n_bins;
        let sum: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * v * (self.omega(k) * t).cos()
            })
            .sum();
        sum * self.step() / (2.0 * PI)
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Power spectrum of `target` sampled on `n_bins` intervals across
/// `[-omega_max, omega_max]`.
///
/// Closed-form shapes are sampled analytically; the recurrence and tabulated
/// shapes go through an exact transform of their piecewise-linear
/// interpolant, after which negative samples are clipped to zero.
pub fn envelope_for(target: &TargetDynamics, omega_max: f64, n_bins: usize) -> Result<SpectralEnvelope> {
    target.validate()?;
    if !(omega_max > 0.0 && omega_max.is_finite()) {
        return Err(Error::domain(format!("omega_max must be positive, got {omega_max}")));
    }
    if n_bins < 64 {
        return Err(Error::domain(format!("need at least 64 frequency bins, got {n_bins}")));
    }
    let mut env = SpectralEnvelope {
        omega_max,
        n_bins,
        values: vec![0.0; n_bins + 1],
        min_before_clip: 0.0,
        clipped_fraction: 0.0,
        warning: None,
    };
    // Fill the non-negative half and mirror so evenness holds bit for bit.
    let half = n_bins / 2;
    let raw: Vec<f64> = match target {
        t if t.is_closed_form() => (half..=n_bins)
            .map(|k| t.spectral_density(env.omega(k)).expect("closed form"))
            .collect(),
        _ => {
            let samples = HatSamples::for_target(target)?;
            (half..=n_bins).map(|k| samples.cosine_transform(env.omega(k))).collect()
        }
    };
    for (i, v) in raw.iter().enumerate() {
        env.values[half + i] = *v;
        env.values[n_bins - half - i] = *v;
    }

    let peak = env.values.iter().copied().fold(f64::MIN, f64::max);
    let min = env.values.iter().copied().fold(f64::MAX, f64::min);
    env.min_before_clip = min;
    if min < 0.0 {
        let negative: f64 = env.values.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
        let total: f64 = env.values.iter().map(|v| v.abs()).sum();
        env.clipped_fraction = negative / total;
        if min < -CLIP_TOLERANCE * peak {
            env.warning = Some(format!(
                "transform of `{}` reached {min:.3e} (peak {peak:.3e}); target is not positive definite",
                target.name()
            ));
        }
        env.values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(env)
}

/// Uniform samples of an even function whose piecewise-linear interpolant is
/// transformed exactly: the transform of a hat of width `h` is
/// `h sinc²(ωh/2)`, so `F(ω) = h sinc²(ωh/2) [g₀ + 2 Σ_k g_k cos(ω k h)]`.
struct HatSamples {
    h: f64,
    values: Vec<f64>,
}

impl HatSamples {
    fn for_target(target: &TargetDynamics) -> Result<Self> {
        let (h, support) = match target {
            TargetDynamics::Recurrence { tau, recurrence_time } => {
                // Keep a node exactly on the cusp at t = T.
                let per_tau = 200.0;
                let steps_to_t = (recurrence_time / tau * per_tau).ceil();
                let h = recurrence_time / steps_to_t;
                (h, recurrence_time + 40.0 * tau)
            }
            TargetDynamics::Tabulated { table } => {
                let end = table[table.len() - 1].0;
                let min_gap = table.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::MAX, f64::min);
                let h = (min_gap / 4.0).max(end / 200_000.0);
                (h, end)
            }
            _ => unreachable!("closed forms are sampled analytically"),
        };
        let n = (support / h).floor() as usize + 1;
        let values = (0..n)
            .map(|k| target.evaluate((k as f64 * h).min(support)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { h, values })
    }

    fn cosine_transform(&self, omega: f64) -> f64 {
        let x = 0.5 * omega * self.h;
        let sinc = if x.abs() < 1e-8 { 1.0 } else { x.sin() / x };
        let sum: f64 = self
            .values
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, g)| g * (omega * self.h * k as f64).cos())
            .sum();
        self.h * sinc * sinc * (self.values[0] + 2.0 * sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = 15.0;

    #[test]
    fn exponential_halves_at_tau() {
        let g = TargetDynamics::exponential(TAU);
        assert!((g.evaluate(15.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_start_at_one() {
        for g in TargetDynamics::table_one(TAU) {
            assert_eq!(g.evaluate(0.0).unwrap(), 1.0, "{}", g.name());
        }
    }

    #[test]
    fn linear_vanishes_beyond_two_tau() {
        let g = TargetDynamics::linear(TAU);
        assert_eq!(g.evaluate(40.0).unwrap(), 0.0);
        assert!((g.evaluate(15.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_halves_at_tau_and_oscillation_peaks_there() {
        assert!((TargetDynamics::gaussian(TAU).evaluate(TAU).unwrap() - 0.5).abs() < 1e-15);
        let osc = TargetDynamics::damped_oscillation(TAU);
        let expected = (-0.5f64).exp();
        assert!((osc.evaluate(TAU).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn recurrence_value_at_the_revival() {
        let g = TargetDynamics::recurrence(2.0, 20.0);
        let expected = 0.5 + (-10.0f64).exp();
        assert!((g.evaluate(20.0).unwrap() - expected).abs() < 1e-15);
        assert_eq!(g.evaluate(-20.0).unwrap(), g.evaluate(20.0).unwrap());
    }

    #[test]
    fn recurrence_must_be_late_enough() {
        let g = TargetDynamics::recurrence(2.0, 5.0);
        assert!(matches!(g.validate(), Err(Error::Domain(_))));
        assert!(envelope_for(&g, 30.0, 256).is_err());
    }

    #[test]
    fn non_finite_time_is_a_domain_error() {
        let g = TargetDynamics::gaussian(TAU);
        assert!(matches!(g.evaluate(f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(g.evaluate(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn tabulated_interpolates_and_rejects_out_of_range() {
        let g = TargetDynamics::Tabulated { table: vec![(0.0, 1.0), (1.0, 0.5), (3.0, 0.0)] };
        g.validate().unwrap();
        assert!((g.evaluate(0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!((g.evaluate(-2.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(g.evaluate(3.5), Err(Error::Range(_))));
    }

    #[test]
    fn tabulated_validation() {
        let bad_start = TargetDynamics::Tabulated { table: vec![(0.5, 1.0), (1.0, 0.0)] };
        assert!(bad_start.validate().is_err());
        let unsorted = TargetDynamics::Tabulated { table: vec![(0.0, 1.0), (2.0, 0.5), (1.0, 0.0)] };
        assert!(unsorted.validate().is_err());
    }

    #[test]
    fn lorentzian_ratio_at_its_half_width() {
        let env = envelope_for(&TargetDynamics::exponential(TAU), 30.0, 8192).unwrap();
        let lambda = LN_2 / TAU;
        // ω = 0 is a grid point; ω = λ is interpolated, with relative error
        // about h²/(8λ²) ≈ 3e-3 for the default step h = 60/8192.
        let ratio = env.value_at(0.0) / env.value_at(lambda);
        assert!((ratio - 2.0).abs() < 1e-2, "ratio {ratio}");
        let g = TargetDynamics::exponential(TAU);
        let exact = g.spectral_density(0.0).unwrap() / g.spectral_density(lambda).unwrap();
        assert!((exact - 2.0).abs() < 1e-14);
    }

    #[test]
    fn triangle_spectrum_has_zero_at_pi_over_tau() {
        let g = TargetDynamics::linear(TAU);
        assert!(g.spectral_density(PI / TAU).unwrap() < 1e-28);
    }

    #[test]
    fn envelopes_are_even_and_non_negative() {
        for g in TargetDynamics::table_one(TAU)
            .into_iter()
            .chain([TargetDynamics::recurrence(2.0, 20.0)])
        {
            let env = envelope_for(&g, 30.0, 1024).unwrap();
            for k in 0..=env.n_bins {
                assert_eq!(env.values[k], env.values[env.n_bins - k], "{}", g.name());
                assert!(env.values[k] >= 0.0);
            }
            if g.is_closed_form() {
                assert!(env.warning.is_none());
                assert!(env.clipped_fraction <= 1e-3);
            }
        }
    }

    #[test]
    fn envelope_rejects_bad_grids() {
        let g = TargetDynamics::gaussian(TAU);
        assert!(envelope_for(&g, 0.0, 8192).is_err());
        assert!(envelope_for(&g, 30.0, 32).is_err());
    }

    #[test]
    fn inverse_transform_reproduces_closed_forms() {
        let omega_max = 20.0 * 2.0 * PI / TAU;
        for g in TargetDynamics::table_one(TAU) {
            let env = envelope_for(&g, omega_max, 4096).unwrap();
            let err = (0..=600)
                .map(|i| i as f64 * 0.1)
                .map(|t| (env.inverse_transform(t) - g.evaluate(t).unwrap()).abs())
                .fold(0.0, f64::max);
            assert!(err <= 0.01, "{}: inverse transform error {err}", g.name());
        }
    }

    #[test]
    fn numerical_transform_matches_closed_form() {
        // A table sampled from the Gaussian shape goes through the numerical route.
        let g = TargetDynamics::gaussian(TAU);
        let table: Vec<(f64, f64)> = (0..=2000).map(|i| i as f64 * 0.05).map(|t| (t, g.evaluate(t).unwrap())).collect();
        let tab = TargetDynamics::Tabulated { table };
        let num = envelope_for(&tab, 2.0, 256).unwrap();
        let exact = envelope_for(&g, 2.0, 256).unwrap();
        let peak = exact.peak();
        for (a, b) in num.values.iter().zip(&exact.values) {
            assert!((a - b).abs() <= 1e-4 * peak, "{a} vs {b}");
        }
    }

    #[test]
    fn recurrence_spectrum_inverts_to_its_shape() {
        let g = TargetDynamics::recurrence(2.0, 20.0);
        let env = envelope_for(&g, 60.0, 16384).unwrap();
        for t in [0.5, 2.0, 10.0, 19.0, 20.0, 22.0, 30.0] {
            let err = (env.inverse_transform(t) - g.evaluate(t).unwrap()).abs();
            assert!(err < 0.02, "t = {t}: error {err}");
        }
    }

    #[test]
    fn targets_parse_from_config_json() {
        let g: TargetDynamics = serde_json::from_str(r#"{"target": "exponential", "tau": 15.0}"#).unwrap();
        assert_eq!(g, TargetDynamics::exponential(15.0));
        let r: TargetDynamics =
            serde_json::from_str(r#"{"target": "recurrence", "tau": 2.0, "recurrence_time": 20.0}"#).unwrap();
        assert_eq!(r, TargetDynamics::recurrence(2.0, 20.0));
        let o: TargetDynamics = serde_json::from_str(r#"{"target": "oscillation", "tau": 15.0}"#).unwrap();
        assert_eq!(o, TargetDynamics::damped_oscillation(15.0));
    }

    proptest::proptest! {
        #[test]
        fn closed_forms_are_even(t in -200.0f64..200.0, k in 0usize..4) {
            let g = &TargetDynamics::table_one(TAU)[k];
            proptest::prop_assert_eq!(g.evaluate(t).unwrap(), g.evaluate(-t).unwrap());
        }
    }
}
