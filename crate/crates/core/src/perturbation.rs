//! Banded random perturbations in the eigenbasis of the observable.
//!
//! `v_ij = σ u_ij Θ(μ - |a_i - a_j|)` with `u_ij ~ U(-1, 1)`, mirrored to the
//! lower triangle. The element scale `σ` is fixed after drawing so that
//! `‖V‖_HS = ε ‖H₀‖_HS` holds exactly for the realization.

use std::f64::consts::PI;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{semicircle_cdf, TailoredModel};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.029;
pub const DEFAULT_MU_GRID: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub mu: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// `V` in the eigenbasis of `A`.
    pub v_matrix: Mat<f64>,
    pub seed: u64,
}

impl Perturbation {
    pub fn dimension(&self) -> usize {
        self.v_matrix.nrows()
    }

    /// Zero perturbation of the given size.
    pub fn zero(n: usize) -> Self {
        Self { mu: 2.0, epsilon: 0.0, sigma: 0.0, v_matrix: Mat::zeros(n, n), seed: 0 }
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu <= 2.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("band width mu must lie in (0, 2], got {mu}")))
    }
}

/// Draw a banded perturbation for `model` and scale it to relative strength
/// `epsilon`.
pub fn build_perturbation(model: &TailoredModel, mu: f64, epsilon: f64, seed: u64) -> Result<Perturbation> {
    check_mu(mu)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("strength epsilon must be positive, got {epsilon}")));
    }
    let a = &model.a_eigenvalues;
    let n = a.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v = Mat::<f64>::zeros(n, n);
    let mut norm_sq = 0.0;
    for i in 0..n {
        for j in i..n {
            // Every pair consumes a draw so that band widths share one stream.
            let u: f64 = rng.random_range(-1.0..=1.0);
            if (a[i] - a[j]).abs() <= mu {
                v[(i, j)] = u;
                v[(j, i)] = u;
                norm_sq += if i == j { u * u } else { 2.0 * u * u };
            }
        }
    }
    if !(norm_sq > 0.0) {
        return Err(Error::numeric("perturbation drew an all-zero matrix"));
    }
    let sigma = epsilon * model.spectrum.hilbert_schmidt_norm() / norm_sq.sqrt();
    for j in 0..n {
        for i in 0..n {
            v[(i, j)] *= sigma;
        }
    }
    Ok(Perturbation { mu, epsilon, sigma, v_matrix: v, seed })
}

/// `‖[V, A]‖_HS`, evaluated in the eigenbasis of `A` where
/// `[V, A]_ij = v_ij (a_j - a_i)`.
pub fn commutator_norm(model: &TailoredModel, perturbation: &Perturbation) -> f64 {
    let a = &model.a_eigenvalues;
    let v = &perturbation.v_matrix;
    let mut sum = 0.0;
    for j in 0..a.len() {
        for i in 0..a.len() {
            let c = v[(i, j)] * (a[j] - a[i]);
            sum += c * c;
        }
    }
    sum.sqrt()
}

/// Fraction of off-diagonal elements left unmasked.
pub fn band_fill_fraction(perturbation: &Perturbation) -> f64 {
    let n = perturbation.dimension();
    let mut nonzero = 0usize;
    for j in 0..n {
        for i in 0..n {
            if i != j && perturbation.v_matrix[(i, j)] != 0.0 {
                nonzero += 1;
            }
        }
    }
    nonzero as f64 / (n * (n - 1)) as f64
}

const SIMPSON_PANELS: usize = 20_000;

/// Semicircle pair integral normalized to one,
/// `J(μ) = ∫∫ Θ(μ - |a₁ - a₂|) η̂(a₁) η̂(a₂) da₁ da₂` with
/// `η̂(a) = (2/π) √(1 - a²)`; the unnormalized `I(μ) = n² J(μ)`.
///
/// The inner integral is the semicircle CDF difference; the outer one runs
/// over `a = -cos θ` with composite Simpson, checked against half the panels.
pub fn semicircle_pair_fraction(mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let fine = simpson_pair_fraction(mu, SIMPSON_PANELS);
    let coarse = simpson_pair_fraction(mu, SIMPSON_PANELS / 2);
    if !fine.is_finite() || (fine - coarse).abs() > 1e-8 * fine.abs().max(1e-300) {
        return Err(Error::numeric(format!(
            "pair integral did not converge for mu = {mu}: {fine} vs {coarse}"
        )));
    }
    Ok(fine)
}

fn simpson_pair_fraction(mu: f64, panels: usize) -> f64 {
    let h = PI / panels as f64;
    let integrand = |theta: f64| {
        let a = -theta.cos();
        let s = theta.sin();
        let inner = semicircle_cdf((a + mu).min(1.0)) - semicircle_cdf((a - mu).max(-1.0));
        2.0 / PI * s * s * inner
    };
    let mut sum = integrand(0.0) + integrand(PI);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(k as f64 * h);
    }
    sum * h / 3.0
}

/// Ensemble estimate of `σ` from `⟨‖V‖²⟩ = σ² I(μ)/3` and
/// `⟨‖H₀‖²⟩ = 300 n`, assuming a semicircular observable spectrum:
/// `σ = ε √(900 n / I(μ))`.
pub fn sigma_estimate(epsilon: f64, mu: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("dimension must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let pair_integral = nf * nf * semicircle_pair_fraction(mu)?;
    Ok(epsilon * (900.0 * nf / pair_integral).sqrt())
}

/// The literal closed form `σ = 5π ε N^{-1/2} I(μ)^{-1/2}`. It disagrees with
/// [`sigma_estimate`] by a factor `6 n / π`; kept only for reporting.
pub fn sigma_printed_formula(epsilon: f64, mu: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    let pair_integral = nf * nf * semicircle_pair_fraction(mu)?;
    Ok(5.0 * PI * epsilon / nf.sqrt() / pair_integral.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub mu: f64,
    pub sigma_exact: f64,
    pub sigma_estimate: f64,
    pub ratio: f64,
    pub sigma_printed_formula: f64,
}

/// Exact `σ` of realized perturbations against the semicircle estimate, one
/// row per band width. Perturbations are drawn with `seed` and dropped.
pub fn calibration_report(
    model: &TailoredModel,
    epsilon: f64,
    mu_grid: &[f64],
    seed: u64,
) -> Result<Vec<CalibrationRow>> {
    let n = model.dimension();
    mu_grid
        .iter()
        .map(|&mu| {
            let sigma_exact = build_perturbation(model, mu, epsilon, seed)?.sigma;
            let estimate = sigma_estimate(epsilon, mu, n)?;
            Ok(CalibrationRow {
                mu,
                sigma_exact,
                sigma_estimate: estimate,
                ratio: sigma_exact / estimate,
                sigma_printed_formula: sigma_printed_formula(epsilon, mu, n)?,
            })
        })
        .collect()
}
