//! Construction of the unperturbed pair: a flat random spectrum for `H₀` and
//! an observable `A` whose matrix elements in the `H₀` eigenbasis follow the
//! ETH form `a_jl = f(ε_l - ε_j) R_jl` with `f²` the power spectrum of the
//! target relaxation.

use std::f64::consts::PI;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::targets::{SpectralEnvelope, TargetDynamics};

pub const DEFAULT_HALF_WIDTH: f64 = 30.0;
pub const DEFAULT_DIMENSION: usize = 4000;

/// How the ETH diagonal `a_jj` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalConvention {
    /// `a_jj = 0`: the smooth part vanishes and diagonal fluctuations are
    /// dropped, which is the large-`N` limit of the other two choices.
    #[default]
    Zero,
    /// `a_jj = f(0) R_jj`, same variance as the off-diagonal elements.
    Equal,
    /// `a_jj = √2 f(0) R_jj`, the GOE-like doubled diagonal variance.
    Doubled,
}

impl DiagonalConvention {
    fn factor(self) -> f64 {
        match self {
            DiagonalConvention::Zero => 0.0,
            DiagonalConvention::Equal => 1.0,
            DiagonalConvention::Doubled => std::f64::consts::SQRT_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dimension: usize,
    pub half_width: f64,
    pub seed: u64,
    pub target: TargetDynamics,
    #[serde(default)]
    pub diagonal: DiagonalConvention,
}

impl ModelSpec {
    pub fn new(dimension: usize, seed: u64, target: TargetDynamics) -> Self {
        Self {
            dimension,
            half_width: DEFAULT_HALF_WIDTH,
            seed,
            target,
            diagonal: DiagonalConvention::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::domain(format!("dimension must be at least 2, got {}", self.dimension)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::domain(format!("half width must be positive, got {}", self.half_width)));
        }
        self.target.validate()
    }

    /// Constant density of states of the flat spectrum, `N / (2 W)`.
    pub fn density_of_states(&self) -> f64 {
        self.dimension as f64 / (2.0 * self.half_width)
    }

    fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed)
    }
}

/// Sorted eigenvalues of `H₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `‖H₀‖_HS` of the realized spectrum.
    pub fn hilbert_schmidt_norm(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

/// `N` i.i.d. energies uniform on `[-W, W]`, sorted ascending.
pub fn sample_spectrum(spec: &ModelSpec) -> Result<Spectrum> {
    spec.validate()?;
    Ok(draw_spectrum(spec, &mut spec.rng()))
}

fn draw_spectrum(spec: &ModelSpec, rng: &mut ChaCha20Rng) -> Spectrum {
    let w = spec.half_width;
    let mut eigenvalues: Vec<f64> = (0..spec.dimension).map(|_| rng.random_range(-w..=w)).collect();
    eigenvalues.sort_by(f64::total_cmp);
    Spectrum { eigenvalues }
}

/// The tailored pair `(H₀, A)` expressed in the `H₀` eigenbasis, together
/// with the eigendecomposition of `A`.
#[derive(Debug, Clone)]
pub struct TailoredModel {
    pub spec: ModelSpec,
    pub spectrum: Spectrum,
    /// `A` in the `H₀` eigenbasis.
    pub a_matrix: Mat<f64>,
    /// Eigenvalues of `A`, ascending, with `max |a_i| = 1`.
    pub a_eigenvalues: Vec<f64>,
    /// Columns are eigenvectors of `A` in the `H₀` eigenbasis.
    pub a_eigenvectors: Mat<f64>,
    /// Factor the raw ETH matrix was divided by.
    pub rescale: f64,
    pub envelope_warning: Option<String>,
}

impl TailoredModel {
    pub fn dimension(&self) -> usize {
        self.spectrum.len()
    }
}

/// Relative edge value above which the envelope is considered truncated.
const ENVELOPE_EDGE_TOLERANCE: f64 = 1e-3;

/// Build `A` from the ETH form with envelope `f² = envelope`, remove its
/// trace, diagonalize it and rescale so that its spectrum fills `[-1, 1]`
/// with an extreme eigenvalue at exactly `±1`.
pub fn build_observable(spec: &ModelSpec, envelope: &SpectralEnvelope) -> Result<TailoredModel> {
    spec.validate()?;
    if envelope.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::domain("spectral envelope must be finite and non-negative"));
    }
    let peak = envelope.peak();
    if peak <= 0.0 {
        return Err(Error::domain("spectral envelope is identically zero"));
    }
    let edge = envelope.values[0].max(envelope.values[envelope.n_bins]);
    if edge > ENVELOPE_EDGE_TOLERANCE * peak {
        return Err(Error::domain(format!(
            "envelope is still at {:.2e} of its peak at omega_max = {}; widen the frequency grid",
            edge / peak,
            envelope.omega_max
        )));
    }

    let n = spec.dimension;
    let mut rng = spec.rng();
    let spectrum = draw_spectrum(spec, &mut rng);
    let eps = &spectrum.eigenvalues;
    let diag_factor = spec.diagonal.factor() * envelope.value_at(0.0).sqrt();

    let mut a = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let r: f64 = rng.sample(StandardNormal);
        a[(j, j)] = diag_factor * r;
        for l in (j + 1)..n {
            let r: f64 = rng.sample(StandardNormal);
            let f = envelope.value_at(eps[l] - eps[j]).sqrt();
            let v = f * r;
            a[(j, l)] = v;
            a[(l, j)] = v;
        }
    }
    let shift = linalg::trace(&a) / n as f64;
    for j in 0..n {
        a[(j, j)] -= shift;
    }

    let (mut a_eigenvalues, a_eigenvectors) = linalg::symmetric_eigen(&a)?;
    let rescale = a_eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(rescale > 0.0) {
        return Err(Error::numeric("observable is identically zero; cannot rescale"));
    }
    a_eigenvalues.iter_mut().for_each(|v| *v /= rescale);
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] /= rescale;
        }
    }

    Ok(TailoredModel {
        spec: spec.clone(),
        spectrum,
        a_matrix: a,
        a_eigenvalues,
        a_eigenvectors,
        rescale,
        envelope_warning: envelope.warning.clone(),
    })
}

/// Distance of the observable spectrum from the semicircle law.
///
/// The law is compared at the radius `R = 2 √⟨a²⟩` fixed by the second
/// moment. The normalization `max|a| = 1` puts the largest eigenvalue, not
/// the bulk edge, at 1, and at finite `N` the extreme eigenvalues overshoot
/// the edge; `unit_radius_distance` keeps the comparison at `R = 1` for
/// reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub kolmogorov_distance: f64,
    pub radius: f64,
    pub unit_radius_distance: f64,
    /// `(bin center, count)` over `[-1, 1]`.
    pub histogram: Vec<(f64, usize)>,
}

/// CDF of the unit semicircle density `(2/π) √(1 - a²)`.
pub fn semicircle_cdf(x: f64) -> f64 {
    let x = x.clamp(-1.0, 1.0);
    0.5 + (x * (1.0 - x * x).sqrt() + x.asin()) / PI
}

const HISTOGRAM_BINS: usize = 40;

pub fn spectral_statistics(model: &TailoredModel) -> SpectralReport {
    spectral_statistics_of(&model.a_eigenvalues)
}

/// Kolmogorov distance between the empirical CDF of sorted `values` and the
/// semicircle CDF, plus a histogram on `[-1, 1]`.
pub fn spectral_statistics_of(values: &[f64]) -> SpectralReport {
    let n = values.len() as f64;
    let distance = |radius: f64| {
        values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let g = semicircle_cdf(x / radius);
                (g - i as f64 / n).abs().max((g - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    };
    let radius = 2.0 * (values.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let kolmogorov_distance = distance(radius);
    let unit_radius_distance = distance(1.0);
    let width = 2.0 / HISTOGRAM_BINS as f64;
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &x in values {
        let k = (((x + 1.0) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[k] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (-1.0 + (k as f64 + 0.5) * width, c))
        .collect();
    SpectralReport { kolmogorov_distance, radius, unit_radius_distance, histogram }
}
