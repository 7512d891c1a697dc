//! Exact spectral time evolution.
//!
//! Every series here is a sum `Σ_jl w_jl e^{i ω_jl t}` over the pairs of
//! an eigenbasis. With `N = 4000` there are 16 million pairs, so the
//! production path bins the weights by frequency (keeping the weighted mean
//! frequency of each bin) and sums one rotating phasor per occupied bin.
//! The direct double sums are kept for small systems as oracles.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::TailoredModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::perturbation::Perturbation;
use crate::series::{TimeGrid, TimeSeries};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_T_MAX: f64 = 90.0;
pub const DEFAULT_FREQUENCY_BINS: usize = 1 << 16;

/// Energies of an eigenbasis together with an observable expressed in it.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub energies: &'a [f64],
    pub observable: &'a Mat<f64>,
    /// Eigenvalues of the observable (basis independent).
    pub observable_spectrum: &'a [f64],
}

impl<'a> Frame<'a> {
    fn check(&self) -> Result<()> {
        let n = self.energies.len();
        if self.observable.nrows() != n || self.observable.ncols() != n {
            return Err(Error::Dimension(format!(
                "observable is {}x{} but there are {n} energies",
                self.observable.nrows(),
                self.observable.ncols()
            )));
        }
        Ok(())
    }
}

impl TailoredModel {
    /// The unperturbed frame: `H₀` energies and `A` in the `H₀` eigenbasis.
    pub fn frame(&self) -> Frame<'_> {
        Frame {
            energies: &self.spectrum.eigenvalues,
            observable: &self.a_matrix,
            observable_spectrum: &self.a_eigenvalues,
        }
    }
}

/// `H = H₀ + V` diagonalized in the eigenbasis of `A`.
#[derive(Debug)]
pub struct PerturbedSystem<'a> {
    pub model: &'a TailoredModel,
    pub perturbation: &'a Perturbation,
    pub h_eigenvalues: Vec<f64>,
    /// Columns are eigenvectors of `H` in the eigenbasis of `A`.
    pub h_eigenvectors: Mat<f64>,
    /// `A` in the eigenbasis of `H`.
    pub a_in_h_basis: Mat<f64>,
}

impl PerturbedSystem<'_> {
    pub fn frame(&self) -> Frame<'_> {
        Frame {
            energies: &self.h_eigenvalues,
            observable: &self.a_in_h_basis,
            observable_spectrum: &self.model.a_eigenvalues,
        }
    }

    /// `Σ E_m - (Σ ε_j + Tr V)`, zero up to rounding.
    pub fn trace_defect(&self) -> f64 {
        let sum_h: f64 = self.h_eigenvalues.iter().sum();
        let sum_0: f64 = self.model.spectrum.eigenvalues.iter().sum();
        sum_h - sum_0 - linalg::trace(&self.perturbation.v_matrix)
    }
}

pub fn assemble<'a>(model: &'a TailoredModel, perturbation: &'a Perturbation) -> Result<PerturbedSystem<'a>> {
    let n = model.dimension();
    if perturbation.dimension() != n {
        return Err(Error::Dimension(format!(
            "model has dimension {n}, perturbation {}",
            perturbation.dimension()
        )));
    }
    // H₀ in the eigenbasis of A is Qᵀ diag(ε) Q.
    let mut h = linalg::congruence(&model.a_eigenvectors, &model.spectrum.eigenvalues);
    h += &perturbation.v_matrix;
    let (h_eigenvalues, h_eigenvectors) = linalg::symmetric_eigen(&h)?;
    drop(h);
    let a_in_h_basis = linalg::congruence(&h_eigenvectors, &model.a_eigenvalues);
    Ok(PerturbedSystem { model, perturbation, h_eigenvalues, h_eigenvectors, a_in_h_basis })
}

/// Binned set of spectral lines: `constant + Σ_b weight_b e^{i ω_b t}`.
#[derive(Debug, Clone, Default)]
pub struct LineSpectrum {
    pub constant: f64,
    pub frequencies: Vec<f64>,
    pub weights: Vec<f64>,
}

struct Binner {
    lo: f64,
    width: f64,
    weight: Vec<f64>,
    moment: Vec<f64>,
    abs_weight: Vec<f64>,
}

impl Binner {
    fn new(lo: f64, hi: f64, n_bins: usize) -> Self {
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        Self {
            lo,
            width: span / n_bins as f64,
            weight: vec![0.0; n_bins],
            moment: vec![0.0; n_bins],
            abs_weight: vec![0.0; n_bins],
        }
    }

    #[inline]
    fn add(&mut self, freq: f64, w: f64) {
        let n = self.weight.len();
        let k = (((freq - self.lo) / self.width) as usize).min(n - 1);
        self.weight[k] += w;
        self.moment[k] += w.abs() * freq;
        self.abs_weight[k] += w.abs();
    }

    fn finish(self, constant: f64) -> LineSpectrum {
        let mut out = LineSpectrum { constant, ..Default::default() };
        for k in 0..self.weight.len() {
            if self.abs_weight[k] > 0.0 {
                out.frequencies.push(self.moment[k] / self.abs_weight[k]);
                out.weights.push(self.weight[k]);
            }
        }
        out
    }
}

/// Bins needed so that no bin is wider than `π / (10 t_max)`.
fn bins_for(span: f64, grid: &TimeGrid, requested: usize) -> usize {
    let max_width = std::f64::consts::PI / (10.0 * grid.t_max());
    requested.max((span / max_width).ceil() as usize).max(1)
}

impl LineSpectrum {
    /// Real part `constant + Σ w cos(ω t)` on the grid.
    pub fn cosine_series(&self, grid: &TimeGrid) -> Vec<f64> {
        let mut out = vec![self.constant; grid.len()];
        for (&w, &f) in self.weights.iter().zip(&self.frequencies) {
            let (s, c) = (f * grid.dt).sin_cos();
            let (mut re, mut im) = (1.0f64, 0.0f64);
            for slot in out.iter_mut() {
                *slot += w * re;
                let next = re * c - im * s;
                im = re * s + im * c;
                re = next;
            }
        }
        out
    }

    /// Complex `constant + Σ w e^{iωt}` as `(re, im)` pairs.
    pub fn phasor_series(&self, grid: &TimeGrid) -> Vec<(f64, f64)> {
        let mut out = vec![(self.constant, 0.0); grid.len()];
        for (&w, &f) in self.weights.iter().zip(&self.frequencies) {
            let (s, c) = (f * grid.dt).sin_cos();
            let (mut re, mut im) = (1.0f64, 0.0f64);
            for slot in out.iter_mut() {
                slot.0 += w * re;
                slot.1 += w * im;
                let next = re * c - im * s;
                im = re * s + im * c;
                re = next;
            }
        }
        out
    }
}

/// Symmetric pair weights `weight(j, l)` at frequency `|E_l - E_j|`, with
/// the `j = l` terms collected into the constant.
fn symmetric_lines(energies: &[f64], grid: &TimeGrid, weight: impl Fn(usize, usize) -> f64) -> LineSpectrum {
    let n = energies.len();
    let (lo, hi) = energies
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut binner = Binner::new(0.0, span, bins_for(span, grid, DEFAULT_FREQUENCY_BINS));
    let mut constant = 0.0;
    for j in 0..n {
        constant += weight(j, j);
        for l in (j + 1)..n {
            binner.add((energies[l] - energies[j]).abs(), 2.0 * weight(j, l));
        }
    }
    binner.finish(constant)
}

fn normalized(grid: TimeGrid, values: Vec<f64>) -> Result<TimeSeries> {
    let v0 = values[0];
    if v0 == 0.0 || !v0.is_finite() {
        return Err(Error::domain(format!("cannot normalize a series with initial value {v0}")));
    }
    TimeSeries::new(grid, values.into_iter().map(|v| v / v0).collect())
}

/// `C(t) / C(0)` with `C(t) = Σ_jl |m_jl|² cos((E_l - E_j) t)`.
pub fn autocorrelation_series(frame: Frame<'_>, grid: &TimeGrid) -> Result<TimeSeries> {
    frame.check()?;
    let m = frame.observable;
    let lines = symmetric_lines(frame.energies, grid, |j, l| m[(j, l)] * m[(j, l)]);
    normalized(*grid, lines.cosine_series(grid))
}

/// Direct `O(N² n_t)` evaluation of the normalized autocorrelation.
pub fn autocorrelation_direct(frame: Frame<'_>, grid: &TimeGrid) -> Result<TimeSeries> {
    frame.check()?;
    let e = frame.energies;
    let m = frame.observable;
    let values = grid
        .times()
        .map(|t| {
            let mut sum = 0.0;
            for j in 0..e.len() {
                for l in 0..e.len() {
                    sum += m[(j, l)] * m[(j, l)] * ((e[l] - e[j]) * t).cos();
                }
            }
            sum
        })
        .collect();
    normalized(*grid, values)
}

/// `⟨A(t)⟩ / ⟨A(0)⟩` for `ρ(0) = (1 + δA)/N`, evaluated as
/// `Σ_jl ρ_jl a_lj cos(ω_jl t)` including the trace term.
pub fn expectation_from_state(frame: Frame<'_>, delta: f64, grid: &TimeGrid) -> Result<TimeSeries> {
    frame.check()?;
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::domain(format!(
            "stimulus delta = {delta} leaves ⟨A(0)⟩ = 0; normalization undefined"
        )));
    }
    if let Some(a) = frame.observable_spectrum.iter().find(|a| 1.0 + delta * **a <= 0.0) {
        return Err(Error::domain(format!("delta = {delta} makes ρ non-positive at eigenvalue {a}")));
    }
    let n = frame.energies.len() as f64;
    let m = frame.observable;
    let lines = symmetric_lines(frame.energies, grid, |j, l| {
        let rho = if j == l { (1.0 + delta * m[(j, j)]) / n } else { delta * m[(j, l)] / n };
        rho * m[(j, l)]
    });
    normalized(*grid, lines.cosine_series(grid))
}

/// `(1 + δA) φ / ‖·‖` for a Gaussian random `φ`, in the frame's basis.
pub fn stimulated_pure_state(frame: Frame<'_>, delta: f64, seed: u64) -> Result<Vec<f64>> {
    frame.check()?;
    let n = frame.energies.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let phi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let m = frame.observable;
    let mut psi = phi.clone();
    for l in 0..n {
        let p = delta * phi[l];
        for j in 0..n {
            psi[j] += m[(j, l)] * p;
        }
    }
    let norm = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::numeric("stimulated state has zero norm"));
    }
    psi.iter_mut().for_each(|x| *x /= norm);
    Ok(psi)
}

/// `⟨ψ(t)|A|ψ(t)⟩ / ⟨ψ|A|ψ⟩` for a real state `ψ` given in the frame's basis.
pub fn pure_state_expectation(frame: Frame<'_>, psi: &[f64], grid: &TimeGrid) -> Result<TimeSeries> {
    frame.check()?;
    if psi.len() != frame.energies.len() {
        return Err(Error::Dimension("state and frame sizes differ".into()));
    }
    let m = frame.observable;
    let lines = symmetric_lines(frame.energies, grid, |j, l| psi[j] * psi[l] * m[(j, l)]);
    normalized(*grid, lines.cosine_series(grid))
}

/// Squared overlaps `|⟨E_m|ε_k⟩|²`, indexed `[(k, m)]`.
fn overlap_weights(system: &PerturbedSystem<'_>) -> Mat<f64> {
    linalg::pin_sequential();
    // Column k of Qᵀ is |ε_k⟩ in the A basis, so ⟨ε_k|E_m⟩ = (Q P)_km.
    let w = &system.model.a_eigenvectors * &system.h_eigenvectors;
    Mat::from_fn(w.nrows(), w.ncols(), |k, m| w[(k, m)] * w[(k, m)])
}

/// `F(t) = |Tr(ρ e^{iHt} e^{-iH₀t})|²` with `ρ = 1/N`.
pub fn fidelity_series(system: &PerturbedSystem<'_>, grid: &TimeGrid) -> Result<TimeSeries> {
    let weights = overlap_weights(system);
    let e = &system.h_eigenvalues;
    let eps = &system.model.spectrum.eigenvalues;
    let n = e.len();
    let lo = e[0] - eps[n - 1];
    let hi = e[n - 1] - eps[0];
    let span = hi - lo;
    let mut binner = Binner::new(lo, hi, bins_for(span, grid, DEFAULT_FREQUENCY_BINS));
    let inv_n = 1.0 / n as f64;
    for m in 0..n {
        for k in 0..n {
            binner.add(e[m] - eps[k], weights[(k, m)] * inv_n);
        }
    }
    let amplitude = binner.finish(0.0).phasor_series(grid);
    let values = amplitude.iter().map(|(re, im)| re * re + im * im).collect();
    TimeSeries::new(*grid, values)
}

/// Direct `O(N² n_t)` fidelity for small systems.
pub fn fidelity_direct(system: &PerturbedSystem<'_>, grid: &TimeGrid) -> Result<TimeSeries> {
    let weights = overlap_weights(system);
    let e = &system.h_eigenvalues;
    let eps = &system.model.spectrum.eigenvalues;
    let n = e.len() as f64;
    let values = grid
        .times()
        .map(|t| {
            let (mut re, mut im) = (0.0, 0.0);
            for m in 0..e.len() {
                for k in 0..eps.len() {
                    let (s, c) = ((e[m] - eps[k]) * t).sin_cos();
                    re += weights[(k, m)] * c / n;
                    im += weights[(k, m)] * s / n;
                }
            }
            re * re + im * im
        })
        .collect();
    TimeSeries::new(*grid, values)
}

/// Decay rate `-d ln(y)/dt` from a least-squares line through `ln y` on the
/// grid points inside `[t_lo, t_hi]`.
pub fn fit_exponential_rate(series: &TimeSeries, t_lo: f64, t_hi: f64) -> Result<f64> {
    let range = series.grid.window(t_lo, t_hi);
    if range.len() < 2 {
        return Err(Error::domain(format!("window [{t_lo}, {t_hi}] holds fewer than two points")));
    }
    let mut pts = Vec::with_capacity(range.len());
    for i in range {
        let y = series.values[i];
        if !(y > 0.0) {
            return Err(Error::domain(format!(
                "value {y} at t = {} is not positive; cannot take its logarithm",
                series.grid.time(i)
            )));
        }
        pts.push((series.grid.time(i), y.ln()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// Summary of one perturbed run, as persisted next to the series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionSummary {
    pub fidelity_rate: f64,
    pub trace_defect: f64,
    pub max_level_shift: f64,
}
