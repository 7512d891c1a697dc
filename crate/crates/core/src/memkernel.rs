//! Memory kernels of the equation of motion
//! `da/dt = -λ₀ a(t) - ∫₀ᵗ K(t - t') a(t') dt'`
//! and the two-parameter damping heuristic applied to them.
//!
//! The local coefficient `λ₀` is the weight of a `δ(τ)` component of the
//! kernel. It is never placed on the quadrature grid; the stepper applies it
//! analytically. In Laplace space the heuristic reads
//! `κ̃(s) = κ(s + α) + β α`: the smooth part is damped by `e^{-ατ}` and the
//! local part grows by `β α`. With `β = 1` this gives `ã = a e^{-αt}`
//! exactly, with `β = 0` it gives the fixed-point equation checked by
//! [`dephasing_residual`].
//!
//! Discretization: the convolution uses the trapezoid rule and the time step
//! is the implicit trapezoid (Crank–Nicolson) rule, both second order.
//! [`kernel_from_dynamics`] inverts exactly that stepper, so extraction
//! followed by integration reproduces the input to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{TimeGrid, TimeSeries};
use crate::targets::TargetDynamics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryKernel {
    pub grid: TimeGrid,
    /// Samples `K(τ_m)`, units of 1/time².
    pub values: Vec<f64>,
    /// Weight `λ₀` of the local component (units of 1/time).
    pub local_coefficient: f64,
}

impl MemoryKernel {
    pub fn new(grid: TimeGrid, values: Vec<f64>, local_coefficient: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "kernel has {} samples but its grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || !local_coefficient.is_finite() {
            return Err(Error::domain("kernel values must be finite"));
        }
        Ok(Self { grid, values, local_coefficient })
    }

    /// `K(τ) = value` on the grid, no local part.
    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()], local_coefficient: 0.0 }
    }

    /// Purely local kernel `λ δ(τ)`.
    pub fn local(grid: TimeGrid, lambda: f64) -> Self {
        Self { grid, values: vec![0.0; grid.len()], local_coefficient: lambda }
    }

    /// Kernel with the `(-1)^m` component removed by a 1-2-1 filter.
    ///
    /// Both trapezoid rules are blind to a kernel alternating in sign from
    /// one sample to the next, so exact extraction accumulates such a
    /// component (growing linearly with `τ`) without affecting the dynamics.
    /// Use this view to inspect or plot the kernel; integrate with the raw
    /// values.
    pub fn smoothed(&self) -> Vec<f64> {
        let k = &self.values;
        let n = k.len();
        (0..n)
            .map(|m| {
                if m == 0 || m + 1 == n {
                    // Linear extrapolation of the filtered neighbour pair keeps the ends consistent.
                    let (i, j) = if m == 0 { (1, 2) } else { (n - 2, n - 3) };
                    let at = |c: usize| 0.25 * (k[c - 1] + 2.0 * k[c] + k[c + 1]);
                    2.0 * at(i) - at(j)
                } else {
                    0.25 * (k[m - 1] + 2.0 * k[m] + k[m + 1])
                }
            })
            .collect()
    }
}

/// Parameters of the heuristic `K̃(τ) = K(τ) e^{-ατ}` plus `βα` of extra
/// local damping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub alpha: f64,
    pub beta: f64,
}

impl HeuristicParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::domain(format!("alpha must be a non-negative number, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::domain(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

const BLOW_UP: f64 = 1e6;

/// Integrate the equation of motion from `a(0) = a0` over `grid`.
pub fn dynamics_from_kernel(kernel: &MemoryKernel, a0: f64, grid: &TimeGrid) -> Result<TimeSeries> {
    if (kernel.grid.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::Dimension(format!(
            "kernel step {} differs from output step {}",
            kernel.grid.dt, grid.dt
        )));
    }
    if kernel.values.len() < grid.len() {
        return Err(Error::Dimension(format!(
            "kernel covers {} points, output grid needs {}",
            kernel.values.len(),
            grid.len()
        )));
    }
    let dt = grid.dt;
    let k = &kernel.values;
    let lambda = kernel.local_coefficient;
    let denom = 1.0 + 0.5 * dt * (lambda + 0.5 * dt * k[0]);
    if denom.abs() < 1e-14 {
        return Err(Error::numeric("implicit step is singular for this kernel and step"));
    }

    let n = grid.len();
    let mut a = Vec::with_capacity(n);
    a.push(a0);
    let mut f = -lambda * a0;
    for step in 1..n {
        // Known part of the convolution at t_step (everything but K₀ a_step).
        let history: f64 = (1..step).map(|j| k[step - j] * a[j]).sum();
        let known = dt * (0.5 * k[step] * a0 + history);
        let next = (a[step - 1] + 0.5 * dt * (f - known)) / denom;
        if !next.is_finite() || next.abs() > BLOW_UP {
            return Err(Error::numeric(format!(
                "integration became unstable at step {step} (t = {}): value {next}",
                grid.time(step)
            )));
        }
        f = -lambda * next - known - 0.5 * dt * k[0] * next;
        a.push(next);
    }
    TimeSeries::new(*grid, a)
}

/// Recover the kernel that makes [`dynamics_from_kernel`] reproduce `a`.
///
/// The first two steps fix the local coefficient `λ₀` and the start of the
/// kernel, taken flat over its first three samples: both step equations are
/// linear in `(λ₀, K₀)`. Exponential data thus yield a purely local kernel
/// and smooth even data a local coefficient of order `dt²`. Every later
/// sample solves one row of the lower-triangular system defined by the
/// stepper.
pub fn kernel_from_dynamics(a: &TimeSeries) -> Result<MemoryKernel> {
    let n = a.len();
    let dt = a.grid.dt;
    let v = &a.values;
    let a0 = v[0];
    if a0 == 0.0 || !a0.is_finite() {
        return Err(Error::domain(format!("a(0) = {a0}; the kernel is undefined")));
    }
    if a0.abs() * dt < 1e-12 {
        return Err(Error::numeric("triangular solve is near singular (|a(0)| dt < 1e-12)"));
    }
    if n < 3 {
        return Err(Error::domain("kernel extraction needs at least three samples"));
    }
    // Step m reads a_m - a_{m-1} = dt/2 (f_{m-1} + f_m) with
    // f_m = -λ₀ a_m - c J_m and J_m the trapezoid weight sum for K ≡ c.
    let (a1, a2) = (v[1], v[2]);
    let j1 = 0.5 * dt * (a0 + a1);
    let j2 = dt * (0.5 * a0 + a1 + 0.5 * a2);
    let rows = [
        [0.5 * dt * (a0 + a1), 0.5 * dt * j1, a0 - a1],
        [0.5 * dt * (a1 + a2), 0.5 * dt * (j1 + j2), a1 - a2],
    ];
    let det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0];
    if !(det.abs() > 1e-300) {
        return Err(Error::numeric("start-up system for the kernel is singular"));
    }
    let lambda = (rows[0][2] * rows[1][1] - rows[0][1] * rows[1][2]) / det;
    let c = (rows[0][0] * rows[1][2] - rows[0][2] * rows[1][0]) / det;
    let mut k = vec![c, c, c];
    k.truncate(n);

    let mut f = -lambda * a2 - c * j2;
    for step in 3..n {
        let f_next = 2.0 * (v[step] - v[step - 1]) / dt - f;
        let conv = -lambda * v[step] - f_next;
        let history: f64 = (1..step).map(|j| k[step - j] * v[j]).sum();
        let value = 2.0 * (conv / dt - history - 0.5 * k[0] * v[step]) / a0;
        if !value.is_finite() {
            return Err(Error::numeric(format!("kernel extraction diverged at step {step}")));
        }
        k.push(value);
        f = f_next;
    }
    MemoryKernel::new(a.grid, k, lambda)
}

/// `K̃(τ) = K(τ) e^{-ατ}`, `λ̃₀ = λ₀ + βα`.
pub fn perturb_kernel(kernel: &MemoryKernel, params: HeuristicParams) -> Result<MemoryKernel> {
    params.validate()?;
    let grid = kernel.grid;
    let values = kernel
        .values
        .iter()
        .enumerate()
        .map(|(m, v)| v * (-params.alpha * grid.time(m)).exp())
        .collect();
    Ok(MemoryKernel {
        grid,
        values,
        local_coefficient: kernel.local_coefficient + params.beta * params.alpha,
    })
}

/// Unperturbed dynamics with its kernel extracted once, for repeated
/// predictions (the fitter evaluates thousands of parameter pairs).
#[derive(Debug, Clone)]
pub struct HeuristicModel {
    pub dynamics: TimeSeries,
    pub kernel: MemoryKernel,
}

impl HeuristicModel {
    pub fn new(a: &TimeSeries) -> Result<Self> {
        if (a.values[0] - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("dynamics must start at 1, got {}", a.values[0])));
        }
        Ok(Self { dynamics: a.clone(), kernel: kernel_from_dynamics(a)? })
    }

    pub fn predict(&self, params: HeuristicParams) -> Result<TimeSeries> {
        params.validate()?;
        if params.alpha == 0.0 {
            return Ok(self.dynamics.clone());
        }
        dynamics_from_kernel(&perturb_kernel(&self.kernel, params)?, 1.0, &self.dynamics.grid)
    }
}

/// Perturbed dynamics predicted by the heuristic for `a` with `a(0) = 1`.
pub fn predict_perturbed(a: &TimeSeries, params: HeuristicParams) -> Result<TimeSeries> {
    HeuristicModel::new(a)?.predict(params)
}

/// `∫₀ᵗ x(t') y(t - t') e^{-α(t - t')} dt'` on the grid (trapezoid rule).
pub fn damped_convolution(x: &TimeSeries, y: &TimeSeries, alpha: f64) -> Result<TimeSeries> {
    x.check_same_grid(y)?;
    let dt = x.grid.dt;
    let damped: Vec<f64> = y.values.iter().enumerate().map(|(m, v)| v * (-alpha * x.grid.time(m)).exp()).collect();
    let values = (0..x.len())
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            let inner: f64 = (1..i).map(|j| x.values[j] * damped[i - j]).sum();
            dt * (0.5 * (x.values[0] * damped[i] + x.values[i] * damped[0]) + inner)
        })
        .collect();
    TimeSeries::new(x.grid, values)
}

/// Residual of `ã(t) = a(t) e^{-αt} + α ∫₀ᵗ ã(t') a(t - t') e^{-α(t - t')} dt'`.
pub fn dephasing_residual(a: &TimeSeries, a_tilde: &TimeSeries, alpha: f64) -> Result<TimeSeries> {
    let conv = damped_convolution(a_tilde, a, alpha)?;
    let values = (0..a.len())
        .map(|i| {
            let t = a.grid.time(i);
            a_tilde.values[i] - a.values[i] * (-alpha * t).exp() - alpha * conv.values[i]
        })
        .collect();
    TimeSeries::new(a.grid, values)
}

/// Normalized recurrence dynamics `g(t)/g(0)` for the given decay time and
/// recurrence time.
pub fn recurrence_dynamics(tau_prime: f64, recurrence_time: f64, grid: &TimeGrid) -> Result<TimeSeries> {
    let target = TargetDynamics::recurrence(tau_prime, recurrence_time);
    target.validate()?;
    let g0 = target.evaluate(0.0)?;
    let values = grid.times().map(|t| target.evaluate(t).map(|g| g / g0)).collect::<Result<Vec<_>>>()?;
    TimeSeries::new(*grid, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub alpha: f64,
    pub beta: f64,
    pub tau_prime: f64,
    pub recurrence_time: f64,
    /// `max_t |∫₀ᵗ ã_R(t') a_R(t-t') e^{-α(t-t')} dt'|`
    pub max_convolution: f64,
    pub convolution_bound: f64,
    pub convolution_bound_holds: bool,
    /// `max ã_R / max a_R` over `[T - 2τ', T + 2τ']`.
    pub suppression_ratio: f64,
    pub expected_suppression: f64,
    pub suppression_within_factor_two: bool,
    /// `max_t |ã_R(t) - a_R(t) e^{-αt}|`
    pub max_deviation: f64,
    /// `α τ'`, the order of the additive error.
    pub deviation_scale: f64,
}

/// Apply the heuristic to recurrence dynamics and compare against pure
/// exponential damping of the revival.
pub fn recurrence_check(
    a_r: &TimeSeries,
    params: HeuristicParams,
    tau_prime: f64,
    recurrence_time: f64,
) -> Result<RecurrenceReport> {
    params.validate()?;
    if params.beta != 0.0 && params.beta != 1.0 {
        return Err(Error::domain(format!("recurrence check needs beta 0 or 1, got {}", params.beta)));
    }
    if !(tau_prime > 0.0) || recurrence_time < 3.0 * tau_prime {
        return Err(Error::domain(format!(
            "recurrence time {recurrence_time} must be at least 3 tau' = {}",
            3.0 * tau_prime
        )));
    }
    let window = a_r.grid.window(recurrence_time - 2.0 * tau_prime, recurrence_time + 2.0 * tau_prime);
    if a_r.grid.t_max() < recurrence_time + 2.0 * tau_prime {
        return Err(Error::domain("grid ends before the recurrence window closes"));
    }
    let predicted = predict_perturbed(a_r, params)?;
    let conv = damped_convolution(&predicted, a_r, params.alpha)?;
    let max_convolution = conv.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak = |s: &TimeSeries| window.clone().map(|i| s.values[i]).fold(f64::MIN, f64::max);
    let suppression_ratio = peak(&predicted) / peak(a_r);
    let expected_suppression = (-params.alpha * recurrence_time).exp();
    let max_deviation = a_r
        .values
        .iter()
        .zip(&predicted.values)
        .enumerate()
        .map(|(i, (a, p))| (p - a * (-params.alpha * a_r.grid.time(i)).exp()).abs())
        .fold(0.0, f64::max);
    let bound = 3.0 * tau_prime;
    let rel = suppression_ratio / expected_suppression;
    Ok(RecurrenceReport {
        alpha: params.alpha,
        beta: params.beta,
        tau_prime,
        recurrence_time,
        max_convolution,
        convolution_bound: bound,
        convolution_bound_holds: conv.values.iter().all(|v| v.abs() <= bound),
        suppression_ratio,
        expected_suppression,
        suppression_within_factor_two: (0.5..=2.0).contains(&rel),
        max_deviation,
        deviation_scale: params.alpha * tau_prime,
    })
}
