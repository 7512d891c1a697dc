//! Relaxation dynamics of random-matrix models tailored to a target
//! autocorrelation, their stability under banded perturbations, and a
//! memory-kernel heuristic that predicts the perturbed dynamics.

pub mod ensemble;
pub mod error;
pub mod evolve;
pub mod fitting;
pub mod linalg;
pub mod memkernel;
pub mod perturbation;
pub mod series;
pub mod targets;

pub use ensemble::{build_observable, DiagonalConvention, ModelSpec, TailoredModel};
pub use error::{Error, Result};
pub use memkernel::{HeuristicParams, MemoryKernel};
pub use perturbation::{build_perturbation, Perturbation};
pub use series::{TimeGrid, TimeSeries};
pub use targets::{envelope_for, SpectralEnvelope, TargetDynamics};
