//! Relative paths of every artifact under the output directory.

use crate::config::mu_label;

pub fn model_blob(target: &str, seed: u64) -> String {
    format!("models/{target}/seed-{seed}.bin")
}

pub fn model_sidecar(target: &str, seed: u64) -> String {
    format!("models/{target}/seed-{seed}.json")
}

pub fn perturbation(target: &str, mu: f64, seed: u64) -> String {
    format!("perturbations/{target}/mu-{}/seed-{seed}.json", mu_label(mu))
}

pub fn target_curve(target: &str) -> String {
    format!("targets/{target}.csv")
}

pub const CALIBRATION_CSV: &str = "calibration/sigma_mu.csv";
pub const CALIBRATION_JSON: &str = "calibration/sigma_mu.json";

pub fn unperturbed(target: &str, seed: u64) -> String {
    format!("series/{target}/seed-{seed}/a.csv")
}

fn cell_dir(target: &str, mu: f64, seed: u64) -> String {
    format!("series/{target}/mu-{}/seed-{seed}", mu_label(mu))
}

pub fn perturbed(target: &str, mu: f64, seed: u64) -> String {
    format!("{}/a_tilde.csv", cell_dir(target, mu, seed))
}

pub fn fidelity(target: &str, mu: f64, seed: u64) -> String {
    format!("{}/fidelity.csv", cell_dir(target, mu, seed))
}

pub fn cell_summary(target: &str, mu: f64, seed: u64) -> String {
    format!("{}/summary.json", cell_dir(target, mu, seed))
}

pub fn kernel_csv(target: &str, seed: u64) -> String {
    format!("kernels/{target}/seed-{seed}.csv")
}

pub fn kernel_json(target: &str, seed: u64) -> String {
    format!("kernels/{target}/seed-{seed}.json")
}

pub fn alpha_fit(target: &str, seed: u64) -> String {
    format!("fits/alpha/{target}/seed-{seed}.json")
}

pub fn cell_fit(target: &str, mu: f64, seed: u64) -> String {
    format!("fits/cells/{target}/mu-{}/seed-{seed}.json", mu_label(mu))
}

pub fn prediction(target: &str, mu: f64, seed: u64) -> String {
    format!("predictions/{target}/mu-{}/seed-{seed}.csv", mu_label(mu))
}

pub const FITS_JSON: &str = "fits/fits.json";
pub const BETA_CSV: &str = "fits/beta_mu.csv";

pub const RECURRENCE_JSON: &str = "recurrence/report.json";
pub const RECURRENCE_TARGET: &str = "recurrence/a_r.csv";

pub fn recurrence_prediction(beta: f64) -> String {
    format!("recurrence/beta-{beta}.csv")
}

pub const REPORT_JSON: &str = "report.json";

pub fn n_sweep_point(n: usize, target: &str) -> String {
    format!("convergence/n-{n}/{target}.json")
}

pub const N_SWEEP_JSON: &str = "convergence/n_sweep.json";
