//! Acceptance suite: runs a full sweep at desk scale and prints one
//! PASS/FAIL line per criterion.
//!
//! Environment:
//! - `RELAXSTAB_ACCEPTANCE_N`: matrix dimension (default 4000).
//! - `RELAXSTAB_ACCEPTANCE_OUT`: output directory (default under the cargo
//!   target directory, so an interrupted run resumes).
//! - `RELAXSTAB_ACCEPTANCE_STRICT=1`: exit nonzero when a criterion fails.
//!
//! Without `STRICT` the process fails only if the pipeline itself errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use relaxstab::memkernel::{
    dephasing_residual, dynamics_from_kernel, kernel_from_dynamics, predict_perturbed, MemoryKernel,
};
use relaxstab::perturbation::sigma_estimate;
use relaxstab::{HeuristicParams, TimeGrid, TimeSeries};
use relaxstab_cli::layout;
use relaxstab_cli::report::Report;
use relaxstab_cli::{run_command, RunConfig};

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn fmt_stats(stats: &[relaxstab_cli::report::Stat]) -> String {
    stats
        .iter()
        .map(|s| match s.mu {
            Some(mu) => format!("{}@{mu}={:.4}", s.target, s.median),
            None => format!("{}={:.4}", s.target, s.median),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn tailoring(r: &Report) -> Verdict {
    let pass = r.tailoring.iter().all(|s| s.median <= 0.05);
    Verdict { id: 1, title: "tailoring max|C-g| on [0,3tau] <= 0.05", pass, detail: fmt_stats(&r.tailoring) }
}

fn semicircle(r: &Report) -> Verdict {
    let worst = |stats: &[relaxstab_cli::report::Stat]| {
        stats.iter().flat_map(|s| s.values.iter().copied()).fold(0.0, f64::max)
    };
    let pass = worst(&r.semicircle) <= 0.05;
    Verdict {
        id: 2,
        title: "semicircle Kolmogorov distance <= 0.05",
        pass,
        detail: format!(
            "worst {:.4} ({}); unit-radius worst {:.4}",
            worst(&r.semicircle),
            fmt_stats(&r.semicircle),
            worst(&r.semicircle_unit_radius)
        ),
    }
}

fn fidelity(r: &Report) -> Verdict {
    let m = r.fidelity_rate_median;
    let in_band = r.fidelity_rate.iter().all(|s| (0.020..=0.038).contains(&s.median));
    let spread = r.fidelity_rate.iter().map(|s| (s.median - m).abs() / m).fold(0.0, f64::max);
    Verdict {
        id: 3,
        title: "fidelity rate in [0.020, 0.038] and within 30% of median",
        pass: in_band && spread <= 0.3,
        detail: format!("median {m:.4}, max relative spread {spread:.3}; {}", fmt_stats(&r.fidelity_rate)),
    }
}

fn kernel(r: &Report) -> Verdict {
    // Cosine: constant kernel ω² away from the first two samples.
    let grid = TimeGrid::spanning(0.01, 10.0).unwrap();
    let cos = TimeSeries::from_fn(grid, |t| (2.0 * t).cos());
    let k = kernel_from_dynamics(&cos).unwrap().smoothed();
    let cos_err = k[2..k.len() - 1].iter().map(|v| (v - 4.0).abs()).fold(0.0, f64::max);
    // Exponential: purely local kernel, both directions.
    let lambda = 0.3;
    let exp = TimeSeries::from_fn(grid, |t| (-lambda * t).exp());
    let ke = kernel_from_dynamics(&exp).unwrap();
    let exp_err = ke.values.iter().map(|v| v.abs()).fold((ke.local_coefficient - lambda).abs(), f64::max);
    let back = dynamics_from_kernel(&MemoryKernel::local(grid, lambda), 1.0, &grid).unwrap();
    let fwd_err = back.max_abs_diff(&exp).unwrap();
    let pass = r.kernel_round_trip_max <= 1e-6 && cos_err <= 1e-2 && exp_err <= 1e-6 && fwd_err <= 1e-6;
    Verdict {
        id: 4,
        title: "kernel round trip <= 1e-6; cos/exp oracles",
        pass,
        detail: format!(
            "round trip {:.2e}; |K-4| {cos_err:.2e}; exp extraction {exp_err:.2e}; delta kernel dynamics {fwd_err:.2e}",
            r.kernel_round_trip_max
        ),
    }
}

fn equivalences(out: &Path, config: &RunConfig) -> Verdict {
    let alpha = 0.027;
    let mut beta1: f64 = 0.0;
    let mut beta0: f64 = 0.0;
    for t in config.targets() {
        for &s in &config.seeds {
            let a = relaxstab_cli::artifact::read_series(&out.join(layout::unperturbed(t.name(), s))).unwrap();
            let p1 = predict_perturbed(&a, HeuristicParams::new(alpha, 1.0).unwrap()).unwrap();
            let d = a
                .times()
                .zip(p1.values.iter().zip(&a.values))
                .map(|(time, (p, x))| (p - x * (-alpha * time).exp()).abs())
                .fold(0.0, f64::max);
            beta1 = beta1.max(d);
            let p0 = predict_perturbed(&a, HeuristicParams::new(alpha, 0.0).unwrap()).unwrap();
            let res = dephasing_residual(&a, &p0, alpha).unwrap();
            beta0 = beta0.max(res.values.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }
    let grid = TimeGrid::spanning(0.1, 90.0).unwrap();
    let exp = TimeSeries::from_fn(grid, |t| (-std::f64::consts::LN_2 / 15.0 * t).exp());
    let invariance = (0..=50)
        .map(|i| {
            let p = predict_perturbed(&exp, HeuristicParams::new(0.002 * i as f64, 0.0).unwrap()).unwrap();
            p.max_abs_diff(&exp).unwrap()
        })
        .fold(0.0, f64::max);
    Verdict {
        id: 5,
        title: "beta=1 damping 1e-4, beta=0 fixed point 1e-3, exponential invariance 1e-4",
        pass: beta1 <= 1e-4 && beta0 <= 1e-3 && invariance <= 1e-4,
        detail: format!("beta=1 {beta1:.2e}; beta=0 residual {beta0:.2e}; exponential {invariance:.2e}"),
    }
}

fn accuracy(r: &Report) -> Verdict {
    let worst = r.heuristic_rms.iter().map(|s| s.median).fold(0.0, f64::max);
    let failing: Vec<_> = r
        .heuristic_rms
        .iter()
        .filter(|s| s.median > 0.05)
        .map(|s| format!("{}@{}={:.3}", s.target, s.mu.unwrap(), s.median))
        .collect();
    Verdict {
        id: 6,
        title: "heuristic RMS <= 0.05 in every cell",
        pass: failing.is_empty(),
        detail: format!("alpha {:.4}, worst {worst:.4}; failing [{}]", r.alpha, failing.join(" ")),
    }
}

fn ordering(r: &Report) -> Verdict {
    let narrow = r.mu_list.iter().copied().fold(f64::INFINITY, f64::min);
    let wide = r.mu_list.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let get = |t: &str, mu: f64| Report::find(&r.deviation, t, Some(mu)).map_or(f64::NAN, |s| s.median);
    let e = get("exponential", narrow);
    let g = get("gaussian", wide);
    let l = get("linear", wide);
    Verdict {
        id: 7,
        title: "exponential at narrowest mu stable (<= 0.05) and below gaussian/linear at mu=2",
        pass: e <= 0.05 && e < g && e < l,
        detail: format!("exponential@{narrow} {e:.4}; gaussian@{wide} {g:.4}; linear@{wide} {l:.4}"),
    }
}

fn beta_endpoints(r: &Report) -> Verdict {
    let curve = &r.beta_curve;
    let first = curve.first().unwrap();
    let last = curve.last().unwrap();
    let monotone = curve.windows(2).all(|w| w[1].beta >= w[0].beta);
    Verdict {
        id: 8,
        title: "beta(mu=2) in [0.8,1], beta(narrowest) in [0,0.25], nondecreasing",
        pass: (0.8..=1.0).contains(&last.beta) && (0.0..=0.25).contains(&first.beta) && monotone,
        detail: curve.iter().map(|b| format!("{}:{:.3}", b.mu, b.beta)).collect::<Vec<_>>().join(" "),
    }
}

fn recurrence(r: &Report) -> Verdict {
    let checks = &r.recurrence.checks;
    let pass = checks.len() == 2
        && checks.iter().all(|c| c.suppression_within_factor_two && c.convolution_bound_holds)
        && checks.iter().all(|c| c.recurrence_time >= 5.0 * c.tau_prime);
    let detail = checks
        .iter()
        .map(|c| {
            format!(
                "beta={} ratio {:.3} vs e^-aT {:.3}, max conv {:.3} <= {}",
                c.beta, c.suppression_ratio, c.expected_suppression, c.max_convolution, c.convolution_bound
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict { id: 9, title: "recurrence suppression within 2x of e^-aT; convolution bound", pass, detail }
}

fn calibration(r: &Report) -> Verdict {
    let Some(table) = &r.calibration else {
        return Verdict { id: 10, title: "sigma calibration", pass: false, detail: "no calibration table".into() };
    };
    let ratios: Vec<f64> = table.rows.iter().map(|row| row.ratio).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let sd = (ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
    let cv = sd / mean;
    let n = table.dimension;
    let closed = 30.0 * table.epsilon / (n as f64).sqrt();
    let quad = sigma_estimate(table.epsilon, 2.0, n).unwrap();
    let rel = (quad / closed - 1.0).abs();
    Verdict {
        id: 10,
        title: "sigma ratio CV <= 0.1; mu=2 closed form within 1%",
        pass: cv <= 0.1 && rel <= 0.01,
        detail: format!(
            "ratios [{}], CV {cv:.4}; quadrature {quad:.6} vs 30 eps/sqrt(N) {closed:.6}",
            ratios.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
        ),
    }
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism(base: &Path) -> relaxstab_cli::Result<Verdict> {
    let n = env_or("RELAXSTAB_ACCEPTANCE_DETERMINISM_N", 200usize);
    let mut outputs = Vec::new();
    for workers in [1, 8] {
        let out = base.join(format!("determinism-n{n}-w{workers}"));
        let _ = fs::remove_dir_all(&out);
        let config = RunConfig { dimension: n, workers, output: out.clone(), ..RunConfig::default() };
        run_command(config, "sweep")?;
        outputs.push(csv_files(&out));
    }
    let differing: Vec<_> = outputs[0]
        .iter()
        .filter(|(k, v)| outputs[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_set = outputs[0].len() == outputs[1].len();
    Ok(Verdict {
        id: 11,
        title: "sweep with 1 vs 8 workers gives byte-identical CSVs",
        pass: same_set && differing.is_empty(),
        detail: format!("N={n}, {} CSV files compared, {} differ", outputs[0].len(), differing.len()),
    })
}

fn run() -> relaxstab_cli::Result<Vec<Verdict>> {
    let n = env_or("RELAXSTAB_ACCEPTANCE_N", 4000usize);
    let base = std::env::var("RELAXSTAB_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    let out = base.join(format!("n{n}"));
    let config = RunConfig { dimension: n, output: out.clone(), ..RunConfig::default() };
    println!("acceptance: N = {n}, output {}", out.display());
    run_command(config.clone(), "sweep")?;
    let report: Report = relaxstab_cli::artifact::read_json(&out.join(layout::REPORT_JSON))?;
    Ok(vec![
        tailoring(&report),
        semicircle(&report),
        fidelity(&report),
        kernel(&report),
        equivalences(&out, &config),
        accuracy(&report),
        ordering(&report),
        beta_endpoints(&report),
        recurrence(&report),
        calibration(&report),
        determinism(&base)?,
    ])
}

fn main() -> ExitCode {
    let verdicts = match run() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("acceptance run failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    for v in &verdicts {
        println!("{} criterion {:>2}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.title, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed > 0 && std::env::var("RELAXSTAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
