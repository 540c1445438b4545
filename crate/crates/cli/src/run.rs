//! Executes a validated configuration and renders the CSV.

use std::fmt::Write as _;

use qavar_core::hilbert::joint_dim;
use qavar_core::{
    bound_check, c64, ensemble_avar, extrapolate_long_term, free_lo_avar, ghz_step_state,
    optimize_interrogation, Error, Estimator, InnerOptimizer, NoiseParams, OptimizeReport,
    OptimizedState, Probe, ProductFamily, Scenario, SearchOptions, ServoConfig, SimConfig,
    SymmetricState, PLATEAU_FLATNESS, PLATEAU_POINTS,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{Mode, ProbeSpec, RunConfig};

/// Rendered output of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub csv: String,
    /// One line per tau, plus an optional closing line.
    pub summary: Vec<String>,
    /// Set when every tau was skipped by the dimension cap.
    pub all_skipped: bool,
}

/// Shortest round-trip decimal form; exponent notation outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// SHA-256 of the normalized configuration. The output path does not take part.
pub fn config_hash(cfg: &RunConfig) -> String {
    let cfg = RunConfig {
        output: None,
        ..cfg.clone()
    };
    let json = serde_json::to_string(&cfg).expect("config serializes");
    Sha256::digest(json.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn noise(cfg: &RunConfig) -> Result<NoiseParams, Error> {
    let n = cfg.noise;
    NoiseParams::new(n.alpha, n.beta, n.gamma, n.omega0)
}

fn fixed_state(cfg: &RunConfig) -> Result<SymmetricState, Error> {
    match &cfg.probe {
        ProbeSpec::Plus => Ok(SymmetricState::plus(cfg.atoms)),
        ProbeSpec::Ghz => ghz_step_state(cfg.atoms),
        ProbeSpec::Amplitudes(a) => {
            SymmetricState::normalized(a.iter().map(|&(re, im)| c64::new(re, im)).collect())
        }
        _ => unreachable!("optimizing probes have no fixed state"),
    }
}

fn inner(cfg: &RunConfig) -> Result<InnerOptimizer, Error> {
    let opts = SearchOptions {
        tol: cfg.tolerance,
        seed: cfg.seed,
        ..Default::default()
    };
    Ok(match &cfg.probe {
        ProbeSpec::OptimizeProduct => InnerOptimizer::Product {
            family: ProductFamily::Symmetric,
            opts,
        },
        ProbeSpec::OptimizeAtomProduct => InnerOptimizer::Product {
            family: ProductFamily::AtomProduct,
            opts,
        },
        ProbeSpec::OptimizeJoint => InnerOptimizer::Joint(opts),
        _ => InnerOptimizer::Fixed(fixed_state(cfg)?),
    })
}

fn servo(cfg: &RunConfig) -> Result<Option<ServoConfig>, Error> {
    cfg.servo
        .map(|s| {
            let est = if s.estimator == "arcsine" {
                Estimator::Arcsine
            } else {
                Estimator::Linear
            };
            ServoConfig::new(s.gain, est)
        })
        .transpose()
}

fn header(cfg: &RunConfig, columns: &[&str]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# qavar {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# mode: {}", cfg.mode);
    let _ = writeln!(s, "# config_sha256: {}", config_hash(cfg));
    let _ = writeln!(s, "# seed: {}", cfg.seed);
    s.push_str(&columns.join(","));
    s.push('\n');
    s
}

fn amplitudes(report: &OptimizeReport) -> String {
    let fmt_c = |a: c64| {
        if a.im == 0.0 {
            num(a.re)
        } else if a.im < 0.0 {
            format!("{}-{}i", num(a.re), num(-a.im))
        } else {
            format!("{}+{}i", num(a.re), num(a.im))
        }
    };
    match &report.best_state {
        OptimizedState::Product(s) => s
            .amplitudes()
            .iter()
            .map(|&a| fmt_c(a))
            .collect::<Vec<_>>()
            .join(" "),
        OptimizedState::Joint(v) => v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" "),
    }
}

/// Runs the configuration. Errors are numerical failures from the core.
pub fn execute(cfg: &RunConfig) -> Result<Output, Error> {
    match cfg.mode {
        Mode::LoAvar => lo_avar(cfg),
        Mode::Bound | Mode::Optimize => bound(cfg),
        Mode::Simulate => simulate(cfg),
        Mode::BoundCheck => check(cfg),
    }
}

fn lo_avar(cfg: &RunConfig) -> Result<Output, Error> {
    let p = noise(cfg)?;
    let w2 = p.omega0 * p.omega0;
    let mut csv = header(cfg, &["tau", "sigma2_lo", "c_running"]);
    let mut summary = Vec::new();
    for &tau in &cfg.tau {
        let s = free_lo_avar(&p, tau)?;
        let _ = writeln!(csv, "{},{},{}", num(tau), num(s), num(s * w2 * tau));
        summary.push(format!("tau={} sigma2_lo={}", num(tau), num(s)));
    }
    Ok(Output {
        csv,
        summary,
        all_skipped: false,
    })
}

fn bound(cfg: &RunConfig) -> Result<Output, Error> {
    let p = noise(cfg)?;
    let inner = inner(cfg)?;
    let w2 = p.omega0 * p.omega0;
    let results: Vec<Result<Option<OptimizeReport>, (f64, Error)>> = cfg
        .tau
        .par_iter()
        .map(|&tau| {
            match optimize_interrogation(&p, cfg.atoms, tau, cfg.k_max, &inner, cfg.dimension_cap) {
                Ok(r) => Ok(Some(r)),
                Err(Error::ResourceCap { .. }) => Ok(None),
                Err(e) => Err((tau, e)),
            }
        })
        .collect();

    let optimize = cfg.mode == Mode::Optimize;
    let mut columns = vec![
        "tau",
        "k_opt",
        "T_opt",
        "sigma2_lo",
        "sigma2_q",
        "c_running",
        "seed",
    ];
    if optimize {
        columns.extend(["iterations", "converged", "amplitudes"]);
    }
    let mut csv = header(cfg, &columns);
    let mut summary = Vec::new();
    let mut points = Vec::new();
    let dim = joint_dim(cfg.atoms, 2 * cfg.k_max - 1).unwrap_or(usize::MAX);
    for (&tau, res) in cfg.tau.iter().zip(results) {
        let report = match res {
            Ok(Some(r)) => r,
            Ok(None) => {
                let _ = writeln!(
                    csv,
                    "# skipped tau={}: dimension {dim} exceeds cap {}",
                    num(tau),
                    cfg.dimension_cap
                );
                summary.push(format!(
                    "tau={} skipped: dimension {dim} > cap {}",
                    num(tau),
                    cfg.dimension_cap
                ));
                continue;
            }
            Err((tau, e)) => return Err(Error::Numerical(format!("tau = {tau}: {e}"))),
        };
        let c = report.sigma2_q * w2 * tau;
        points.push((tau, report.sigma2_q));
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{}",
            num(tau),
            report.best_k,
            num(report.best_step),
            num(report.sigma2_lo),
            num(report.sigma2_q),
            num(c),
            cfg.seed
        );
        if optimize {
            let _ = write!(
                csv,
                ",{},{},{}",
                report.iterations,
                report.converged,
                amplitudes(&report)
            );
        }
        csv.push('\n');
        summary.push(format!(
            "tau={} k={} T={} sigma2_q={} c={:.4}",
            num(tau),
            report.best_k,
            num(report.best_step),
            num(report.sigma2_q),
            c
        ));
    }
    if optimize && points.len() >= PLATEAU_POINTS {
        let e = extrapolate_long_term(&points, p.omega0, PLATEAU_POINTS, PLATEAU_FLATNESS)?;
        summary.push(match e.c {
            Some(c) => format!("plateau c={c:.4} rad^2 s (spread {:.2}%)", 100.0 * e.spread),
            None => format!(
                "plateau inconclusive: spread {:.2}% > {}%, mean {:.4}",
                100.0 * e.spread,
                100.0 * PLATEAU_FLATNESS,
                e.mean
            ),
        });
    }
    Ok(Output {
        csv,
        summary,
        all_skipped: points.is_empty(),
    })
}

fn sim_config(cfg: &RunConfig) -> Result<SimConfig, Error> {
    Ok(SimConfig {
        noise: noise(cfg)?,
        n_atoms: cfg.atoms,
        step: cfg.sim.step,
        n_steps: cfg.sim.steps,
        servo: servo(cfg)?,
        seed: cfg.seed,
    })
}

fn simulate(cfg: &RunConfig) -> Result<Output, Error> {
    let sim = sim_config(cfg)?;
    let rows = ensemble_avar(&sim, &cfg.tau, cfg.sim.runs, cfg.seed)?;
    let mut csv = header(cfg, &["tau", "k", "T", "avar", "stderr", "n_pairs", "seed"]);
    let mut summary = Vec::new();
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            num(r.tau),
            r.k,
            num(sim.step),
            num(r.avar),
            num(r.stderr),
            r.n_pairs,
            cfg.seed
        );
        summary.push(format!(
            "tau={} avar={} +- {}",
            num(r.tau),
            num(r.avar),
            num(r.stderr)
        ));
    }
    Ok(Output {
        csv,
        summary,
        all_skipped: false,
    })
}

fn check(cfg: &RunConfig) -> Result<Output, Error> {
    let sim = sim_config(cfg)?;
    let state = fixed_state(cfg)?;
    let scenario = Scenario::new(sim.noise, cfg.atoms, 1, sim.step, Probe::Product(state))?;
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for &tau in &cfg.tau {
        let k = (tau / sim.step).round() as usize;
        match joint_dim(cfg.atoms, 2 * k - 1) {
            Ok(d) if d <= cfg.dimension_cap => kept.push(tau),
            Ok(d) => skipped.push((tau, d.to_string())),
            Err(_) => skipped.push((tau, "overflow".to_string())),
        }
    }
    let rows = if kept.is_empty() {
        Vec::new()
    } else {
        bound_check(&sim, &scenario, &kept, cfg.sim.runs, cfg.seed)?
    };
    let mut csv = header(
        cfg,
        &[
            "tau",
            "k",
            "T",
            "avar",
            "stderr",
            "n_pairs",
            "sigma2_q",
            "sigma2_lo",
            "violation",
            "seed",
        ],
    );
    let mut summary = Vec::new();
    for (tau, d) in &skipped {
        let _ = writeln!(
            csv,
            "# skipped tau={}: dimension {d} exceeds cap {}",
            num(*tau),
            cfg.dimension_cap
        );
        summary.push(format!(
            "tau={} skipped: dimension {d} > cap {}",
            num(*tau),
            cfg.dimension_cap
        ));
    }
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            num(r.tau),
            r.k,
            num(sim.step),
            num(r.avar),
            num(r.stderr),
            r.n_pairs,
            num(r.sigma2_q),
            num(r.sigma2_lo),
            r.violation,
            cfg.seed
        );
        summary.push(format!(
            "tau={} avar/bound={:.3}{}",
            num(r.tau),
            r.avar / r.sigma2_q,
            if r.violation { " VIOLATION" } else { "" }
        ));
    }
    Ok(Output {
        csv,
        summary,
        all_skipped: rows.is_empty(),
    })
}
