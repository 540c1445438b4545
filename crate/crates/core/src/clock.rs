//! Ramsey + integrator-servo clock simulator and Allan variance estimators.
//!
//! Each step the LO phase `theta_i` is drawn exactly from the noise model, the
//! atoms see `phi_i = theta_i - c_i T` and are read out at mid-fringe with
//! `p = (1 + sin phi)/2`, and the correction integrates the phase estimate:
//! `c_{i+1} = c_i + gain * phi_hat / T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::bound::Scenario;
use crate::error::{domain, Error, Result};
use crate::noise::{NoiseParams, PhaseIncrementSampler};

/// How the excitation count is turned into a phase estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `2m/N - 1`
    Linear,
    /// `asin(2m/N - 1)`
    Arcsine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoConfig {
    pub gain: f64,
    pub estimator: Estimator,
}

impl ServoConfig {
    pub fn new(gain: f64, estimator: Estimator) -> Result<Self> {
        if !(gain > 0.0 && gain <= 1.0) {
            return domain(format!("servo gain must be in (0, 1], got {gain}"));
        }
        Ok(Self { gain, estimator })
    }
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            gain: 0.5,
            estimator: Estimator::Linear,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub noise: NoiseParams,
    pub n_atoms: usize,
    /// Interrogation time `T`, s.
    pub step: f64,
    pub n_steps: usize,
    /// `None` runs the LO free, without atoms or feedback.
    pub servo: Option<ServoConfig>,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.n_atoms == 0 {
            return domain("need at least one atom");
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return domain(format!("step must be > 0, got {}", self.step));
        }
        if self.n_steps < 2 {
            return domain("need at least two steps");
        }
        if let Some(servo) = self.servo {
            ServoConfig::new(servo.gain, servo.estimator)?;
        }
        Ok(())
    }
}

/// Output of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrace {
    pub step: f64,
    pub n_atoms: usize,
    /// Corrected mean frequency detuning over each step, rad/s.
    pub y: Vec<f64>,
    /// Correction applied during each step, rad/s.
    pub corrections: Vec<f64>,
    /// Measured excitation counts.
    pub outcomes: Vec<usize>,
}

pub fn simulate_clock(config: &SimConfig) -> Result<FrequencyTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run(config, &mut rng)
}

fn run<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<FrequencyTrace> {
    let t = config.step;
    let n = config.n_atoms;
    let mut lo = PhaseIncrementSampler::new(&config.noise, t, rng)?;
    let mut y = Vec::with_capacity(config.n_steps);
    let mut corrections = Vec::with_capacity(config.n_steps);
    let mut outcomes = Vec::with_capacity(config.n_steps);
    let mut c = 0.0;
    for _ in 0..config.n_steps {
        let theta = lo.next_phase(rng);
        y.push(theta / t - c);
        corrections.push(c);
        let Some(servo) = config.servo else {
            outcomes.push(0);
            continue;
        };
        let phi = theta - c * t;
        let p = (0.5 * (1.0 + phi.sin())).clamp(0.0, 1.0);
        let m = Binomial::new(n as u64, p)
            .map_err(|e| Error::Numerical(format!("binomial: {e}")))?
            .sample(rng) as usize;
        outcomes.push(m);
        let x = 2.0 * m as f64 / n as f64 - 1.0;
        let estimate = match servo.estimator {
            Estimator::Linear => x,
            Estimator::Arcsine => x.clamp(-1.0, 1.0).asin(),
        };
        c += servo.gain * estimate / t;
    }
    Ok(FrequencyTrace {
        step: t,
        n_atoms: n,
        y,
        corrections,
        outcomes,
    })
}

/// Allan variance of a series of per-sample mean frequencies at `m` samples
/// per window, in the units of `y` squared. Returns the estimate and the
/// number of difference pairs used.
pub fn allan_variance(y: &[f64], m: usize, overlapping: bool) -> Result<(f64, usize)> {
    if m == 0 {
        return domain("window length must be >= 1");
    }
    if y.len() < 2 * m {
        return domain(format!(
            "need at least {} samples for window {m}, got {}",
            2 * m,
            y.len()
        ));
    }
    let mut prefix = Vec::with_capacity(y.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in y {
        acc += v;
        prefix.push(acc);
    }
    let mean = |s: usize| (prefix[s + m] - prefix[s]) / m as f64;
    let stride = if overlapping { 1 } else { m };
    let starts = (0..=y.len() - 2 * m).step_by(stride);
    let mut sum = 0.0;
    let mut pairs = 0;
    for s in starts {
        let d = mean(s + m) - mean(s);
        sum += d * d;
        pairs += 1;
    }
    Ok((sum / (2.0 * pairs as f64), pairs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvarEstimate {
    pub tau: f64,
    /// Fractional Allan variance.
    pub avar: f64,
    pub n_pairs: usize,
}

/// Fractional AVAR of a simulated trace at `tau = k * T`.
pub fn avar_estimate(
    trace: &FrequencyTrace,
    k: usize,
    omega0: f64,
    overlapping: bool,
) -> Result<AvarEstimate> {
    let (raw, n_pairs) = allan_variance(&trace.y, k, overlapping)?;
    Ok(AvarEstimate {
        tau: k as f64 * trace.step,
        avar: raw / (omega0 * omega0),
        n_pairs,
    })
}

/// One row of a simulation-versus-bound comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckRow {
    pub tau: f64,
    pub k: usize,
    /// Ensemble mean of the simulated fractional AVAR.
    pub avar: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub sigma2_q: f64,
    pub sigma2_lo: f64,
    /// Set when `avar + 3 * stderr < sigma2_q`.
    pub violation: bool,
}

/// Simulates `n_runs` independent clocks and compares the ensemble AVAR at
/// each `tau` with the bound of `scenario` evaluated at `k = tau / T`
/// interrogation steps of the simulated length `T`.
pub fn bound_check(
    config: &SimConfig,
    scenario: &Scenario,
    taus: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<BoundCheckRow>> {
    config.validate()?;
    if config.noise != scenario.noise {
        return domain("simulation and bound use different noise parameters");
    }
    if scenario.n_atoms != config.n_atoms {
        return Err(Error::DimensionMismatch {
            expected: config.n_atoms,
            actual: scenario.n_atoms,
        });
    }
    if n_runs < 2 {
        return domain("need at least two runs for a standard error");
    }
    let ensemble = ensemble_avar(config, taus, n_runs, seed)?;
    let mut rows = Vec::with_capacity(taus.len());
    for e in ensemble {
        let mut s = scenario.clone();
        s.k = e.k;
        s.step = config.step;
        let q = s.qavar()?;
        rows.push(BoundCheckRow {
            tau: e.tau,
            k: e.k,
            avar: e.avar,
            stderr: e.stderr,
            n_pairs: e.n_pairs,
            sigma2_q: q.sigma2_q,
            sigma2_lo: q.sigma2_lo,
            violation: e.avar + 3.0 * e.stderr < q.sigma2_q,
        });
    }
    Ok(rows)
}

/// Ensemble-mean fractional AVAR at one averaging time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAvar {
    pub tau: f64,
    pub k: usize,
    pub avar: f64,
    /// Standard error of the mean across runs.
    pub stderr: f64,
    /// Overlapping pairs per run.
    pub n_pairs: usize,
}

/// Runs `n_runs` independent clocks (run `r` uses stream `r` of `seed`) and
/// averages the overlapping AVAR of each run at every `tau`.
pub fn ensemble_avar(
    config: &SimConfig,
    taus: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<EnsembleAvar>> {
    config.validate()?;
    if n_runs < 2 {
        return domain("need at least two runs for a standard error");
    }
    let ks = taus
        .iter()
        .map(|&tau| steps_per_window(tau, config.step))
        .collect::<Result<Vec<_>>>()?;

    let per_run: Vec<Vec<(f64, usize)>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let trace = run(config, &mut rng)?;
            ks.iter()
                .map(|&k| {
                    let a = avar_estimate(&trace, k, config.noise.omega0, true)?;
                    Ok((a.avar, a.n_pairs))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(taus
        .iter()
        .zip(&ks)
        .enumerate()
        .map(|(j, (&tau, &k))| {
            let n = n_runs as f64;
            let mean = per_run.iter().map(|r| r[j].0).sum::<f64>() / n;
            let var = per_run.iter().map(|r| (r[j].0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            EnsembleAvar {
                tau,
                k,
                avar: mean,
                stderr: (var / n).sqrt(),
                n_pairs: per_run[0][j].1,
            }
        })
        .collect())
}

/// `tau / step` when it is a whole number of steps.
pub fn steps_per_window(tau: f64, step: f64) -> Result<usize> {
    let k = (tau / step).round();
    if k.is_nan() || k < 1.0 || ((tau / step) - k).abs() > 1e-9 * k {
        return domain(format!("tau = {tau} is not a multiple of T = {step}"));
    }
    Ok(k as usize)
}
