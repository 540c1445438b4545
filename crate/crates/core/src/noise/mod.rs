//! Gaussian local-oscillator noise: an Ornstein-Uhlenbeck component plus
//! white frequency noise, with autocorrelation
//! `R(t) = alpha * exp(-gamma |t|) + beta * delta(t)`.
//!
//! Every quantity the bound needs is a double integral of `R` over pairs of
//! time intervals. The delta part is never discretized: it contributes the
//! overlap length of the two intervals times `beta`.

mod sampling;
mod traces;

pub use sampling::{sample_joint, JointSampler, PhaseIncrementSampler};
pub use traces::{gen_trace, TraceKind};

use faer::Mat;

use crate::error::{domain, Result};

/// Parameters of the OU-plus-white LO noise model and the carrier frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// OU variance, (rad/s)^2.
    pub alpha: f64,
    /// White frequency noise intensity, (rad/s)^2 s.
    pub beta: f64,
    /// OU decay rate, 1/s.
    pub gamma: f64,
    /// Carrier angular frequency, rad/s.
    pub omega0: f64,
}

impl NoiseParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, omega0: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            omega0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return domain(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return domain(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return domain(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return domain(format!("omega0 must be > 0, got {}", self.omega0));
        }
        Ok(())
    }

    /// Smooth part of the autocorrelation, `alpha * exp(-gamma t)`.
    pub fn autocorrelation(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return domain(format!("autocorrelation lag must be >= 0, got {t}"));
        }
        Ok(self.alpha * (-self.gamma * t).exp())
    }

    /// Covariance of the phases accumulated over two steps of length `step`
    /// whose start times differ by `lag` steps.
    pub fn step_covariance(&self, step: f64, lag: usize) -> f64 {
        let g2 = self.gamma * self.gamma;
        let x = self.gamma * step;
        if lag == 0 {
            2.0 * self.alpha * phi_shape(x) / g2 + self.beta * step
        } else {
            let decay = (-x * (lag - 1) as f64).exp();
            let edge = (-x).exp_m1();
            self.alpha / g2 * decay * edge * edge
        }
    }

    /// Block covariance `G_ij` of the step phases over `steps` steps.
    pub fn block_kernel(&self, step: f64, steps: usize) -> Result<Mat<f64>> {
        check_step(step)?;
        if steps == 0 {
            return domain("block kernel needs at least one step");
        }
        let lags: Vec<f64> = (0..steps).map(|m| self.step_covariance(step, m)).collect();
        Ok(Mat::from_fn(steps, steps, |i, j| lags[i.abs_diff(j)]))
    }

    /// Cross kernel `H_i = Cov(theta_i, w)` for the `2k - 1` measured steps,
    /// where `w` is the difference between the mean frequencies of the
    /// windows `[tau, 2 tau]` and `[0, tau]`, `tau = k * step`.
    pub fn cross_kernel(&self, step: f64, k: usize) -> Result<Vec<f64>> {
        check_step(step)?;
        if k == 0 {
            return domain("cross kernel needs k >= 1");
        }
        let tau = k as f64 * step;
        let lags: Vec<f64> = (0..2 * k).map(|m| self.step_covariance(step, m)).collect();
        Ok((0..2 * k - 1)
            .map(|i| {
                let late: f64 = (k..2 * k).map(|j| lags[i.abs_diff(j)]).sum();
                let early: f64 = (0..k).map(|j| lags[i.abs_diff(j)]).sum();
                (late - early) / tau
            })
            .collect())
    }

    /// Variance of the difference of the window-mean frequencies, (rad/s)^2.
    pub fn window_difference_variance(&self, tau: f64) -> Result<f64> {
        if !(tau.is_finite() && tau > 0.0) {
            return domain(format!("averaging time must be > 0, got {tau}"));
        }
        let x = self.gamma * tau;
        let ou = self.alpha * avar_shape(x) / (self.gamma * self.gamma);
        Ok(2.0 * (ou + self.beta * tau) / (tau * tau))
    }
}

/// Fractional Allan variance of the free-running LO at averaging time `tau`.
pub fn free_lo_avar(params: &NoiseParams, tau: f64) -> Result<f64> {
    let w_var = params.window_difference_variance(tau)?;
    Ok(w_var / (2.0 * params.omega0 * params.omega0))
}

fn check_step(step: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return domain(format!("step duration must be > 0, got {step}"));
    }
    Ok(())
}

/// `x - 1 + exp(-x)`, accurate for small `x`.
pub(crate) fn phi_shape(x: f64) -> f64 {
    if x < 0.5 {
        // sum_{n>=2} (-x)^n / n!
        let mut term = x * x / 2.0;
        let mut sum = term;
        for n in 3..40 {
            term *= -x / n as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        x - 1.0 + (-x).exp()
    }
}

/// `2x - 3 + 4 exp(-x) - exp(-2x)`, accurate for small `x`.
pub(crate) fn avar_shape(x: f64) -> f64 {
    if x < 0.5 {
        // sum_{n>=3} (-1)^n (4 - 2^n) x^n / n!
        let mut pow = x * x * x / 6.0;
        let mut two = 8.0;
        let mut sum = 0.0;
        for n in 3..60 {
            if n > 3 {
                pow *= x / n as f64;
                two *= 2.0;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let term = sign * (4.0 - two) * pow;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        2.0 * x - 3.0 + 4.0 * (-x).exp() - (-2.0 * x).exp()
    }
}

/// Kernels for one interrogation layout: `k` steps of length `step` per
/// averaging window, so `2k - 1` measured steps.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub params: NoiseParams,
    pub step: f64,
    pub k: usize,
    /// Block covariance of the step phases, `(2k-1) x (2k-1)`, rad^2.
    pub g: Mat<f64>,
    /// `Cov(theta_i, w)`, rad^2/s.
    pub h: Vec<f64>,
    /// Free-running fractional AVAR at `tau = k * step`.
    pub sigma2_lo: f64,
    /// Variance of the window frequency difference `w`, (rad/s)^2.
    pub w_var: f64,
}

impl KernelSet {
    pub fn new(params: &NoiseParams, step: f64, k: usize) -> Result<Self> {
        params.validate()?;
        if k == 0 {
            return domain("k must be >= 1");
        }
        let g = params.block_kernel(step, 2 * k - 1)?;
        let h = params.cross_kernel(step, k)?;
        let tau = step * k as f64;
        let w_var = params.window_difference_variance(tau)?;
        Ok(Self {
            params: *params,
            step,
            k,
            g,
            h,
            sigma2_lo: w_var / (2.0 * params.omega0 * params.omega0),
            w_var,
        })
    }

    /// Number of measured steps, `2k - 1`.
    pub fn steps(&self) -> usize {
        2 * self.k - 1
    }

    pub fn tau(&self) -> f64 {
        self.step * self.k as f64
    }

    /// The bordered covariance of `(theta_1, .., theta_K, w)`.
    pub fn joint_covariance(&self) -> Mat<f64> {
        let n = self.steps();
        Mat::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
            (true, true) => self.g[(i, j)],
            (true, false) => self.h[i],
            (false, true) => self.h[j],
            (false, false) => self.w_var,
        })
    }
}
