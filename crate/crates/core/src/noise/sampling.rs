use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{avar_shape, KernelSet, NoiseParams};
use crate::error::{domain, Error, Result};

const PSD_TOL: f64 = 1e-10;

/// Exact sampler for the zero-mean Gaussian vector `(theta_1, .., theta_K, w)`
/// with covariance `[[G, H], [H^T, w_var]]`.
#[derive(Debug, Clone)]
pub struct JointSampler {
    factor: Mat<f64>,
}

impl JointSampler {
    pub fn new(kernels: &KernelSet) -> Result<Self> {
        Self::from_covariance(&kernels.joint_covariance())
    }

    /// Builds a sampler from any symmetric PSD covariance via its
    /// eigendecomposition, so rank-deficient covariances are fine.
    pub fn from_covariance(cov: &Mat<f64>) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: cov.ncols(),
            });
        }
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
        let evd = sym
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("covariance eigensolve: {e:?}")))?;
        let s = evd.S().column_vector();
        let lmax = (0..n).map(|i| s[i]).fold(0.0f64, f64::max);
        let lmin = (0..n).map(|i| s[i]).fold(f64::INFINITY, f64::min);
        if lmin < -PSD_TOL * lmax.max(1.0) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: lmin,
            });
        }
        let u = evd.U();
        let factor = Mat::from_fn(n, n, |i, j| u[(i, j)] * s[j].max(0.0).sqrt());
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Draws one vector into `out` (length `dim`), using `z` as scratch.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let n = self.dim();
        for zi in z.iter_mut().take(n) {
            *zi = rng.sample(StandardNormal);
        }
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate().take(n) {
                acc += self.factor[(i, j)] * zj;
            }
            *o = acc;
        }
    }
}

/// Draws `n_samples` rows of `(theta_1, .., theta_K, w)` for the layout
/// `(step, k)`. Deterministic in `seed`.
pub fn sample_joint(
    params: &NoiseParams,
    step: f64,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Mat<f64>> {
    if n_samples == 0 {
        return domain("n_samples must be >= 1");
    }
    let kernels = KernelSet::new(params, step, k)?;
    let sampler = JointSampler::new(&kernels)?;
    let dim = sampler.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    let mut out = Mat::zeros(n_samples, dim);
    for s in 0..n_samples {
        sampler.sample_into(&mut rng, &mut z, &mut row);
        for (j, v) in row.iter().enumerate() {
            out[(s, j)] = *v;
        }
    }
    Ok(out)
}

/// Sequential exact sampler of the phases `theta_i` accumulated by the LO over
/// consecutive steps of length `step`.
///
/// The OU state at step boundaries and its integral over the step are jointly
/// Gaussian given the previous state; the white part adds an independent
/// `N(0, beta * step)` term. The OU state starts from its stationary law.
#[derive(Debug, Clone)]
pub struct PhaseIncrementSampler {
    decay: f64,
    carry: f64,
    l11: f64,
    l21: f64,
    l22: f64,
    white_sd: f64,
    state: f64,
}

impl PhaseIncrementSampler {
    pub fn new<R: Rng + ?Sized>(params: &NoiseParams, step: f64, rng: &mut R) -> Result<Self> {
        params.validate()?;
        if !(step.is_finite() && step > 0.0) {
            return domain(format!("step duration must be > 0, got {step}"));
        }
        let NoiseParams {
            alpha, beta, gamma, ..
        } = *params;
        let x = gamma * step;
        let decay = (-x).exp();
        let edge = -(-x).exp_m1();
        // Var(x_next | x), Cov(x_next, I | x), Var(I | x)
        let v11 = alpha * -(-2.0 * x).exp_m1();
        let v12 = alpha / gamma * edge * edge;
        let v22 = alpha / (gamma * gamma) * avar_shape(x);
        let l11 = v11.sqrt();
        let l21 = if l11 > 0.0 { v12 / l11 } else { 0.0 };
        let l22 = (v22 - l21 * l21).max(0.0).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        Ok(Self {
            decay,
            carry: edge / gamma,
            l11,
            l21,
            l22,
            white_sd: (beta * step).sqrt(),
            state: alpha.sqrt() * z,
        })
    }

    /// Phase accumulated over the next step, rad.
    pub fn next_phase<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let z3: f64 = rng.sample(StandardNormal);
        let phase = self.carry * self.state + self.l21 * z1 + self.l22 * z2 + self.white_sd * z3;
        self.state = self.decay * self.state + self.l11 * z1;
        phase
    }
}
