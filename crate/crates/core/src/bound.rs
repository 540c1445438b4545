//! The quantum Allan variance bound.
//!
//! For a probe input `rho_in` on the joint space of the `K = 2k - 1` measured
//! steps, the noise-averaged state and its frequency-weighted counterpart are
//!
//! ```text
//! rho_bar[a][b]   = rho_in[a][b] * exp(-1/2 (b-a)^T G (b-a))
//! rho_prime[a][b] = rho_bar[a][b] * i * sum_i (b_i - a_i) H_i
//! ```
//!
//! (exact for Gaussian noise by the cumulant expansion), and the bound is
//! `sigma2_q = sigma2_lo - (1/omega0^2) sum_rs |<r|rho_prime|s>|^2 / (l_r + l_s)`
//! over the eigenpairs of `rho_bar`.
//!
//! Both averaged operators are Hadamard products of `rho_in` with matrices
//! that do not depend on the input, so a diagonal unitary applied to the
//! input commutes through and leaves the bound unchanged. Inputs with real
//! entries therefore take a real symmetric fast path.

use faer::{c64, Mat, Scale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::hilbert::{
    digit_table, eigh, eigh_real, joint_dim, product_density, trace, JointDensity, SymmetricState,
};
use crate::noise::{JointSampler, KernelSet, NoiseParams};

/// Default relative support tolerance: eigenpairs with
/// `l_r + l_s <= SUPPORT_TOL * l_max` are dropped from the SLD solve.
pub const SUPPORT_TOL: f64 = 1e-12;

/// The probe fed into the `2k - 1` interrogation steps.
#[derive(Debug, Clone)]
pub enum Probe {
    /// The same pure state at every step.
    Product(SymmetricState),
    /// The same density at every step, `(N+1) x (N+1)`.
    ProductMixed(Mat<c64>),
    /// A normalized pure state on the whole joint space.
    Joint(Vec<c64>),
    /// An arbitrary joint density.
    JointMixed(JointDensity),
}

/// One bound evaluation: noise, atom number, layout and probe.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub noise: NoiseParams,
    pub n_atoms: usize,
    pub k: usize,
    pub step: f64,
    pub probe: Probe,
    pub support_tol: f64,
}

/// Result of a QAVAR evaluation. All variances are fractional (dimensionless).
#[derive(Debug, Clone)]
pub struct QavarResult {
    pub sigma2_lo: f64,
    pub correction: f64,
    pub sigma2_q: f64,
    /// The optimal strategy operator `L`, when requested.
    pub operator: Option<Mat<c64>>,
    pub tau: f64,
    pub omega0: f64,
    pub support_tol: f64,
    /// Eigenpairs skipped by the support tolerance.
    pub dropped_pairs: usize,
}

impl QavarResult {
    /// `sigma2_q * omega0^2 * tau`, rad^2 s.
    pub fn stability_constant(&self) -> f64 {
        self.sigma2_q * self.omega0 * self.omega0 * self.tau
    }
}

impl Scenario {
    pub fn new(
        noise: NoiseParams,
        n_atoms: usize,
        k: usize,
        step: f64,
        probe: Probe,
    ) -> Result<Self> {
        let s = Self {
            noise,
            n_atoms,
            k,
            step,
            probe,
            support_tol: SUPPORT_TOL,
        };
        s.validate()?;
        Ok(s)
    }

    /// Layout with `tau = k * step`.
    pub fn at_tau(
        noise: NoiseParams,
        n_atoms: usize,
        tau: f64,
        k: usize,
        probe: Probe,
    ) -> Result<Self> {
        if k == 0 {
            return domain("k must be >= 1");
        }
        Self::new(noise, n_atoms, k, tau / k as f64, probe)
    }

    pub fn with_support_tol(mut self, tol: f64) -> Self {
        self.support_tol = tol;
        self
    }

    pub fn with_probe(&self, probe: Probe) -> Result<Self> {
        let mut s = self.clone();
        s.probe = probe;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.n_atoms == 0 {
            return domain("need at least one atom");
        }
        if self.k == 0 {
            return domain("k must be >= 1");
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return domain(format!("step duration must be > 0, got {}", self.step));
        }
        if self.support_tol.is_nan() || self.support_tol < 0.0 {
            return domain("support tolerance must be >= 0");
        }
        let levels = self.n_atoms + 1;
        let dim = self.dim()?;
        let mismatch = |actual| {
            Err(Error::DimensionMismatch {
                expected: levels,
                actual,
            })
        };
        match &self.probe {
            Probe::Product(s) if s.n_atoms() != self.n_atoms => mismatch(s.n_atoms() + 1),
            Probe::ProductMixed(m) if m.nrows() != levels || m.ncols() != levels => {
                mismatch(m.nrows())
            }
            Probe::ProductMixed(m) => JointDensity::new(m.clone(), self.n_atoms, 1).map(|_| ()),
            Probe::Joint(v) if v.len() != dim => Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            }),
            Probe::Joint(v) => {
                let norm: f64 = v.iter().map(|a| a.norm_sqr()).sum();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidState(format!("joint state norm^2 {norm}")));
                }
                Ok(())
            }
            Probe::JointMixed(r) if r.dim() != dim || r.n_atoms() != self.n_atoms => {
                Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.dim(),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn steps(&self) -> usize {
        2 * self.k - 1
    }

    pub fn dim(&self) -> Result<usize> {
        joint_dim(self.n_atoms, self.steps())
    }

    pub fn tau(&self) -> f64 {
        self.step * self.k as f64
    }

    pub fn kernels(&self) -> Result<KernelSet> {
        KernelSet::new(&self.noise, self.step, self.k)
    }

    /// The joint input density `rho_in`.
    pub fn input_density(&self) -> Result<JointDensity> {
        match self.input()? {
            Input::Pure(v) => JointDensity::from_pure(&v, self.n_atoms, self.steps()),
            Input::Mixed(m) => JointDensity::unchecked(m, self.n_atoms, self.steps()),
        }
    }

    fn input(&self) -> Result<Input> {
        let steps = self.steps();
        Ok(match &self.probe {
            Probe::Product(s) => Input::Pure(joint_amplitudes(s.amplitudes(), steps)),
            Probe::ProductMixed(m) => Input::Mixed(product_density(m, steps)?.into_matrix()),
            Probe::Joint(v) => Input::Pure(v.clone()),
            Probe::JointMixed(r) => Input::Mixed(r.matrix().clone()),
        })
    }

    /// The bound without the strategy operator.
    pub fn qavar(&self) -> Result<QavarResult> {
        self.evaluate(false)
    }

    /// The bound together with the optimal strategy operator `L`.
    pub fn qavar_with_operator(&self) -> Result<QavarResult> {
        self.evaluate(true)
    }

    fn evaluate(&self, want_operator: bool) -> Result<QavarResult> {
        self.validate()?;
        let kernels = self.kernels()?;
        let table = PhaseTable::new(&kernels, self.n_atoms);
        let spectrum = match self.input()? {
            Input::Pure(v) if v.iter().all(|a| a.im == 0.0) => {
                let re: Vec<f64> = v.iter().map(|a| a.re).collect();
                let (s, a) = table.real_pure(&re);
                real_spectrum(&s, &a, self.support_tol, want_operator)?
            }
            Input::Mixed(m) if m.col_iter().all(|c| c.iter().all(|x| x.im == 0.0)) => {
                let re = Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re);
                let (s, a) = table.real_mixed(&re);
                real_spectrum(&s, &a, self.support_tol, want_operator)?
            }
            input => {
                let rho = input.into_matrix();
                let (bar, prime) = table.complex(&rho);
                complex_spectrum(&bar, &prime, self.support_tol, want_operator)?
            }
        };
        Ok(finish(&kernels, spectrum, self.support_tol))
    }
}

fn finish(kernels: &KernelSet, spectrum: Spectrum, tol: f64) -> QavarResult {
    let w2 = kernels.params.omega0 * kernels.params.omega0;
    QavarResult {
        sigma2_lo: kernels.sigma2_lo,
        correction: spectrum.correction / w2,
        sigma2_q: (0.5 * kernels.w_var - spectrum.correction) / w2,
        operator: spectrum.operator,
        tau: kernels.tau(),
        omega0: kernels.params.omega0,
        support_tol: tol,
        dropped_pairs: spectrum.dropped,
    }
}

enum Input {
    Pure(Vec<c64>),
    Mixed(Mat<c64>),
}

impl Input {
    fn into_matrix(self) -> Mat<c64> {
        match self {
            Input::Pure(v) => Mat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj()),
            Input::Mixed(m) => m,
        }
    }
}

/// Amplitudes of `psi^{(x) steps}` in the joint basis.
pub(crate) fn joint_amplitudes<T>(single: &[T], steps: usize) -> Vec<T>
where
    T: Copy + std::ops::Mul<Output = T>,
{
    let mut out: Vec<T> = single.to_vec();
    for _ in 1..steps {
        out = out
            .iter()
            .flat_map(|&hi| single.iter().map(move |&lo| hi * lo))
            .collect();
    }
    out
}

/// Per-layout lookup tables: the Gaussian decay factor depends only on the
/// digit difference `b - a`, whose base-`(2N+1)` code is
/// `enc[b] - enc[a] + offset`; the drift term is `hsum[b] - hsum[a]`.
pub(crate) struct PhaseTable {
    dim: usize,
    decay: Vec<f64>,
    enc: Vec<usize>,
    offset: usize,
    hsum: Vec<f64>,
}

impl PhaseTable {
    pub(crate) fn new(kernels: &KernelSet, n_atoms: usize) -> Self {
        let steps = kernels.steps();
        let base = n_atoms + 1;
        let wide = 2 * n_atoms + 1;
        let digits = digit_table(n_atoms, steps);
        let dim = base.pow(steps as u32);

        let mut enc = vec![0usize; dim];
        let mut hsum = vec![0.0; dim];
        for idx in 0..dim {
            let d = &digits[idx * steps..(idx + 1) * steps];
            enc[idx] = d.iter().fold(0, |acc, &x| acc * wide + x as usize);
            hsum[idx] = d.iter().zip(&kernels.h).map(|(&x, h)| x as f64 * h).sum();
        }
        let offset = (0..steps).fold(0, |acc, _| acc * wide + n_atoms);

        let n_codes = wide.pow(steps as u32);
        let mut delta = vec![0.0f64; steps];
        let decay = (0..n_codes)
            .map(|code| {
                let mut rest = code;
                for d in delta.iter_mut().rev() {
                    *d = (rest % wide) as f64 - n_atoms as f64;
                    rest /= wide;
                }
                let mut q = 0.0;
                for (i, &di) in delta.iter().enumerate() {
                    if di == 0.0 {
                        continue;
                    }
                    let row: f64 = delta
                        .iter()
                        .enumerate()
                        .map(|(j, &dj)| kernels.g[(i, j)] * dj)
                        .sum();
                    q += di * row;
                }
                (-0.5 * q).exp()
            })
            .collect();
        Self {
            dim,
            decay,
            enc,
            offset,
            hsum,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub(crate) fn decay(&self, a: usize, b: usize) -> f64 {
        self.decay[self.enc[b] + self.offset - self.enc[a]]
    }

    #[inline]
    pub(crate) fn drift(&self, a: usize, b: usize) -> f64 {
        self.hsum[b] - self.hsum[a]
    }

    /// `(rho_bar, A)` with `rho_prime = i A` for a real pure input.
    pub(crate) fn real_pure(&self, psi: &[f64]) -> (Mat<f64>, Mat<f64>) {
        let n = self.dim;
        let s = Mat::from_fn(n, n, |a, b| psi[a] * psi[b] * self.decay(a, b));
        let a = Mat::from_fn(n, n, |a, b| s[(a, b)] * self.drift(a, b));
        (s, a)
    }

    pub(crate) fn real_mixed(&self, rho: &Mat<f64>) -> (Mat<f64>, Mat<f64>) {
        let n = self.dim;
        let s = Mat::from_fn(n, n, |a, b| rho[(a, b)] * self.decay(a, b));
        let a = Mat::from_fn(n, n, |a, b| s[(a, b)] * self.drift(a, b));
        (s, a)
    }

    pub(crate) fn complex(&self, rho: &Mat<c64>) -> (Mat<c64>, Mat<c64>) {
        let n = self.dim;
        let bar = Mat::from_fn(n, n, |a, b| rho[(a, b)] * self.decay(a, b));
        let prime = Mat::from_fn(n, n, |a, b| bar[(a, b)] * c64::new(0.0, self.drift(a, b)));
        (bar, prime)
    }
}

pub(crate) struct Spectrum {
    /// `sum_rs |<r|rho_prime|s>|^2 / (l_r + l_s)`, (rad/s)^2.
    pub correction: f64,
    pub dropped: usize,
    pub operator: Option<Mat<c64>>,
}

/// SLD solve for real symmetric `rho_bar = s` and `rho_prime = i a` with `a`
/// antisymmetric. The operator, when built, is `L = i V M V^T`.
pub(crate) fn real_spectrum(
    s: &Mat<f64>,
    a: &Mat<f64>,
    tol: f64,
    want_operator: bool,
) -> Result<Spectrum> {
    let (lambda, v) = eigh_real(s)?;
    let p = v.transpose() * a * &v;
    let n = lambda.len();
    let cut = tol * lambda[n - 1].max(0.0);
    let mut correction = 0.0;
    let mut dropped = 0;
    let mut m = if want_operator {
        Some(Mat::<f64>::zeros(n, n))
    } else {
        None
    };
    for j in 0..n {
        for i in 0..n {
            let denom = lambda[i] + lambda[j];
            if denom > cut {
                let x = p[(i, j)];
                correction += x * x / denom;
                if let Some(m) = m.as_mut() {
                    m[(i, j)] = 2.0 * x / denom;
                }
            } else {
                dropped += 1;
            }
        }
    }
    let operator = m.map(|m| {
        let l = &v * &m * v.transpose();
        Mat::from_fn(n, n, |i, j| c64::new(0.0, l[(i, j)]))
    });
    Ok(Spectrum {
        correction,
        dropped,
        operator,
    })
}

pub(crate) fn complex_spectrum(
    bar: &Mat<c64>,
    prime: &Mat<c64>,
    tol: f64,
    want_operator: bool,
) -> Result<Spectrum> {
    let e = eigh(bar)?;
    let v = &e.vectors;
    let p = v.adjoint() * prime * v;
    let n = e.values.len();
    let cut = tol * e.values[n - 1].max(0.0);
    let mut correction = 0.0;
    let mut dropped = 0;
    let mut m = if want_operator {
        Some(Mat::<c64>::zeros(n, n))
    } else {
        None
    };
    for j in 0..n {
        for i in 0..n {
            let denom = e.values[i] + e.values[j];
            if denom > cut {
                let x = p[(i, j)];
                correction += x.norm_sqr() / denom;
                if let Some(m) = m.as_mut() {
                    m[(i, j)] = x * (2.0 / denom);
                }
            } else {
                dropped += 1;
            }
        }
    }
    let operator = m.map(|m| v * &m * v.adjoint());
    Ok(Spectrum {
        correction,
        dropped,
        operator,
    })
}

fn check_kernels(scenario: &Scenario, kernels: &KernelSet) -> Result<()> {
    if kernels.k != scenario.k {
        return Err(Error::DimensionMismatch {
            expected: scenario.k,
            actual: kernels.k,
        });
    }
    if kernels.step != scenario.step || kernels.params != scenario.noise {
        return domain("kernels were built for a different step or noise model");
    }
    Ok(())
}

/// The noise-averaged joint state `rho_bar`.
pub fn build_rho_bar(scenario: &Scenario, kernels: &KernelSet) -> Result<JointDensity> {
    check_kernels(scenario, kernels)?;
    let table = PhaseTable::new(kernels, scenario.n_atoms);
    let rho = scenario.input()?.into_matrix();
    let (bar, _) = table.complex(&rho);
    JointDensity::unchecked(bar, scenario.n_atoms, scenario.steps())
}

/// The frequency-weighted average `rho_prime`.
pub fn build_rho_prime(scenario: &Scenario, kernels: &KernelSet) -> Result<Mat<c64>> {
    check_kernels(scenario, kernels)?;
    let table = PhaseTable::new(kernels, scenario.n_atoms);
    let rho = scenario.input()?.into_matrix();
    Ok(table.complex(&rho).1)
}

/// Averages `rho` over Gaussian step phases with covariance `g`:
/// `rho[a][b] * exp(-(b - a)^T g (b - a) / 2)`. Works for any number of steps.
pub fn dephase(rho: &JointDensity, g: &Mat<f64>) -> Result<JointDensity> {
    let steps = rho.steps();
    if g.nrows() != steps || g.ncols() != steps {
        return Err(Error::DimensionMismatch {
            expected: steps,
            actual: g.nrows(),
        });
    }
    let digits = digit_table(rho.n_atoms(), steps);
    let n = rho.dim();
    let m = rho.matrix();
    let at = |idx: usize| &digits[idx * steps..(idx + 1) * steps];
    let out = Mat::from_fn(n, n, |a, b| {
        let delta: Vec<f64> = at(b)
            .iter()
            .zip(at(a))
            .map(|(&x, &y)| x as f64 - y as f64)
            .collect();
        let mut q = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                q += delta[i] * g[(i, j)] * delta[j];
            }
        }
        m[(a, b)] * (-0.5 * q).exp()
    });
    JointDensity::unchecked(out, rho.n_atoms(), steps)
}

fn check_square(m: &Mat<c64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: m.nrows(),
        });
    }
    Ok(())
}

/// Solves `rho_prime = (rho_bar L + L rho_bar) / 2` in the eigenbasis of
/// `rho_bar`; components outside the support (relative tolerance `tol`) are
/// set to zero.
pub fn solve_sld(rho_bar: &Mat<c64>, rho_prime: &Mat<c64>, tol: f64) -> Result<Mat<c64>> {
    check_square(rho_prime, rho_bar.nrows())?;
    let spec = complex_spectrum(rho_bar, rho_prime, tol, true)?;
    Ok(spec.operator.expect("operator requested"))
}

/// `||P (rho_prime - (rho_bar L + L rho_bar)/2) P||_F / ||rho_prime||_F` with
/// `P` the projector onto eigenvalues of `rho_bar` above `tol * l_max`.
/// Returns the absolute residual when `rho_prime` vanishes.
pub fn sld_residual(
    rho_bar: &Mat<c64>,
    rho_prime: &Mat<c64>,
    l: &Mat<c64>,
    tol: f64,
) -> Result<f64> {
    let n = rho_bar.nrows();
    check_square(rho_prime, n)?;
    check_square(l, n)?;
    let e = eigh(rho_bar)?;
    let cut = tol * e.values[n - 1].max(0.0);
    let keep: Vec<usize> = (0..n).filter(|&i| e.values[i] > cut).collect();
    let vk = Mat::from_fn(n, keep.len(), |i, j| e.vectors[(i, keep[j])]);
    let resid = rho_prime - (rho_bar * l + l * rho_bar) * Scale(c64::new(0.5, 0.0));
    let proj = vk.adjoint() * &resid * &vk;
    let num = proj.norm_l2();
    let den = rho_prime.norm_l2();
    Ok(if den > 0.0 { num / den } else { num })
}

/// The mean-squared cost of strategy `L` on input `rho_in`:
/// `sigma2_lo - Tr(L rho_prime)/omega0^2 + Tr(L^2 rho_bar)/(2 omega0^2)`.
pub fn cost_functional(rho_in: &JointDensity, l: &Mat<c64>, scenario: &Scenario) -> Result<f64> {
    let dim = scenario.dim()?;
    check_square(rho_in.matrix(), dim)?;
    check_square(l, dim)?;
    let kernels = scenario.kernels()?;
    let table = PhaseTable::new(&kernels, scenario.n_atoms);
    let (bar, prime) = table.complex(rho_in.matrix());
    let w2 = scenario.noise.omega0 * scenario.noise.omega0;
    let linear = trace(&(l * &prime)).re;
    let quad = trace(&(l * (l * &bar))).re;
    Ok((0.5 * kernels.w_var - linear + 0.5 * quad) / w2)
}

/// Monte-Carlo estimates of `rho_bar` and `rho_prime` with per-entry
/// standard errors (real and imaginary parts stored separately).
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub rho_bar: Mat<c64>,
    pub rho_prime: Mat<c64>,
    pub se_bar: Mat<c64>,
    pub se_prime: Mat<c64>,
    pub n_samples: usize,
}

const MC_CHUNKS: usize = 64;

/// Averages `D(theta) rho_in D(theta)^+` and `w D(theta) rho_in D(theta)^+`
/// over sampled `(theta, w)`, with `D(theta) = diag(exp(-i n . theta))`.
/// Samples are split into fixed chunks with independent streams, so the result
/// does not depend on the thread count.
pub fn mc_oracle(scenario: &Scenario, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if n_samples < 1000 {
        return domain("mc_oracle needs at least 1000 samples");
    }
    scenario.validate()?;
    let kernels = scenario.kernels()?;
    let sampler = JointSampler::new(&kernels)?;
    let rho = scenario.input()?.into_matrix();
    let steps = scenario.steps();
    let levels = scenario.n_atoms + 1;
    let dim = rho.nrows();
    let digits = digit_table(scenario.n_atoms, steps);

    // upper-triangle entries with nonzero input
    let pairs: Vec<(usize, usize)> = (0..dim)
        .flat_map(|a| (a..dim).map(move |b| (a, b)))
        .filter(|&(a, b)| rho[(a, b)] != c64::new(0.0, 0.0))
        .collect();

    let sums: Vec<Vec<[f64; 8]>> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let count = n_samples / MC_CHUNKS + usize::from(chunk < n_samples % MC_CHUNKS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let mut acc = vec![[0.0f64; 8]; pairs.len()];
            let mut z = vec![0.0; steps + 1];
            let mut x = vec![0.0; steps + 1];
            let mut step_phase = vec![c64::new(1.0, 0.0); steps * levels];
            let mut u = vec![c64::new(1.0, 0.0); dim];
            for _ in 0..count {
                sampler.sample_into(&mut rng, &mut z, &mut x);
                let w = x[steps];
                for s in 0..steps {
                    for n in 0..levels {
                        step_phase[s * levels + n] = c64::from_polar(1.0, -(n as f64) * x[s]);
                    }
                }
                for (a, ua) in u.iter_mut().enumerate() {
                    *ua = digits[a * steps..(a + 1) * steps]
                        .iter()
                        .enumerate()
                        .fold(c64::new(1.0, 0.0), |p, (s, &d)| {
                            p * step_phase[s * levels + d as usize]
                        });
                }
                for (slot, &(a, b)) in acc.iter_mut().zip(&pairs) {
                    let v = u[a] * rho[(a, b)] * u[b].conj();
                    let wv = v * w;
                    slot[0] += v.re;
                    slot[1] += v.im;
                    slot[2] += v.re * v.re;
                    slot[3] += v.im * v.im;
                    slot[4] += wv.re;
                    slot[5] += wv.im;
                    slot[6] += wv.re * wv.re;
                    slot[7] += wv.im * wv.im;
                }
            }
            acc
        })
        .collect();

    let n = n_samples as f64;
    let mut total = vec![[0.0f64; 8]; pairs.len()];
    for chunk in &sums {
        for (t, c) in total.iter_mut().zip(chunk) {
            for q in 0..8 {
                t[q] += c[q];
            }
        }
    }
    let zero = c64::new(0.0, 0.0);
    let mut rho_bar = Mat::from_fn(dim, dim, |_, _| zero);
    let mut rho_prime = rho_bar.clone();
    let mut se_bar = rho_bar.clone();
    let mut se_prime = rho_bar.clone();
    let se = |sum: f64, sq: f64| {
        let mean = sum / n;
        ((sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
    };
    for (t, &(a, b)) in total.iter().zip(&pairs) {
        let bar = c64::new(t[0] / n, t[1] / n);
        let prime = c64::new(t[4] / n, t[5] / n);
        let sb = c64::new(se(t[0], t[2]), se(t[1], t[3]));
        let sp = c64::new(se(t[4], t[6]), se(t[5], t[7]));
        rho_bar[(a, b)] = bar;
        rho_prime[(a, b)] = prime;
        se_bar[(a, b)] = sb;
        se_prime[(a, b)] = sp;
        if a != b {
            rho_bar[(b, a)] = bar.conj();
            rho_prime[(b, a)] = prime.conj();
            se_bar[(b, a)] = sb;
            se_prime[(b, a)] = sp;
        }
    }
    Ok(McEstimate {
        rho_bar,
        rho_prime,
        se_bar,
        se_prime,
        n_samples,
    })
}

/// Draws a Haar-random pure state on `dim` levels.
pub fn random_pure_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<c64> {
    let raw: Vec<c64> = (0..dim)
        .map(|_| {
            c64::new(
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            )
        })
        .collect();
    let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    raw.into_iter().map(|a| a / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::ghz_step_state;

    fn noise() -> NoiseParams {
        NoiseParams::new(2.0, 0.4, 0.5, 3.0).unwrap()
    }

    fn plus_scenario(k: usize, step: f64) -> Scenario {
        Scenario::new(noise(), 1, k, step, Probe::Product(SymmetricState::plus(1))).unwrap()
    }

    #[test]
    fn ground_probe_gains_nothing() {
        let ground = SymmetricState::basis(2, 0).unwrap();
        let s = Scenario::new(noise(), 2, 2, 0.5, Probe::Product(ground)).unwrap();
        let ks = s.kernels().unwrap();
        let bar = build_rho_bar(&s, &ks).unwrap();
        assert_eq!(bar.matrix()[(0, 0)], c64::new(1.0, 0.0));
        let prime = build_rho_prime(&s, &ks).unwrap();
        assert!(prime.norm_l2() == 0.0);
        let r = s.qavar().unwrap();
        assert_eq!(r.sigma2_q, r.sigma2_lo);
    }

    #[test]
    fn one_step_plus_closed_form() {
        let s = plus_scenario(1, 0.8);
        let ks = s.kernels().unwrap();
        let d = (-ks.g[(0, 0)] / 2.0).exp();
        let h = ks.h[0];
        let bar = build_rho_bar(&s, &ks).unwrap();
        assert!((bar.matrix()[(0, 1)].re - d / 2.0).abs() < 1e-15);
        assert!((bar.matrix()[(1, 1)].re - 0.5).abs() < 1e-15);
        let prime = build_rho_prime(&s, &ks).unwrap();
        assert!((prime[(0, 1)] - c64::new(0.0, d * h / 2.0)).norm() < 1e-15);
        assert!((prime[(1, 0)] - c64::new(0.0, -d * h / 2.0)).norm() < 1e-15);
        let r = s.qavar().unwrap();
        let w2 = s.noise.omega0.powi(2);
        let want = ks.sigma2_lo - d * d * h * h / (2.0 * w2);
        assert!((r.sigma2_q - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn zero_noise_keeps_input() {
        let quiet = NoiseParams::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let s =
            Scenario::new(quiet, 2, 2, 1.0, Probe::Product(ghz_step_state(2).unwrap())).unwrap();
        let ks = s.kernels().unwrap();
        let bar = build_rho_bar(&s, &ks).unwrap();
        let rin = s.input_density().unwrap();
        assert!((bar.matrix() - rin.matrix()).norm_l2() == 0.0);
        assert!(build_rho_prime(&s, &ks).unwrap().norm_l2() == 0.0);
        let r = s.qavar().unwrap();
        assert_eq!(r.sigma2_q, 0.0);
    }

    #[test]
    fn sld_special_cases() {
        let n = 4;
        let zero = Mat::<c64>::zeros(n, n);
        let mixed = Mat::from_fn(n, n, |i, j| c64::new(if i == j { 0.25 } else { 0.0 }, 0.0));
        let l = solve_sld(&mixed, &zero, SUPPORT_TOL).unwrap();
        assert!(l.norm_l2() == 0.0);
        let prime = Mat::from_fn(n, n, |i, j| match (i, j) {
            (0, 1) => c64::new(0.0, 0.1),
            (1, 0) => c64::new(0.0, -0.1),
            (2, 3) => c64::new(0.05, 0.02),
            (3, 2) => c64::new(0.05, -0.02),
            _ => c64::new(0.0, 0.0),
        });
        let l = solve_sld(&mixed, &prime, SUPPORT_TOL).unwrap();
        let want = &prime * Scale(c64::new(n as f64, 0.0));
        assert!((&l - &want).norm_l2() < 1e-13);
    }

    #[test]
    fn real_and_complex_paths_agree() {
        let s = plus_scenario(2, 0.6);
        let r_real = s.qavar().unwrap();
        // a per-level phase forces the complex path and leaves the bound unchanged
        let amps: Vec<c64> = SymmetricState::plus(1)
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(n, a)| a * c64::from_polar(1.0, 0.7 * n as f64))
            .collect();
        let phased = s
            .with_probe(Probe::Product(SymmetricState::new(amps).unwrap()))
            .unwrap();
        let r_cplx = phased.qavar().unwrap();
        assert!((r_real.sigma2_q - r_cplx.sigma2_q).abs() < 1e-12 * r_real.sigma2_q);
    }

    #[test]
    fn operator_consistency() {
        let s = Scenario::new(noise(), 2, 2, 0.4, Probe::Product(SymmetricState::plus(2))).unwrap();
        let r = s.qavar_with_operator().unwrap();
        let l = r.operator.clone().unwrap();
        let ks = s.kernels().unwrap();
        let bar = build_rho_bar(&s, &ks).unwrap();
        let prime = build_rho_prime(&s, &ks).unwrap();
        let w2 = s.noise.omega0.powi(2);
        let tr = trace(&(bar.matrix() * (&l * &l))).re / (2.0 * w2);
        assert!((tr - r.correction).abs() <= 1e-8 * r.correction);
        let resid = sld_residual(bar.matrix(), &prime, &l, SUPPORT_TOL).unwrap();
        assert!(resid < 1e-8, "{resid}");
        let rin = s.input_density().unwrap();
        let cost = cost_functional(&rin, &l, &s).unwrap();
        assert!((cost - r.sigma2_q).abs() <= 1e-8 * r.sigma2_q);
        let zero = Mat::<c64>::zeros(l.nrows(), l.ncols());
        let c0 = cost_functional(&rin, &zero, &s).unwrap();
        assert!((c0 - r.sigma2_lo).abs() <= 1e-12 * r.sigma2_lo);
        let double = &l * Scale(c64::new(2.0, 0.0));
        let c2 = cost_functional(&rin, &double, &s).unwrap();
        assert!((c2 - r.sigma2_lo).abs() <= 1e-8 * r.sigma2_lo);
    }

    #[test]
    fn scenario_validation() {
        let p = Probe::Product(SymmetricState::plus(2));
        assert!(Scenario::new(noise(), 1, 1, 1.0, p.clone()).is_err());
        assert!(Scenario::new(noise(), 2, 0, 1.0, p.clone()).is_err());
        assert!(Scenario::new(noise(), 2, 1, 0.0, p).is_err());
        let joint = vec![c64::new(1.0, 0.0); 3];
        assert!(Scenario::new(noise(), 1, 2, 1.0, Probe::Joint(joint)).is_err());
    }

    #[test]
    fn mc_oracle_zero_noise_is_exact() {
        let quiet = NoiseParams::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let s = Scenario::new(quiet, 1, 2, 1.0, Probe::Product(SymmetricState::plus(1))).unwrap();
        let mc = mc_oracle(&s, 2000, 1).unwrap();
        let rin = s.input_density().unwrap();
        assert!((&mc.rho_bar - rin.matrix()).norm_l2() < 1e-12);
        assert!(mc.rho_prime.norm_l2() == 0.0);
        assert!(mc_oracle(&s, 10, 1).is_err());
    }

    #[test]
    fn joint_amplitudes_order() {
        let v = joint_amplitudes(&[1.0, 2.0], 2);
        assert_eq!(v, vec![1.0, 2.0, 2.0, 4.0]);
        let v = joint_amplitudes(&[1.0, 2.0, 3.0], 2);
        // index (1,2) -> 5
        assert_eq!(v[5], 6.0);
    }
}
