//! Optimization of the bound over probe states and interrogation layouts, and
//! extrapolation of the long-term stability constant.
//!
//! The bound is invariant under diagonal unitaries on the input (see
//! [`crate::bound`]), so pure probes are searched over real amplitudes only.

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bound::{joint_amplitudes, real_spectrum, PhaseTable, Probe, Scenario};
use crate::error::{domain, Error, Result};
use crate::hilbert::{eigh_real, joint_dim, SymmetricState};
use crate::noise::{KernelSet, NoiseParams};

/// Family of single-step probes repeated at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductFamily {
    /// Any pure state on the symmetric subspace (may entangle the atoms).
    Symmetric,
    /// Every atom in the same single-atom pure state (no entanglement at all).
    AtomProduct,
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Relative convergence tolerance on `sigma2_q`.
    pub tol: f64,
    /// Iteration (see-saw) or evaluation (simplex) budget per start.
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
    /// Optional first starting point for product searches.
    pub start: Option<SymmetricState>,
    /// Above this joint dimension a warm-started product search in
    /// [`optimize_interrogation`] uses the warm start only.
    pub warm_only_dim: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            n_starts: 8,
            seed: 0,
            start: None,
            warm_only_dim: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub enum OptimizedState {
    Product(SymmetricState),
    /// Real amplitudes of a joint pure state over all steps.
    Joint(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub best_state: OptimizedState,
    pub best_k: usize,
    pub best_step: f64,
    pub sigma2_q: f64,
    pub sigma2_lo: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sigma2_q` per iteration of the winning start.
    pub history: Vec<f64>,
    /// `(k, sigma2_q)` for every layout tried by [`optimize_interrogation`].
    pub per_k: Vec<(usize, f64)>,
}

impl OptimizeReport {
    pub fn tau(&self) -> f64 {
        self.best_step * self.best_k as f64
    }
}

/// `A_L` with `cost_functional(rho, L) = sigma2_lo + Tr(rho A_L)` for every
/// joint density `rho`.
pub fn cost_operator(l: &Mat<c64>, kernels: &KernelSet, n_atoms: usize) -> Result<Mat<c64>> {
    let table = PhaseTable::new(kernels, n_atoms);
    let n = table.dim();
    if l.nrows() != n || l.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: l.nrows(),
        });
    }
    let w2 = kernels.params.omega0 * kernels.params.omega0;
    let l2 = l * l;
    let a = Mat::from_fn(n, n, |x, y| {
        // Tr(L rho_prime) contributes L[x][y] * i (h[x] - h[y]) per rho_in[y][x]
        let drift = c64::new(0.0, table.drift(y, x));
        (l2[(x, y)] * 0.5 - l[(x, y)] * drift) * (table.decay(x, y) / w2)
    });
    Ok(Mat::from_fn(n, n, |i, j| {
        (a[(i, j)] + a[(j, i)].conj()) * 0.5
    }))
}

/// Scaled objective `omega0^2 * sigma2_q` for real joint amplitudes.
struct RealObjective {
    table: PhaseTable,
    half_w_var: f64,
    tol: f64,
}

impl RealObjective {
    fn new(kernels: &KernelSet, n_atoms: usize, tol: f64) -> Self {
        Self {
            table: PhaseTable::new(kernels, n_atoms),
            half_w_var: 0.5 * kernels.w_var,
            tol,
        }
    }

    fn value(&self, psi: &[f64]) -> Result<f64> {
        let (s, a) = self.table.real_pure(psi);
        let spec = real_spectrum(&s, &a, self.tol, false)?;
        Ok(self.half_w_var - spec.correction)
    }

    /// One see-saw step: bound at `psi`, then the ground state of `A_L`.
    fn seesaw(&self, psi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (s, a) = self.table.real_pure(psi);
        let spec = real_spectrum(&s, &a, self.tol, true)?;
        let value = self.half_w_var - spec.correction;
        let op = spec.operator.expect("operator requested");
        let n = op.nrows();
        // L = i M with M real antisymmetric
        let m = Mat::from_fn(n, n, |i, j| op[(i, j)].im);
        let m2 = &m * &m;
        let t = &self.table;
        let cost = Mat::from_fn(n, n, |x, y| {
            t.decay(x, y) * (-0.5 * m2[(x, y)] + m[(x, y)] * t.drift(y, x))
        });
        let cost = Mat::from_fn(n, n, |i, j| 0.5 * (cost[(i, j)] + cost[(j, i)]));
        let (_, vecs) = eigh_real(&cost)?;
        let ground = (0..n).map(|i| vecs[(i, 0)]).collect();
        Ok((value, ground))
    }
}

fn layout(template: &Scenario) -> Result<(KernelSet, usize)> {
    template.noise.validate()?;
    let kernels = template.kernels()?;
    let dim = joint_dim(template.n_atoms, template.steps())?;
    Ok((kernels, dim))
}

struct SeesawRun {
    value: f64,
    state: Vec<f64>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// See-saw over arbitrary joint pure states: alternate the optimal strategy
/// `L` for the current state and the ground state of `A_L` for the current
/// strategy. Each half-step minimizes the same cost, so the history never
/// increases.
pub fn optimize_joint_state(template: &Scenario, opts: &SearchOptions) -> Result<OptimizeReport> {
    let (kernels, dim) = layout(template)?;
    let w2 = template.noise.omega0 * template.noise.omega0;
    let obj = RealObjective::new(&kernels, template.n_atoms, template.support_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<SeesawRun> = None;

    for _ in 0..opts.n_starts.max(1) {
        let mut psi = random_real_unit(dim, &mut rng);
        let mut history = Vec::new();
        let mut converged = false;
        let mut small_steps = 0;
        for _ in 0..opts.max_iter.max(1) {
            let (value, next) = obj.seesaw(&psi)?;
            if let Some(&prev) = history.last() {
                let rel = (prev - value) / f64::abs(prev).max(f64::MIN_POSITIVE);
                small_steps = if rel < opts.tol { small_steps + 1 } else { 0 };
            }
            history.push(value);
            if small_steps >= 2 {
                converged = true;
                break;
            }
            psi = next;
        }
        // history[i] is the bound at the state fed into iteration i
        let (value, state) = match history.len() {
            0 => unreachable!(),
            _ if converged => (*history.last().unwrap(), psi.clone()),
            _ => {
                let v = obj.value(&psi)?;
                history.push(v);
                (v, psi.clone())
            }
        };
        let iters = history.len();
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(SeesawRun {
                value,
                state,
                history,
                iterations: iters,
                converged,
            });
        }
    }
    let SeesawRun {
        value,
        state,
        history,
        iterations,
        converged,
    } = best.expect("at least one start");
    Ok(OptimizeReport {
        best_state: OptimizedState::Joint(state),
        best_k: template.k,
        best_step: template.step,
        sigma2_q: value / w2,
        sigma2_lo: kernels.sigma2_lo,
        iterations,
        converged,
        history: history.iter().map(|v| v / w2).collect(),
        per_k: vec![(template.k, value / w2)],
    })
}

fn random_real_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Real amplitudes on `N + 1` levels from `N` hyperspherical angles.
fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len() + 1);
    let mut carry = 1.0;
    for &a in angles {
        out.push(carry * a.cos());
        carry *= a.sin();
    }
    out.push(carry);
    out
}

fn sphere_angles(amps: &[f64]) -> Vec<f64> {
    let n = amps.len() - 1;
    (0..n)
        .map(|i| {
            let tail = amps[i + 1..].iter().map(|x| x * x).sum::<f64>().sqrt();
            tail.atan2(amps[i])
        })
        .collect()
}

impl ProductFamily {
    fn n_params(self, n_atoms: usize) -> usize {
        match self {
            Self::Symmetric => n_atoms,
            Self::AtomProduct => 1,
        }
    }

    fn amplitudes(self, n_atoms: usize, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Symmetric => sphere_point(x),
            Self::AtomProduct => SymmetricState::atom_product(n_atoms, x[0])
                .amplitudes()
                .iter()
                .map(|a| a.re)
                .collect(),
        }
    }

    fn random_start<R: Rng + ?Sized>(self, n_atoms: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Symmetric => sphere_angles(&random_real_unit(n_atoms + 1, rng)),
            // uniform on the Bloch sphere: cos(2 theta) uniform in [-1, 1]
            Self::AtomProduct => vec![0.5 * (2.0 * rng.random::<f64>() - 1.0).acos()],
        }
    }

    /// Parameters reproducing `state` up to per-level phases, if it belongs to the family.
    fn params_of(self, state: &SymmetricState) -> Option<Vec<f64>> {
        let mags: Vec<f64> = state.amplitudes().iter().map(|a| a.norm()).collect();
        match self {
            Self::Symmetric => Some(sphere_angles(&mags)),
            Self::AtomProduct => {
                let n = mags.len() - 1;
                let c = mags[0].powf(1.0 / n as f64);
                let theta = c.clamp(0.0, 1.0).acos();
                let back = SymmetricState::atom_product(n, theta);
                (back.fidelity(state) > 1.0 - 1e-9).then_some(vec![theta])
            }
        }
    }
}

/// Searches `rho0^{(x) K}` over pure single-step probes of `family` with a
/// restarted Nelder-Mead simplex.
pub fn optimize_product_state(
    template: &Scenario,
    family: ProductFamily,
    opts: &SearchOptions,
) -> Result<OptimizeReport> {
    let (kernels, _) = layout(template)?;
    let n_atoms = template.n_atoms;
    let steps = template.steps();
    let w2 = template.noise.omega0 * template.noise.omega0;
    let obj = RealObjective::new(&kernels, n_atoms, template.support_tol);
    let f = |x: &[f64]| -> Result<f64> {
        let single = family.amplitudes(n_atoms, x);
        obj.value(&joint_amplitudes(&single, steps))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = Vec::new();
    if let Some(s) = &opts.start {
        if s.n_atoms() != n_atoms {
            return Err(Error::DimensionMismatch {
                expected: n_atoms + 1,
                actual: s.n_atoms() + 1,
            });
        }
        if let Some(x) = family.params_of(s) {
            starts.push(x);
        }
    }
    while starts.len() < opts.n_starts.max(1) {
        starts.push(family.random_start(n_atoms, &mut rng));
    }
    debug_assert!(starts.iter().all(|s| s.len() == family.n_params(n_atoms)));

    let mut best: Option<Simplex> = None;
    for x0 in starts {
        let run = nelder_mead(&f, &x0, 0.3, opts.tol, opts.max_iter)?;
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one start");
    let state = SymmetricState::from_real(&family.amplitudes(n_atoms, &run.x))?;
    Ok(OptimizeReport {
        best_state: OptimizedState::Product(state),
        best_k: template.k,
        best_step: template.step,
        sigma2_q: run.value / w2,
        sigma2_lo: kernels.sigma2_lo,
        iterations: run.evaluations,
        converged: run.converged,
        history: run.history.iter().map(|v| v / w2).collect(),
        per_k: vec![(template.k, run.value / w2)],
    })
}

struct Simplex {
    x: Vec<f64>,
    value: f64,
    evaluations: usize,
    converged: bool,
    /// Best value after each iteration.
    history: Vec<f64>,
}

fn nelder_mead<F>(f: &F, x0: &[f64], scale: f64, tol: f64, max_evals: usize) -> Result<Simplex>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += scale;
        pts.push(p);
    }
    let mut vals = pts.iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
    let mut evals = n + 1;
    let mut history = Vec::new();
    let mut converged = false;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        history.push(vals[0]);

        let spread = vals[n] - vals[0];
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        // the objective is smooth, so a 1e-4 simplex puts the value within ~1e-8 of the minimum
        if spread <= tol * vals[0].abs() && size < 1e-4 {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr)?;
        evals += 1;
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = f(&xe)?;
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(0.5);
                let fc = f(&xc)?;
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc)?;
                (xc, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = pts[i]
                        .iter()
                        .zip(&pts[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    vals[i] = f(&p)?;
                    pts[i] = p;
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap();
    Ok(Simplex {
        x: pts[best].clone(),
        value: vals[best],
        evaluations: evals,
        converged,
        history,
    })
}

/// What to run inside each layout of [`optimize_interrogation`].
#[derive(Debug, Clone)]
pub enum InnerOptimizer {
    /// Evaluate a fixed single-step probe.
    Fixed(SymmetricState),
    /// Search product probes of a family.
    Product {
        family: ProductFamily,
        opts: SearchOptions,
    },
    /// See-saw over joint states.
    Joint(SearchOptions),
}

/// For averaging time `tau`, tries `k = 1..=k_max` with `T = tau / k` and
/// keeps the layout with the smallest bound (ties go to the smaller `k`).
/// Product searches are warm-started from the previous layout's optimum.
pub fn optimize_interrogation(
    noise: &NoiseParams,
    n_atoms: usize,
    tau: f64,
    k_max: usize,
    inner: &InnerOptimizer,
    dim_cap: usize,
) -> Result<OptimizeReport> {
    if !(tau.is_finite() && tau > 0.0) {
        return domain(format!("tau must be > 0, got {tau}"));
    }
    if k_max == 0 {
        return domain("k_max must be >= 1");
    }
    for k in 1..=k_max {
        let dim = joint_dim(n_atoms, 2 * k - 1)?;
        if dim > dim_cap {
            return Err(Error::ResourceCap {
                k,
                dim,
                cap: dim_cap,
            });
        }
    }
    let mut best: Option<OptimizeReport> = None;
    let mut per_k = Vec::with_capacity(k_max);
    let mut warm: Option<SymmetricState> = None;
    for k in 1..=k_max {
        let placeholder = Probe::Product(SymmetricState::plus(n_atoms));
        let template = Scenario::at_tau(*noise, n_atoms, tau, k, placeholder)?;
        let report = match inner {
            InnerOptimizer::Fixed(state) => {
                let s = template.with_probe(Probe::Product(state.clone()))?;
                let r = s.qavar()?;
                OptimizeReport {
                    best_state: OptimizedState::Product(state.clone()),
                    best_k: k,
                    best_step: s.step,
                    sigma2_q: r.sigma2_q,
                    sigma2_lo: r.sigma2_lo,
                    iterations: 1,
                    converged: true,
                    history: vec![r.sigma2_q],
                    per_k: Vec::new(),
                }
            }
            InnerOptimizer::Product { family, opts } => {
                let mut o = opts.clone();
                if o.start.is_none() && warm.is_some() {
                    o.start = warm.clone();
                    if template.dim()? > o.warm_only_dim {
                        o.n_starts = 1;
                    }
                }
                optimize_product_state(&template, *family, &o)?
            }
            InnerOptimizer::Joint(opts) => optimize_joint_state(&template, opts)?,
        };
        if let OptimizedState::Product(s) = &report.best_state {
            warm = Some(s.clone());
        }
        per_k.push((k, report.sigma2_q));
        if best.as_ref().is_none_or(|b| report.sigma2_q < b.sigma2_q) {
            best = Some(report);
        }
    }
    let mut best = best.expect("k_max >= 1");
    best.per_k = per_k;
    Ok(best)
}

/// Plateau estimate of `c = sigma2_q * omega0^2 * tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    /// `Some(mean)` when the plateau is flat enough, `None` when inconclusive.
    pub c: Option<f64>,
    pub mean: f64,
    /// `(max - min) / mean` over the plateau points.
    pub spread: f64,
    /// `(tau, c(tau))` for every input point, in input order.
    pub running: Vec<(f64, f64)>,
}

/// Default number of trailing points used for the plateau.
pub const PLATEAU_POINTS: usize = 5;
/// Default flatness threshold on `(max - min) / mean`.
pub const PLATEAU_FLATNESS: f64 = 0.05;

/// Fits `sigma2_q ~ c / (omega0^2 tau)` on the `m` largest-`tau` points.
pub fn extrapolate_long_term(
    points: &[(f64, f64)],
    omega0: f64,
    m: usize,
    flatness: f64,
) -> Result<Extrapolation> {
    if m < 3 {
        return domain("plateau fit needs at least 3 points");
    }
    if points.len() < m {
        return domain(format!("need {m} points, got {}", points.len()));
    }
    let running: Vec<(f64, f64)> = points
        .iter()
        .map(|&(tau, s)| (tau, s * omega0 * omega0 * tau))
        .collect();
    let mut by_tau = running.clone();
    by_tau.sort_by(|a, b| a.0.total_cmp(&b.0));
    let tail: Vec<f64> = by_tau[by_tau.len() - m..].iter().map(|p| p.1).collect();
    let mean = tail.iter().sum::<f64>() / m as f64;
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if mean != 0.0 {
        (hi - lo) / mean.abs()
    } else {
        hi - lo
    };
    Ok(Extrapolation {
        c: (spread <= flatness).then_some(mean),
        mean,
        spread,
        running,
    })
}
