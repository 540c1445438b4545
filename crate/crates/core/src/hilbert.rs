//! States on the symmetric subspace of `N` two-level atoms, multi-indices over
//! interrogation steps, joint densities and the Hermitian eigensolver.
//!
//! Joint basis states `|n_1> (x) .. (x) |n_K>` are numbered by the base-`(N+1)`
//! positional code of `(n_1, .., n_K)` with `n_1` most significant.

use faer::{c64, Mat, Side};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-10;

/// Pure state of `N` atoms on the symmetric subspace, indexed by excitation number.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricState {
    amplitudes: Vec<c64>,
}

impl SymmetricState {
    /// Wraps amplitudes that must already be normalized.
    pub fn new(amplitudes: Vec<c64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidState("need at least one atom".into()));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("norm^2 is {norm}, not 1")));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(amplitudes: Vec<c64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState("amplitudes have zero norm".into()));
        }
        Self::new(amplitudes.into_iter().map(|a| a / norm).collect())
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::normalized(amplitudes.iter().map(|&a| c64::new(a, 0.0)).collect())
    }

    /// The Dicke state with `n` excitations.
    pub fn basis(n_atoms: usize, n: usize) -> Result<Self> {
        if n > n_atoms {
            return Err(Error::InvalidState(format!(
                "{n} excitations in {n_atoms} atoms"
            )));
        }
        let mut a = vec![c64::new(0.0, 0.0); n_atoms + 1];
        a[n] = c64::new(1.0, 0.0);
        Self::new(a)
    }

    /// Every atom prepared in `cos(theta)|0> + sin(theta)|1>`, written in the
    /// Dicke basis.
    pub fn atom_product(n_atoms: usize, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let amps = (0..=n_atoms)
            .map(|n| {
                let binom = binomial(n_atoms, n).sqrt();
                c64::new(binom * c.powi((n_atoms - n) as i32) * s.powi(n as i32), 0.0)
            })
            .collect();
        Self { amplitudes: amps }
    }

    /// `|+>` on every atom, the usual Ramsey probe.
    pub fn plus(n_atoms: usize) -> Self {
        Self::atom_product(n_atoms, std::f64::consts::FRAC_PI_4)
    }

    pub fn n_atoms(&self) -> usize {
        self.amplitudes.len() - 1
    }

    pub fn amplitudes(&self) -> &[c64] {
        &self.amplitudes
    }

    pub fn density(&self) -> Mat<c64> {
        let a = &self.amplitudes;
        Mat::from_fn(a.len(), a.len(), |i, j| a[i] * a[j].conj())
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<c64>()
            .norm_sqr()
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(|0> + |N>)/sqrt(2)` in excitation-number coordinates.
pub fn ghz_step_state(n_atoms: usize) -> Result<SymmetricState> {
    if n_atoms == 0 {
        return Err(Error::Domain("GHZ state needs at least one atom".into()));
    }
    let mut a = vec![c64::new(0.0, 0.0); n_atoms + 1];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    a[0] = c64::new(h, 0.0);
    a[n_atoms] = c64::new(h, 0.0);
    SymmetricState::new(a)
}

/// Excitation counts `(n_1, .., n_K)` over the interrogation steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<usize>,
}

impl MultiIndex {
    pub fn new(entries: Vec<usize>, n_atoms: usize) -> Result<Self> {
        if let Some(&bad) = entries.iter().find(|&&n| n > n_atoms) {
            return Err(Error::Domain(format!("entry {bad} exceeds N = {n_atoms}")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn to_linear(&self, n_atoms: usize) -> Result<usize> {
        let base = n_atoms + 1;
        self.entries.iter().try_fold(0usize, |acc, &n| {
            if n > n_atoms {
                return Err(Error::Domain(format!("entry {n} exceeds N = {n_atoms}")));
            }
            Ok(acc * base + n)
        })
    }

    pub fn from_linear(linear: usize, n_atoms: usize, steps: usize) -> Result<Self> {
        let base = n_atoms + 1;
        let dim = joint_dim(n_atoms, steps)?;
        if linear >= dim {
            return Err(Error::Domain(format!("index {linear} out of range {dim}")));
        }
        let mut entries = vec![0; steps];
        let mut rest = linear;
        for e in entries.iter_mut().rev() {
            *e = rest % base;
            rest /= base;
        }
        Ok(Self { entries })
    }
}

/// `(N+1)^K`, or an error on overflow.
pub fn joint_dim(n_atoms: usize, steps: usize) -> Result<usize> {
    (n_atoms + 1)
        .checked_pow(steps as u32)
        .ok_or_else(|| Error::Domain("joint dimension overflows".into()))
}

/// Digits of every joint basis index, row-major `dim x steps`.
pub(crate) fn digit_table(n_atoms: usize, steps: usize) -> Vec<u8> {
    let base = n_atoms + 1;
    let dim = base.pow(steps as u32);
    let mut out = vec![0u8; dim * steps];
    for idx in 0..dim {
        let mut rest = idx;
        for s in (0..steps).rev() {
            out[idx * steps + s] = (rest % base) as u8;
            rest /= base;
        }
    }
    out
}

/// Density operator on the `(N+1)^K` dimensional joint space.
#[derive(Debug, Clone)]
pub struct JointDensity {
    matrix: Mat<c64>,
    n_atoms: usize,
    steps: usize,
}

impl JointDensity {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: Mat<c64>, n_atoms: usize, steps: usize) -> Result<Self> {
        let rho = Self::unchecked(matrix, n_atoms, steps)?;
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn unchecked(matrix: Mat<c64>, n_atoms: usize, steps: usize) -> Result<Self> {
        let dim = joint_dim(n_atoms, steps)?;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: matrix.nrows(),
            });
        }
        Ok(Self {
            matrix,
            n_atoms,
            steps,
        })
    }

    /// Projector onto a normalized joint pure state.
    pub fn from_pure(amplitudes: &[c64], n_atoms: usize, steps: usize) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("norm^2 is {norm}, not 1")));
        }
        let n = amplitudes.len();
        let m = Mat::from_fn(n, n, |i, j| amplitudes[i] * amplitudes[j].conj());
        Self::unchecked(m, n_atoms, steps)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        let scale = max_abs(m).max(1.0);
        if hermitian_defect(m) > 1e-12 * scale {
            return Err(Error::InvalidState("density is not Hermitian".into()));
        }
        let tr = trace(m);
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::InvalidState(format!("trace is {tr}, not 1")));
        }
        let ev = eigh(m)?;
        if ev.values[0] < -1e-10 {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {:e}",
                ev.values[0]
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Reduced state of step `keep` (0-based), tracing out the others.
    pub fn reduced_step(&self, keep: usize) -> Result<Mat<c64>> {
        if keep >= self.steps {
            return Err(Error::Domain(format!("step {keep} out of {}", self.steps)));
        }
        let levels = self.n_atoms + 1;
        let digits = digit_table(self.n_atoms, self.steps);
        let k = self.steps;
        let mut out = Mat::<c64>::zeros(levels, levels);
        for a in 0..self.dim() {
            for b in 0..self.dim() {
                let da = &digits[a * k..(a + 1) * k];
                let db = &digits[b * k..(b + 1) * k];
                let others_equal = (0..k).all(|s| s == keep || da[s] == db[s]);
                if others_equal {
                    out[(da[keep] as usize, db[keep] as usize)] += self.matrix[(a, b)];
                }
            }
        }
        Ok(out)
    }
}

/// `rho0^{(x) K}` for a single-step density `rho0` on the symmetric subspace.
pub fn product_density(rho0: &Mat<c64>, steps: usize) -> Result<JointDensity> {
    let levels = rho0.nrows();
    if levels < 2 || rho0.ncols() != levels {
        return Err(Error::InvalidState(
            "single-step density must be square, dim >= 2".into(),
        ));
    }
    if steps == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    let n_atoms = levels - 1;
    JointDensity::new(rho0.clone(), n_atoms, 1)?;
    let digits = digit_table(n_atoms, steps);
    let dim = joint_dim(n_atoms, steps)?;
    let m = Mat::from_fn(dim, dim, |a, b| {
        let da = &digits[a * steps..(a + 1) * steps];
        let db = &digits[b * steps..(b + 1) * steps];
        da.iter().zip(db).fold(c64::new(1.0, 0.0), |acc, (&x, &y)| {
            acc * rho0[(x as usize, y as usize)]
        })
    });
    JointDensity::unchecked(m, n_atoms, steps)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: Mat<c64>,
}

/// Hermitian eigensolver. The input is symmetrized first; inputs further than
/// `1e-10 * max|A|` from Hermitian are rejected.
pub fn eigh(a: &Mat<c64>) -> Result<Eigh> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.ncols(),
        });
    }
    if hermitian_defect(a) > HERMITIAN_TOL * max_abs(a).max(f64::MIN_POSITIVE) {
        return Err(Error::Domain("matrix is not Hermitian".into()));
    }
    let sym = Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    Ok(Eigh {
        values: (0..n).map(|i| s[i].re).collect(),
        vectors: evd.U().to_owned(),
    })
}

/// Real symmetric eigensolver used on the real fast path.
pub(crate) fn eigh_real(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    Ok(((0..n).map(|i| s[i]).collect(), evd.U().to_owned()))
}

pub(crate) fn max_abs(m: &Mat<c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

pub(crate) fn hermitian_defect(m: &Mat<c64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows() - 1) {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn trace(m: &Mat<c64>) -> c64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}
