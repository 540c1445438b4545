//! Quantum Allan variance (QAVAR) bounds for atomic clocks.
//!
//! The crate computes the lower bound on the Allan variance of a clock whose
//! local oscillator (LO) suffers Gaussian frequency noise, for any probe
//! state and any measurement and feedback strategy. It also ships a Ramsey +
//! integrator-servo clock simulator used to check the bound empirically.
//!
//! Modules:
//!
//! - [`noise`]: the Ornstein-Uhlenbeck plus white LO noise model, its
//!   block kernels, free-running Allan variance and samplers.
//! - [`hilbert`]: symmetric-subspace states, multi-indices over interrogation
//!   steps, joint densities and the Hermitian eigensolver.
//! - [`bound`]: averaged states, the symmetric logarithmic derivative, the
//!   QAVAR itself and its Monte-Carlo oracle.
//! - [`optimize`]: probe-state and interrogation-time optimization and
//!   long-term extrapolation.
//! - [`clock`]: the clock simulator and Allan variance estimators.
//!
//! ```
//! use qavar_core::{NoiseParams, Probe, Scenario, SymmetricState};
//!
//! let noise = NoiseParams::new(2.0, 0.4, 0.5, 1.0).unwrap();
//! let probe = Probe::Product(SymmetricState::plus(1));
//! let scenario = Scenario::new(noise, 1, 2, 0.5, probe).unwrap();
//! let result = scenario.qavar().unwrap();
//! assert!(result.sigma2_q <= result.sigma2_lo);
//! ```

pub mod bound;
pub mod clock;
mod error;
pub mod hilbert;
pub mod noise;
pub mod optimize;

pub use bound::{
    build_rho_bar, build_rho_prime, cost_functional, dephase, mc_oracle, sld_residual, solve_sld,
    McEstimate, Probe, QavarResult, Scenario, SUPPORT_TOL,
};
pub use clock::{
    allan_variance, avar_estimate, bound_check, ensemble_avar, simulate_clock, AvarEstimate,
    BoundCheckRow, EnsembleAvar, Estimator, FrequencyTrace, ServoConfig, SimConfig,
};
pub use error::{Error, Result};
pub use faer::c64;
pub use hilbert::{
    eigh, ghz_step_state, product_density, Eigh, JointDensity, MultiIndex, SymmetricState,
};
pub use noise::{
    free_lo_avar, gen_trace, sample_joint, JointSampler, KernelSet, NoiseParams,
    PhaseIncrementSampler, TraceKind,
};
pub use optimize::{
    cost_operator, extrapolate_long_term, optimize_interrogation, optimize_joint_state,
    optimize_product_state, Extrapolation, InnerOptimizer, OptimizeReport, OptimizedState,
    ProductFamily, SearchOptions, PLATEAU_FLATNESS, PLATEAU_POINTS,
};
