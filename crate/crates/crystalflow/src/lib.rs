//! Harmonic-crystal dynamics on `Z^d` with random multi-temperature initial data.
//!
//! The crate simulates the lattice wave system
//!
//! ```text
//! d²u/dt²(x,t) = -Σ_y V(x-y) u(y,t),     x ∈ Z^d,  u ∈ R^n,
//! ```
//!
//! exactly in Fourier space on finite periodic lattices, samples Gaussian
//! initial fields whose statistics differ in up to `2^k` orthants ("system +
//! reservoirs" at temperatures `T_n`), and evaluates the closed-form long-time
//! objects these ensembles converge to: the limiting covariance `q̂_∞(θ)`, the
//! mean energy current vector `J_∞`, the kinetic temperature `K_∞`, and their
//! half-space (zero boundary condition) counterparts.
//!
//! Module map:
//!
//! * [`spectral`] — interaction matrices, Fourier symbols `V̂(θ)`, dispersion
//!   bands `ω_σ`, spectral projections, group velocities, condition checks.
//! * [`measures`] — spectral densities of translation-invariant Gaussian
//!   measures, circulant sampling on finite lattices, reservoir splicing.
//! * [`dynamics`] — the exact propagator `Ĝ_t(θ)`, energy, energy currents.
//! * [`limits`] — torus quadrature for `q̂_∞`, `J_∞`, `c_l`, `K_∞`.
//! * [`halfspace`] — reflection-principle evolution and the `J_{+,∞}(x_1)`
//!   profile for the half-space problem.
//! * [`estimator`] — Monte Carlo ensemble harness and analytic/empirical
//!   comparison verdicts.
//! * [`snapshot`] — the binary field snapshot format shared with the CLI.
//!
//! All numerics are generic over the [`Scalar`] floating type; the aliases
//! below fix the default `f64` precision used by the CLI and the acceptance
//! scenarios.

pub mod dynamics;
pub mod estimator;
mod fft;
pub mod halfspace;
pub mod lattice;
pub mod limits;
pub mod measures;
mod scalar;
pub mod snapshot;
pub mod spectral;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f64;
/// Complex number at default precision.
pub type Cplx = num_complex::Complex<Real>;

/// Default-precision aliases for the main domain types.
pub type Interaction = spectral::InteractionMatrix<Real>;
pub type Dispersion = spectral::DispersionData<Real>;
pub type Field = measures::FieldState<Real>;
pub type Layout = measures::ReservoirLayout<Real>;
pub type MeasureSpec = measures::GaussianMeasureSpec<Real>;
