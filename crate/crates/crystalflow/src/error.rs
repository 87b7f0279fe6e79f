use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-level error type. Diagnostic payloads are reported at f64 precision
/// regardless of the working scalar.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid interaction matrix: {0}")]
    InvalidInteraction(String),

    #[error("symmetry condition violated at offset {offset:?}: V_lk(-x) != V_kl(x) (residue {residue:e})")]
    SymmetryViolation { offset: Vec<i64>, residue: f64 },

    #[error("symbol not positive semidefinite at theta = {theta:?}: eigenvalue {eigenvalue:e} below -{tolerance:e}")]
    NotPositive {
        theta: Vec<f64>,
        eigenvalue: f64,
        tolerance: f64,
    },

    #[error("singular symbol at theta = {theta:?} (min eigenvalue {eigenvalue:e})")]
    SingularSymbol { theta: Vec<f64>, eigenvalue: f64 },

    #[error("spectral density not positive semidefinite at theta = {theta:?}: eigenvalue {eigenvalue:e}")]
    DensityNotPositive { theta: Vec<f64>, eigenvalue: f64 },

    #[error("spectral factor parameters outside the positivity window: {0}")]
    FactorOutOfRange(String),

    #[error("lattice shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("axis {axis} out of range for dimension {dimension}")]
    AxisOutOfRange { axis: usize, dimension: usize },

    #[error("band {band} out of range ({bands} bands at this point)")]
    BandOutOfRange { band: usize, bands: usize },

    #[error("degenerate band: {0}")]
    DegenerateBand(String),

    #[error("analytic velocities require a component-decoupled interaction matrix")]
    NotDecoupled,

    #[error("observation time {t} exceeds the finite-size horizon t_max = {t_max} (pass override to force)")]
    HorizonExceeded { t: f64, t_max: f64 },

    #[error("mirror symmetry V(x_-) = V(x) required for the half-space problem")]
    MirrorSymmetryRequired,

    #[error("half-space field must vanish on the boundary plane x_1 = 0 (|Y| = {magnitude:e} at x = {site:?})")]
    NonzeroBoundary { site: Vec<usize>, magnitude: f64 },

    #[error("non-finite field value at site {site:?}")]
    NonFiniteField { site: Vec<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("observable mismatch: {0}")]
    ObservableMismatch(String),

    #[error("snapshot format: {0}")]
    SnapshotFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
