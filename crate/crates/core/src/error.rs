use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("structure is not elliptic at ({x:.4}, {y:.4}): smallest eigenvalue {eig:e}")]
    NotElliptic { x: f64, y: f64, eig: f64 },
    #[error("Randers one-form too large at ({x:.4}, {y:.4}): |b| = {norm:.6} (must be < 1)")]
    NotStronglyConvex { x: f64, y: f64, norm: f64 },
    #[error("structure is not of Randers kind")]
    NotRanders,
    #[error("Riemannian structure carries a nonzero one-form")]
    RiemannianWithBeta,
    #[error("second derivatives of a Randers dual norm are singular at the zero covector")]
    SingularCovector,
    #[error("local distance requested at separation {0:.4} (limit 0.25)")]
    SeparationTooLarge(f64),
    #[error("coefficient field is not periodic and cannot be sampled on the torus")]
    NonPeriodicField,
    #[error("grid size {0} must be even and at least 16")]
    InvalidGrid(usize),
    #[error("right-hand side has nonzero mean {mean:e}")]
    NonNeutralSource { mean: f64 },
    #[error("Newton iteration stalled after {iterations} iterations, relative residual {residual:e}")]
    NewtonStall { iterations: usize, residual: f64 },
    #[error("conjugate gradient stalled after {iterations} iterations, relative residual {residual:e}")]
    LinearStall { iterations: usize, residual: f64 },
    #[error("solve for source {index} failed: {cause}")]
    SourceSolve { index: usize, cause: Box<Error> },
    #[error("vortices {i} and {j} are {separation:.5} apart, below {limit:.5}")]
    SeparationTooSmall { i: usize, j: usize, separation: f64, limit: f64 },
    #[error("evaluation point is {separation:.5} from the source (need at least {limit:.5})")]
    TooCloseToCore { separation: f64, limit: f64 },
    #[error("regular-part fit residual {residual:e} exceeds {limit:e}")]
    FitDiverged { residual: f64, limit: f64 },
    #[error("variation is not admissible: |sum d_i v_i| = {0:e}")]
    InadmissibleVariation(f64),
    #[error("configuration is not stationary: max equilibrium residual {residual:e} > {tol:e}")]
    NotStationary { residual: f64, tol: f64 },
    #[error("co-metric block of vortex {0} is not positive definite")]
    GramNotPd(usize),
    #[error("time step underflow (dt = {0:e})")]
    StepUnderflow(f64),
    #[error("vortex pair collapsed at t = {t:.6}")]
    PairCollapse { t: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
}

pub type Result<T> = std::result::Result<T, Error>;
