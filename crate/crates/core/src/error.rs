use num_complex::Complex64;
use thiserror::Error;

/// Failure modes of the library. Variants map one-to-one onto the
/// documented error conditions of each operation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid degree {0}: the potential must have degree at least 2")]
    InvalidDegree(usize),
    #[error("leading coefficient is zero")]
    InvalidLeadingCoefficient,
    #[error("energy is zero, so the spectral parameter vanishes")]
    DegenerateEnergy,
    #[error("invalid physical parameter: {0}")]
    InvalidParameter(String),
    #[error("alpha choice {0} is not allowed for degree {1}")]
    InvalidAlpha(String, usize),
    #[error("turning points {0} and {1} are closer than the collision tolerance")]
    DegenerateTurningPoints(Complex64, Complex64),
    #[error("root finder did not converge after {0} iterations")]
    RootFinderStalled(usize),
    #[error("point {0} lies on a cut and no continuation hint was given")]
    AmbiguousBranch(Complex64),
    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { estimate: f64, tolerance: f64 },
    #[error("path passes within {distance:e} of turning point {point}")]
    PathTooClose { point: Complex64, distance: f64 },
    #[error("invalid pair index {0}")]
    InvalidPair(i32),
    #[error("Stokes line tracing stalled near {0}")]
    TracingStalled(Complex64),
    #[error("graph assembly produced {found} sectors, expected {expected}")]
    Topology { found: usize, expected: usize },
    #[error("epsilon {eps} is too large (limit {limit})")]
    EpsilonTooLarge { eps: f64, limit: f64 },
    #[error("unknown sector label {0}")]
    UnknownSector(i32),
    #[error("evaluation point {0} is within 1e-6 of a turning point")]
    NearSingularEvaluation(Complex64),
    #[error("seed point {0} is not inside sector {1}")]
    WrongSector(Complex64, i32),
    #[error("ODE propagation failed at arclength {0}")]
    PropagationFailure(f64),
    #[error("traces have no common point")]
    NoOverlap,
    #[error("island index q = {q} exceeds the inner-line bound {bound}")]
    IslandOutOfRange { q: u32, bound: u32 },
    #[error("|R| = 1/2 is the quantized case; use quantize instead")]
    SingularLimit,
    #[error("unresolved cell near {0}: winding changed under refinement")]
    UnresolvedCell(Complex64),
    #[error("quantization Newton iteration failed for s = {s} (last lambda {last})")]
    QuantizationFailure { s: u32, last: Complex64 },
    #[error("lambda {0} is not a quantized value")]
    NotQuantized(Complex64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
