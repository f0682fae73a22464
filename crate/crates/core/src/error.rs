use std::fmt;

/// Failures surfaced by the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input parameters or configuration violate a constraint.
    Validation(Vec<String>),
    /// A numerical routine did not meet its accuracy contract.
    NumericalFailure(String),
    /// Two eigenvalues of a mode collide (or ψ vanishes).
    MultiplicityDetected { n: i64, detail: String },
    /// A Gramian or feedback matrix is too ill-conditioned to invert.
    IllConditioned { cond: f64, limit: f64 },
    /// The Hautus matrix lost rank at some eigenvalue.
    RankDeficient { n: i64, lambda: (f64, f64) },
    /// A boundary observation of an adjoint eigenvector is (numerically) zero.
    ObservationVanished { n: i64, branch: usize },
    /// Requested precondition on the mode index failed.
    ZeroMode,
    /// Synthesis grid cannot resolve the retained modes.
    GridTooCoarse { m: usize, needed: usize },
    /// Feedback rate below the growth threshold.
    OmegaTooSmall { omega: f64, threshold: f64 },
    /// Time step fails the self-convergence check.
    StepTooLarge { rel_change: f64 },
    /// Fit window contains no usable samples.
    DegenerateWindow,
    /// Lack-of-controllability experiment outside the theorem's geometry.
    HypothesisViolated(String),
    /// Empty input where a nonempty one is required.
    EmptyInput,
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Validation-type errors map to exit code 2, numerical ones to 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::ZeroMode
                | Error::GridTooCoarse { .. }
                | Error::OmegaTooSmall { .. }
                | Error::HypothesisViolated(_)
                | Error::EmptyInput
                | Error::Io(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(v) => write!(f, "validation failed: {}", v.join("; ")),
            Error::NumericalFailure(s) => write!(f, "numerical failure: {s}"),
            Error::MultiplicityDetected { n, detail } => {
                write!(f, "multiple eigenvalue at mode {n}: {detail}")
            }
            Error::IllConditioned { cond, limit } => {
                write!(f, "matrix condition {cond:e} exceeds {limit:e}")
            }
            Error::RankDeficient { n, lambda } => write!(
                f,
                "Hautus rank deficient at mode {n}, eigenvalue {}{:+}i",
                lambda.0, lambda.1
            ),
            Error::ObservationVanished { n, branch } => {
                write!(f, "boundary observation vanishes at mode {n}, branch {branch}")
            }
            Error::ZeroMode => write!(f, "mode index must be nonzero"),
            Error::GridTooCoarse { m, needed } => {
                write!(f, "grid of {m} points cannot resolve {needed} modes")
            }
            Error::OmegaTooSmall { omega, threshold } => {
                write!(f, "omega {omega} must exceed growth threshold {threshold}")
            }
            Error::StepTooLarge { rel_change } => {
                write!(f, "time step too large: halving changed result by {rel_change:e}")
            }
            Error::DegenerateWindow => write!(f, "fit window has no positive energies"),
            Error::HypothesisViolated(s) => write!(f, "hypothesis violated: {s}"),
            Error::EmptyInput => write!(f, "empty input"),
            Error::Io(s) => write!(f, "io error: {s}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
