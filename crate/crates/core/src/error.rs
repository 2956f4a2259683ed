use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two nuclear-sector eigenvalues coincide so the near-zero state cannot
    /// be told apart from its neighbor.
    #[error("eigenvalue labeling is ambiguous: relative separation {separation:.3e} below {tolerance:.3e}")]
    LabelingAmbiguity { separation: f64, tolerance: f64 },

    /// The closed-form eigenvector coefficients divide by Bx.
    #[error("degenerate field: Bx = 0 has no closed-form eigenvector coefficients")]
    DegenerateField,

    /// Trace drifted during integration; the step is too coarse.
    #[error("propagation unstable: |trace - 1| = {trace_error:.3e} at t = {t_us} us")]
    StepUnstable { trace_error: f64, t_us: f64 },

    /// Kernel matrix could not be factorized (duplicate or collinear samples).
    #[error("surrogate fit is ill-conditioned: {0}")]
    IllConditioned(String),

    /// Linear regression over a single abscissa value.
    #[error("degenerate regression: all x values equal")]
    DegenerateX,

    /// Measured trace carries no usable amplitude span.
    #[error("flat trace: amplitude span is zero")]
    FlatTrace,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
