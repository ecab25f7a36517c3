use thiserror::Error;

/// Errors produced by meshing, assembly, and the solver stack.
#[derive(Debug, Error)]
pub enum FsiError {
    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("mesh invariant violated: {0}")]
    Invariant(String),

    #[error("element {element}: inverted (J = {j:.6e} <= 0)")]
    ElementInversion { element: usize, j: f64 },

    #[error("element {element}: fiber exponent overflow (k2*(Ji-1)^2 = {exponent:.3e} > 50); reduce the load step")]
    FiberOverflow { element: usize, exponent: f64 },

    #[error("element {element}: non-finite entry during assembly")]
    NonFinite { element: usize },

    #[error("linear solver failed: {0}")]
    LinearSolve(String),

    #[error("Newton did not converge after {iterations} iterations; increment norms: {history:?}")]
    NewtonDiverged { iterations: usize, history: Vec<f64> },

    #[error("DN coupling did not converge after {iterations} iterations; interface residuals: {history:?}")]
    DnDiverged { iterations: usize, history: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FsiError>;
