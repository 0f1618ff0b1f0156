use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{quantity} = {value} outside valid interval [{min}, {max}]")]
    Range {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("root bracketing failed at lambda = {lambda_um} um in [{lo}, {hi}]: {detail}")]
    Solver {
        lambda_um: f64,
        lo: f64,
        hi: f64,
        detail: String,
    },

    #[error("grid mismatch: {0}")]
    Shape(String),

    #[error("sampling too coarse: {0}")]
    Nyquist(String),

    #[error("propagation guard violated ({fraction:.2e} of power in border); enlarge window by ~{suggested_factor:.1}x")]
    Guard {
        fraction: f64,
        suggested_factor: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no sign change of the mismatch in [{lo_nm}, {hi_nm}] nm (endpoints {f_lo:.3e}, {f_hi:.3e} rad/um)")]
    NoBracket {
        lo_nm: f64,
        hi_nm: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("knife-edge span covers only {fraction:.4} of the beam power")]
    Coverage { fraction: f64 },

    #[error("knife-edge reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("sampling plan: {0}")]
    Plan(String),

    #[error("unphysical caustic fit: a = {a}, b = {b}, c = {c}")]
    UnphysicalFit { a: f64, b: f64, c: f64 },

    #[error("calibration did not meet its targets: {0}")]
    Calibration(String),
}
