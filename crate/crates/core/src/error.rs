use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no implied volatility for target {target} outside open bounds ({lower}, {upper})")]
    NoSolution { target: f64, lower: f64, upper: f64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("smile fit has non-positive volatility {vol} at strike {strike}")]
    NonPositiveSmile { strike: f64, vol: f64 },

    #[error("degenerate bound: {0}")]
    DivisionDegenerate(&'static str),

    #[error("infeasible prices, probability vector {p:?}")]
    InfeasiblePrices { p: Vec<f64> },

    #[error("singular calibration system (condition number {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("price vector outside model range: negative components {negative:?} in {p:?}")]
    OutOfRange { p: Vec<f64>, negative: Vec<usize> },

    #[error("calibration infeasible even at volatility floor {floor}")]
    InfeasibleAtFloor { floor: f64 },

    #[error("evaluation time {t} is not before maturity {maturity}")]
    AtMaturity { t: f64, maturity: f64 },

    #[error("particle weights collapsed at time {t}")]
    WeightCollapse { t: f64 },

    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },

    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("no put/call pair with volume on {date}")]
    MissingPair { date: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable kind, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidInput(_) => "invalid_input",
            Error::NoSolution { .. } => "no_solution",
            Error::DegenerateDesign(_) => "degenerate_design",
            Error::NonPositiveSmile { .. } => "non_positive_smile",
            Error::DivisionDegenerate(_) => "division_degenerate",
            Error::InfeasiblePrices { .. } => "infeasible_prices",
            Error::SingularSystem { .. } => "singular_system",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InfeasibleAtFloor { .. } => "infeasible_at_floor",
            Error::AtMaturity { .. } => "at_maturity",
            Error::WeightCollapse { .. } => "weight_collapse",
            Error::MalformedHeader { .. } => "malformed_header",
            Error::MalformedRow { .. } => "malformed_row",
            Error::MissingPair { .. } => "missing_pair",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
