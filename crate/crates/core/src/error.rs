use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Data(String),

    #[error("bad_imei: {0:?} is not an IMEI")]
    BadImei(String),

    #[error("future_release: release {release} is after reference {reference}")]
    FutureRelease { release: String, reference: String },

    #[error("duplicate tac {0} in catalog")]
    DuplicateTac(String),

    #[error("degenerate_sites: {0}")]
    DegenerateSites(String),

    #[error("nonconvex_boundary: boundary part {0} is not convex")]
    NonConvexBoundary(usize),

    #[error("unknown site id {0}")]
    UnknownSite(u32),

    #[error("bin width {0} minutes does not divide a day")]
    BinWidth(u32),

    #[error("insufficient_reference: {0} contributing day(s), need at least 2")]
    InsufficientReference(usize),

    #[error("empty response window list")]
    EmptyWindows,

    #[error("empty cohort: {0}")]
    EmptyCohort(String),

    #[error("market share must be in (0, 1], got {0}")]
    InvalidShare(f64),

    #[error("empty bin table: {0}")]
    EmptyTable(String),

    #[error("degenerate_rank: {0}")]
    DegenerateRank(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
}

impl Error {
    /// True for failures caused by the content of input data rather than by
    /// configuration or the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Config(_) | Error::InfeasibleScenario(_))
    }
}
