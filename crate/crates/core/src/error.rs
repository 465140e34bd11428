use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid cap specification: {0}")]
    InvalidCaps(String),
    #[error("{what} ({x}, {y}) is outside a {width}x{height} grid")]
    OutOfRange {
        what: &'static str,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("window of radius {radius} around ({x}, {y}) leaves the open grid")]
    WindowOutOfGrid { x: i64, y: i64, radius: f64 },
    #[error("sets belong to different grids")]
    GridMismatch,
    #[error("grid has {cells} cells; exhaustive enumeration is capped at {cap}")]
    GridTooLarge { cells: usize, cap: usize },
    #[error("target volume {target} is not reachable (total volume {total})")]
    UnreachableVolume { target: f64, total: f64 },
    #[error("sequence does not converge in L1 to the limit (tail distance {tail_distance})")]
    NotL1Convergent { tail_distance: f64 },
    #[error("curve error: {0}")]
    InvalidCurve(String),
    #[error("no radius in [{r_lo}, {r_hi}] meets budget {budget}; best slack {best_slack} at {best_radius}")]
    CoareaBudget {
        r_lo: f64,
        r_hi: f64,
        budget: f64,
        best_slack: f64,
        best_radius: f64,
    },
    #[error("evanescence at piece {piece}: captured {captured} below floor {floor} (bounded geometry violated)")]
    Evanescence { piece: usize, captured: f64, floor: f64 },
    #[error("sequence term {index} violates bounds: {reason}")]
    SequenceBounds { index: usize, reason: String },
    #[error("active set lies within {margin} of an open wall at term {index}")]
    WallGuard { index: usize, margin: f64 },
    #[error("limit detection failed: worst tail residual {worst} exceeds tolerance {tol}")]
    LimitNotCauchy { worst: f64, tol: f64 },
    #[error("piece {0} has no assigned manifold")]
    OrphanPiece(usize),
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
