use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid attention stack: {0}")]
    InvalidStack(String),
    #[error(
        "attention row at (layer {layer}, head {head}, row {row}) sums to {sum}, expected 1 +/- {tolerance}"
    )]
    RowSum {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
        tolerance: f64,
    },
    #[error("negative attention value {value} at (layer {layer}, head {head}, row {row}, col {col})")]
    NegativeAttention {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
        value: f32,
    },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("start layer {start} outside stored layers {first}..{end}")]
    StartLayer { start: usize, first: usize, end: usize },
    #[error("empty visual range")]
    EmptyVisualRange,
    #[error("degenerate histogram")]
    DegenerateHistogram,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPredictions(alloc::vec::Vec<String>),
    #[error("malformed run-length encoding: {0}")]
    Rle(String),
}
