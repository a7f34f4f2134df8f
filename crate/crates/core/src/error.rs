use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("log of non-positive value {value}")]
    NonPositiveLog { value: f64 },
    #[error("softmax over row {row} with no finite entry")]
    EmptySoftmax { row: usize },
    #[error("cannot normalize zero-length row {row}")]
    ZeroNorm { row: usize },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

/// First invariant violation found in a graph.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphViolation {
    #[error("offsets: expected {expected} entries, found {found}")]
    OffsetLength { expected: usize, found: usize },
    #[error("offsets decrease at row {row}")]
    OffsetOrder { row: usize },
    #[error("last offset {last} does not equal edge entry count {entries}")]
    OffsetTotal { last: usize, entries: usize },
    #[error("column index {col} in row {row} out of range")]
    ColumnRange { row: usize, col: usize },
    #[error("column indices in row {row} not strictly increasing")]
    ColumnOrder { row: usize },
    #[error("self-loop stored at node {node}")]
    SelfLoop { node: usize },
    #[error("symmetry: edge ({from}, {to}) has no reverse entry")]
    Asymmetric { from: usize, to: usize },
    #[error("feature matrix has {found} rows, expected {expected}")]
    FeatureRows { expected: usize, found: usize },
    #[error("label count {found} does not match node count {expected}")]
    LabelCount { expected: usize, found: usize },
    #[error("label {label} at node {node} not below class count {classes}")]
    LabelRange {
        node: usize,
        label: usize,
        classes: usize,
    },
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("node index {index} out of range for {num_nodes} nodes")]
    NodeOutOfRange { index: usize, num_nodes: usize },
    #[error("feature file has {found} rows but the graph has {expected} nodes")]
    FeatureRowMismatch { expected: usize, found: usize },
    #[error("invalid graph: {0}")]
    Violation(#[from] GraphViolation),
    #[error("invalid SBM spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at iteration {iteration} (grad norms: {grad_norms:?})")]
    NonFiniteLoss {
        iteration: usize,
        loss: f64,
        grad_norms: Vec<f64>,
    },
    #[error("cannot sample {k} negatives from {n} nodes")]
    TooManyNegatives { k: usize, n: usize },
    #[error("class {class} has {available} nodes, {required} required")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },
    #[error("training split contains a single class")]
    SingleClassTrain,
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
