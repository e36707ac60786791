//! One error enum for the whole crate. Variants are deliberately fine-grained:
//! callers (and the CLI's exit-code mapping) distinguish configuration
//! mistakes from I/O failures, and the weight-file loader reports each way a
//! file can be malformed as its own case.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ItsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ItsError {
    // ---- group algebra ----
    #[error("subgroup cardinality must be odd, got {n}")]
    EvenCardinality { n: usize },
    #[error("subgroup bound must be a finite nonnegative number, got {bound}")]
    NegativeBound { bound: f64 },
    #[error("exponent {j} outside the sampled range of a cardinality-{n} subgroup")]
    ExponentOutOfRange { j: i64, n: usize },
    #[error("transform is singular (2x2 block determinant {det:.3e})")]
    SingularTransform { det: f64 },
    #[error("transform last row must be (0, 0, 1)")]
    BadLastRow,
    #[error("element {index} of the prefix does not commute (commutator norm {norm:.3e})")]
    NonCommutingPrefix { index: usize, norm: f64 },
    #[error("index {k} out of bounds for a sequence of length {len}")]
    IndexOutOfBounds { k: usize, len: usize },

    // ---- images & warps ----
    #[error("pixel buffer holds {len} values, expected {expected} for {h}x{w}x{c}")]
    PixelBufferSize {
        h: usize,
        w: usize,
        c: usize,
        len: usize,
        expected: usize,
    },
    #[error("image contains non-finite pixel values")]
    NonFinitePixels,
    #[error("image is {got_h}x{got_w}x{got_c}, expected {want_h}x{want_w}x{want_c}")]
    InputShape {
        got_h: usize,
        got_w: usize,
        got_c: usize,
        want_h: usize,
        want_w: usize,
        want_c: usize,
    },
    #[error("{channels}-channel images are not representable in this format")]
    UnsupportedChannels { channels: usize },

    // ---- logits & models ----
    #[error("logit vector is empty")]
    EmptyLogits,
    #[error("class index {y} out of range for {num_classes} classes")]
    ClassOutOfRange { y: usize, num_classes: usize },
    #[error("dataset must contain at least two distinct classes, found {found}")]
    DegenerateDataset { found: usize },

    // ---- weight files ----
    #[error("weight file magic mismatch (expected \"ITSW\")")]
    BadMagic,
    #[error("unsupported weight file version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("unsupported dtype code {code} for tensor {name:?}")]
    BadDtype { name: String, code: u8 },
    #[error("weight file truncated while reading {what}")]
    Truncated { what: String },
    #[error("weight file is missing tensor {name:?}")]
    MissingTensor { name: String },
    #[error("tensor {name:?} has shape {found:?}, expected {expected}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: String,
    },

    // ---- profiles & confidence ----
    #[error("smoothing kernel must have odd length, got {len}")]
    EvenKernel { len: usize },
    #[error("smoothing kernel taps must be nonnegative, symmetric, and sum to 1 ({reason})")]
    BadKernel { reason: String },
    #[error("kernel of {taps} taps does not fit a profile of length {len}")]
    KernelTooLong { taps: usize, len: usize },
    #[error("profile needs at least 3 points, got {len}")]
    ProfileTooShort { len: usize },
    #[error("degenerate generator step (norm {norm:.3e}); did the subgroup get bound 0?")]
    DegenerateStep { norm: f64 },

    // ---- search & harness configuration ----
    #[error("layer stack is empty")]
    EmptyStack,
    #[error("stack layer {index} has bound 0: its orbit holds only the identity")]
    DegenerateLayer { index: usize },
    #[error("perturbation range {range} exceeds the layer-{index} subgroup bound {bound}")]
    RangeExceedsBound {
        index: usize,
        range: f64,
        bound: f64,
    },
    #[error("invalid configuration: {what}")]
    InvalidConfig { what: String },
    #[error("cannot parse stack component {component:?}: {reason}")]
    StackParse { component: String, reason: String },
    #[error("malformed dataset manifest, line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("malformed pgm file {path}: {reason}")]
    Pgm { path: PathBuf, reason: String },

    // ---- environment ----
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png codec failure on {path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),
}

impl ItsError {
    /// CLI exit code: 3 for environment (I/O) failures, 2 for everything the
    /// caller got wrong (configuration, malformed content).
    pub fn exit_code(&self) -> i32 {
        match self {
            ItsError::Io { .. } | ItsError::Png { .. } => 3,
            _ => 2,
        }
    }

    /// Attach path context to a raw `io::Error`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ItsError::Io {
            path: path.into(),
            source,
        }
    }
}
