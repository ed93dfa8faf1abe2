//! Error type shared across the registration engine.

use thiserror::Error;

/// Everything that can go wrong while solving, extracting, warping or
/// generating data. Solver contract violations are reported as values, never
/// panics, so callers can map them onto process exit codes or retry logic.
#[derive(Debug, Error)]
pub enum Error {
    /// Two paired collections (keypoint sets, weight vectors, activation
    /// energies) disagree about how many correspondences there are.
    #[error("mismatched lengths: {left} vs {right} {what}")]
    MismatchedLengths {
        left: usize,
        right: usize,
        what: &'static str,
    },

    /// A correspondence weight vector is unusable: negative, non-finite or
    /// summing to zero.
    #[error("invalid correspondence weights: {reason}")]
    InvalidWeights { reason: String },

    /// The keypoint configuration does not pin down the requested transform
    /// (e.g. collinear points for a rigid solve).
    #[error("degenerate keypoint configuration: {reason}")]
    DegenerateConfiguration { reason: String },

    /// A linear system was numerically singular beyond the documented
    /// conditioning threshold; no silent regularization is applied.
    #[error("singular linear system: {reason}")]
    SingularSystem { reason: String },

    /// An activation map has no strictly positive mass, so its center of
    /// mass is undefined.
    #[error("activation map {map} has no positive values")]
    AllZeroMap { map: usize },

    /// An activation map contains negative values; maps must be rectified
    /// before keypoint extraction.
    #[error("activation map {map} contains negative values")]
    NegativeActivation { map: usize },

    /// A keypoint set failed its construction invariants.
    #[error("invalid keypoints: {reason}")]
    InvalidKeypoints { reason: String },

    /// A transform failed its construction invariants (e.g. a rotation
    /// matrix that is not orthonormal).
    #[error("invalid transform: {reason}")]
    InvalidTransform { reason: String },

    /// Trilinear interpolation was requested for a label volume; labels must
    /// be resampled with nearest-neighbor lookup.
    #[error("label volumes require nearest-neighbor interpolation")]
    InterpolationMismatch,

    /// Two volumes that must share a grid have different dimensions.
    #[error("volume dimensions differ: {a:?} vs {b:?}")]
    DimMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },

    /// A label requested for a metric is absent from one of the volumes.
    #[error("label {label} is empty in the {which} volume")]
    EmptyLabel { label: u16, which: &'static str },

    /// A volume failed its construction invariants.
    #[error("invalid volume: {reason}")]
    InvalidVolume { reason: String },

    /// The phantom specification cannot be satisfied (e.g. landmark
    /// separation impossible at the requested count).
    #[error("infeasible phantom spec: {reason}")]
    InfeasibleSpec { reason: String },

    /// A groupwise subject failed to solve; wraps the underlying error with
    /// the subject's index.
    #[error("subject {index}: {source}")]
    Subject {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents do not match the documented format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    /// Attach a subject index to an error raised while processing one
    /// subject of a groupwise problem.
    pub fn for_subject(self, index: usize) -> Self {
        Error::Subject {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
