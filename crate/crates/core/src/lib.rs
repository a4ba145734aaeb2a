//! Stereo rectification for fisheye and perspective cameras using
//! pixel-variant local homographies.
//!
//! Instead of a single global rectifying homography, every pixel gets its own
//! admissible transformation `H = Psi ∘ R ∘ Phi`: the intrinsic model `Phi`
//! lifts pixels to bearing vectors, rectifying rotations `R1`/`R2` align the
//! camera frames with the baseline, and a pair of monotone cubic projections
//! `Psi_u`/`Psi_v` maps the epipolar angles `(gamma, beta)` to rectified
//! coordinates. The cubic coefficients are optimized to minimize resampling
//! distortion while keeping corresponding points on the same scan line.
//!
//! The crate covers the full pipeline: camera models, relative pose
//! estimation, rectification model optimization, backward-LUT warping, block
//! matching and disparity-based 3D reconstruction, plus a synthetic scene
//! generator used for ground-truth evaluation.

pub mod camera;
pub mod distortion;
pub mod epipolar;
pub mod eval;
pub mod optimizer;
pub mod reconstruct;
pub mod rectmodel;
pub mod synth;
pub mod warper;

pub use camera::{Bearing, CameraError, CameraKind, CameraModel, Pixel};
pub use distortion::{DistortionReport, DistortionWeights, JacobianColumns};
pub use epipolar::{
    Correspondence, EssentialMatrix, MultiplierPair, PoseEstimate, RansacConfig,
    RectifyingRotations, RelativePose,
};
pub use eval::{EvaluationSummary, RectifyMap};
pub use optimizer::{OptimizeResult, OptimizerConfig};
pub use reconstruct::{DisparityMap, Point3D};
pub use rectmodel::{AngleCoords, CubicProjection, MapError, RectificationModel};
pub use synth::{GroundTruthBundle, SyntheticScene};
pub use warper::{BackwardLut, RasterImage};
