pub mod harness;
pub mod imaging;
pub mod iris;
pub mod reflection;
pub mod regressor;
pub mod simulator;
pub mod scalar;

pub use imaging::{FloatPlane, ImageBuffer, ImageError, Rect};
pub use iris::{InitialIrisEstimate, IrisCircle, IrisError, IrisFit};
pub use scalar::Real;

/// Single-precision gaze model, the training and inference default.
pub type GazeModel = regressor::ModelParams<f32>;
/// Double-precision gaze model for gradient checks.
pub type GazeModel64 = regressor::ModelParams<f64>;
