//! Posterior uncertainty for a differentiable 2D Gaussian-splat renderer:
//! online diagonal Fisher, Laplace covariance, Jacobian–covariance
//! propagation to pixels and objects, and next-best-view selection.

pub mod camera;
pub mod cli;
pub mod error;
pub mod fisher;
pub mod io;
pub mod nbv;
pub mod oracle;
pub mod presets;
pub mod propagate;
pub mod render;
pub mod scene;
pub mod train;
pub mod verify;

pub use camera::CameraPose;
pub use error::{Error, Result};
pub use fisher::{CovDiag, FisherDiag, NoiseModel};
pub use presets::Preset;
pub use render::{render, Image, PixelJacobian, Rendering};
pub use scene::{GaussianSplat, ParamVector, SceneParams};
