//! Interactive Gaussian-splat scene editing: prompt-driven 3D selection,
//! exposed-region inpainting and rigid object manipulation on top of a
//! differentiable tile rasterizer.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the interactive service.

pub mod editing;
pub mod error;
pub mod imaging;
pub mod inpainting;
pub mod math;
pub mod renderer;
pub mod scalar;
pub mod scene;
pub mod segmentation;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Scene32 = scene::SplatScene<f32>;
pub type Scene64 = scene::SplatScene<f64>;
pub type Splat32 = scene::Splat<f32>;
pub type Splat64 = scene::Splat<f64>;
pub type Camera32 = scene::Camera<f32>;
pub type Camera64 = scene::Camera<f64>;
pub type Frame32 = renderer::FrameBuffer<f32>;
pub type Frame64 = renderer::FrameBuffer<f64>;

pub type Image32 = imaging::Image2D<f32>;
pub type Image64 = imaging::Image2D<f64>;
pub type Transform32 = editing::RigidTransform<f32>;
pub type Transform64 = editing::RigidTransform<f64>;
