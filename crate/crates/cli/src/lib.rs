//! Offline driver for the splat editor: synthetic scenes, segmentation,
//! inpainting, rendering, editing and metrics.

pub mod commands;
pub mod eval;
