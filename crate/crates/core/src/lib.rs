//! Portrait-mode background blur driven by a small fully convolutional segmenter.
//!
//! The crate is organised bottom-up: [`image`] handles rasters and mattes,
//! [`tensor`] and [`fcn`] implement the network with hand-written backward
//! passes, [`train`] fits it, [`compositor`] blurs and blends, and
//! [`pipeline`] wires the stages together.

pub mod compositor;
pub mod fcn;
pub mod image;
pub mod io;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use compositor::{alpha_blend, build_kernel, feather_matte, gaussian_blur, GaussianKernel};
pub use fcn::{FcnError, FcnModel, LayerSpec};
pub use image::{AlphaMatte, ImageError, RasterImage};
pub use pipeline::{run_portrait, segment, PipelineConfig, PipelineError};
pub use tensor::Tensor;
