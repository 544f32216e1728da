//! Fully convolutional segmentation network: tensors in, two-channel
//! (background, foreground) logits out at the input resolution.

pub mod gradcheck;
pub mod layers;
pub mod model;

pub use gradcheck::{compare_gradients, gradient_check, seeded_default_check, GradCheckReport, ParamCheck};
pub use layers::{
    conv_backward, conv_forward, deconv_backward, deconv_forward, foreground_probability, maxpool_backward,
    maxpool_forward, maxpool_gather, relu_backward, relu_forward, softmax_pixel_loss, ConvGeometry, LabelMask, ParamGrads,
    PoolIndices,
};
pub use model::{ActivationPattern, ConvSpec, FcnModel, LayerSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FcnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("state error: {0}")]
    State(String),
}
