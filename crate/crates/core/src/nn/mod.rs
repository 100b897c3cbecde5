//! A small feed-forward CNN engine with masked weights and manual backward passes.

mod conv;
mod layer;
mod loss;
mod model;
mod nsconv;
mod tensor;
mod moments;

pub use conv::conv_forward;
pub use layer::{infer_shapes, ConvSpec, LayerSpec};
pub use loss::{argmax_rows, loss_and_grad};
pub use model::{CacheRecord, ForwardTrace, GradMode, GradientSet, LayerGrad, LayerParams, SparseModel};
pub use nsconv::{nsconv_standardize, standardize_layer, FilterStats, STD_EPS};
pub use tensor::Tensor;
pub use moments::{channel_moment_check, ChannelStats, ChannelMomentSetup};
