//! Differentiable primitive layers.
//!
//! Every layer has a forward function returning its output together with a
//! tape of whatever the backward pass needs, and a backward function that
//! consumes that tape. Forward passes that do not need gradients use the
//! `*_apply` variants, which compute bit-identical outputs without caching.

mod activation;
mod conv;
mod pool;
mod shuffle;

pub use activation::{relu, relu_apply, relu_backward, sigmoid, sigmoid_apply, sigmoid_backward, ReluTape, SigmoidTape};
pub use conv::{conv2d, conv2d_apply, conv2d_backward, Conv2dParams, ConvTape};
pub use pool::{
    channel_scale, channel_scale_apply, channel_scale_backward, gap_backward, global_avg_pool,
    ChannelScaleTape, GapTape,
};
pub use shuffle::{pixel_shuffle, pixel_shuffle_backward, pixel_unshuffle};
