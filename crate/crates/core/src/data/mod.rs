//! Image data: PPM I/O, colour conversion, resampling, degradation and the
//! patch sampler used for training.

mod color;
mod degrade;
mod image;
mod manifest;
mod patch;
mod resize;
pub mod synthetic;

pub use color::{quantize_round_half_up, rgb_to_y};
pub use degrade::{crop_to_multiple, degrade, degrade_planes, gaussian_blur, gaussian_kernel, DegradationKind, DegradationSpec};
pub use image::{image_to_tensor, read_ppm, tensor_to_image, write_ppm, ImageU8, Plane, RgbPlanes};
pub use manifest::read_manifest;
pub use patch::{augment, sample_patch_pair, PatchPair};
pub use resize::{bicubic_resize, bicubic_upscale_tensor, contributions, cubic_kernel, resize_plane, Contribution};
