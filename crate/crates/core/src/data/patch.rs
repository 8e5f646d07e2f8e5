use super::image::ImageU8;
use crate::dihedral::{transform, Dihedral};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Aligned LR/HR crops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPair {
    pub lr: ImageU8,
    pub hr: ImageU8,
}

/// Draws a uniformly placed `patch_lr × patch_lr` LR crop and the HR crop
/// covering the same area. Also returns the LR offset `(y, x)`; the HR
/// offset is `scale` times it.
pub fn sample_patch_pair(
    hr: &ImageU8,
    lr: &ImageU8,
    scale: usize,
    patch_lr: usize,
    rng: &mut SplitMix64,
) -> Result<(PatchPair, (usize, usize))> {
    if hr.height() != lr.height() * scale || hr.width() != lr.width() * scale {
        return Err(Error::shape(
            "sample_patch_pair",
            format!(
                "HR {}x{} is not {scale}x LR {}x{}",
                hr.height(),
                hr.width(),
                lr.height(),
                lr.width()
            ),
        ));
    }
    if patch_lr == 0 || lr.height() < patch_lr || lr.width() < patch_lr {
        return Err(Error::InvalidArgument(format!(
            "cannot take a {patch_lr}x{patch_lr} patch from a {}x{} LR image",
            lr.height(),
            lr.width()
        )));
    }
    let y = rng.below(lr.height() - patch_lr + 1);
    let x = rng.below(lr.width() - patch_lr + 1);
    let hp = patch_lr * scale;
    let pair = PatchPair {
        lr: lr.crop(y, x, patch_lr, patch_lr)?,
        hr: hr.crop(y * scale, x * scale, hp, hp)?,
    };
    Ok((pair, (y, x)))
}

fn transform_image(img: &ImageU8, d: Dihedral) -> ImageU8 {
    let (px, h, w) = transform(img.pixels(), img.height(), img.width(), 3, d);
    ImageU8::new(h, w, px).expect("dihedral preserves size")
}

/// Applies dihedral mode `mode` (see [`Dihedral`]) to both patches.
pub fn augment(pair: &PatchPair, mode: usize) -> Result<PatchPair> {
    let d = Dihedral::new(mode)?;
    Ok(PatchPair {
        lr: transform_image(&pair.lr, d),
        hr: transform_image(&pair.hr, d),
    })
}
