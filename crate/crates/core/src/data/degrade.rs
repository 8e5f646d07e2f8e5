use super::image::{ImageU8, RgbPlanes};
use super::resize::resize_planes;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DegradationKind {
    /// Bicubic downscale.
    Bicubic,
    /// Gaussian blur, then bicubic downscale.
    BlurDown { sigma: Real, ksize: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub scale: usize,
}

impl DegradationSpec {
    pub const BD_SIGMA: Real = 1.6;
    pub const BD_KSIZE: usize = 7;

    pub fn bicubic(scale: usize) -> Self {
        Self {
            kind: DegradationKind::Bicubic,
            scale,
        }
    }

    /// Blur-downscale with the default 7×7, σ = 1.6 kernel.
    pub fn blur_down(scale: usize) -> Self {
        Self {
            kind: DegradationKind::BlurDown {
                sigma: Self::BD_SIGMA,
                ksize: Self::BD_KSIZE,
            },
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 3, 4, 8].contains(&self.scale) {
            return Err(Error::Config(format!("scale must be 2, 3, 4 or 8, got {}", self.scale)));
        }
        if let DegradationKind::BlurDown { sigma, ksize } = self.kind {
            gaussian_kernel(sigma, ksize)?;
        }
        Ok(())
    }

    /// Short label: `bi` or `bd`.
    pub fn label(&self) -> &'static str {
        match self.kind {
            DegradationKind::Bicubic => "bi",
            DegradationKind::BlurDown { .. } => "bd",
        }
    }
}

/// Normalised 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_kernel(sigma: Real, ksize: usize) -> Result<Vec<Real>> {
    if ksize % 2 == 0 {
        return Err(Error::InvalidArgument(format!("blur kernel size must be odd, got {ksize}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (ksize / 2) as isize;
    let taps: Vec<Real> = (-r..=r)
        .map(|i| (-((i * i) as Real) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: Real = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

fn blur_plane(src: &[Real], h: usize, w: usize, taps: &[Real]) -> Vec<Real> {
    let r = (taps.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[y * w + clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let sy = clamp(y as isize + k as isize - r, h);
            for x in 0..w {
                out[y * w + x] += t * tmp[sy * w + x];
            }
        }
    }
    out
}

/// Gaussian blur with replicated borders.
pub fn gaussian_blur(p: &RgbPlanes, sigma: Real, ksize: usize) -> Result<RgbPlanes> {
    let taps = gaussian_kernel(sigma, ksize)?;
    Ok(RgbPlanes {
        h: p.h,
        w: p.w,
        planes: [0, 1, 2].map(|c| blur_plane(&p.planes[c], p.h, p.w, &taps)),
    })
}

/// Top-left crop to the largest dimensions divisible by `scale`.
pub fn crop_to_multiple(img: &ImageU8, scale: usize) -> Result<ImageU8> {
    let (h, w) = (img.height() / scale * scale, img.width() / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than the scale factor {scale}",
            img.height(),
            img.width()
        )));
    }
    img.crop(0, 0, h, w)
}

/// Real-valued degradation; dimensions must already be multiples of the scale.
pub fn degrade_planes(hr: &RgbPlanes, spec: &DegradationSpec) -> Result<RgbPlanes> {
    spec.validate()?;
    if hr.h % spec.scale != 0 || hr.w % spec.scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by scale {}",
            hr.h, hr.w, spec.scale
        )));
    }
    let blurred;
    let src = match spec.kind {
        DegradationKind::Bicubic => hr,
        DegradationKind::BlurDown { sigma, ksize } => {
            blurred = gaussian_blur(hr, sigma, ksize)?;
            &blurred
        }
    };
    resize_planes(src, hr.h / spec.scale, hr.w / spec.scale, true)
}

/// Synthesises the 8-bit LR image for `hr`, cropping `hr` to a multiple of
/// the scale first. Returns the cropped HR and its LR counterpart.
pub fn degrade(hr: &ImageU8, spec: &DegradationSpec) -> Result<(ImageU8, ImageU8)> {
    spec.validate()?;
    let hr = crop_to_multiple(hr, spec.scale)?;
    let lr = degrade_planes(&RgbPlanes::from_image(&hr), spec)?.to_image();
    Ok((hr, lr))
}
