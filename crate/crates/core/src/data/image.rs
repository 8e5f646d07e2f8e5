use std::fs;
use std::path::Path;

use crate::error::{Error, ImageError, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// 8-bit RGB image, pixels interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    h: usize,
    w: usize,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(h: usize, w: usize, pixels: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {h}x{w}")));
        }
        if pixels.len() != h * w * 3 {
            return Err(Error::shape(
                "ImageU8::new",
                format!("{h}x{w} RGB image needs {} bytes, got {}", h * w * 3, pixels.len()),
            ));
        }
        Ok(Self { h, w, pixels })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                pixels.extend_from_slice(&f(y, x));
            }
        }
        Self::new(h, w, pixels)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.w + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Sub-image with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<ImageU8> {
        if y + h > self.h || x + w > self.w {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{} image",
                self.h, self.w
            )));
        }
        let mut pixels = Vec::with_capacity(h * w * 3);
        for row in y..y + h {
            let start = (row * self.w + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        ImageU8::new(h, w, pixels)
    }
}

/// A single real-valued channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<Real>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape("Plane::new", format!("{h}x{w} plane needs {} values, got {}", h * w, data.len())));
        }
        Ok(Self { h, w, data })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Real {
        self.data[y * self.w + x]
    }

    /// Removes `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Plane> {
        if self.h <= 2 * border || self.w <= 2 * border {
            return Err(Error::InvalidArgument(format!(
                "cannot remove a {border}-pixel border from a {}x{} plane",
                self.h, self.w
            )));
        }
        let (h, w) = (self.h - 2 * border, self.w - 2 * border);
        let mut data = Vec::with_capacity(h * w);
        for y in border..border + h {
            data.extend_from_slice(&self.data[y * self.w + border..y * self.w + border + w]);
        }
        Plane::new(h, w, data)
    }
}

/// Three real-valued planes on the 0–255 scale, used while resampling.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbPlanes {
    pub h: usize,
    pub w: usize,
    pub planes: [Vec<Real>; 3],
}

impl RgbPlanes {
    pub fn from_image(img: &ImageU8) -> Self {
        let mut planes: [Vec<Real>; 3] = Default::default();
        for p in &mut planes {
            p.reserve(img.h * img.w);
        }
        for px in img.pixels.chunks_exact(3) {
            for c in 0..3 {
                planes[c].push(px[c] as Real);
            }
        }
        Self { h: img.h, w: img.w, planes }
    }

    /// Clamps to `[0, 255]` and rounds half up.
    pub fn to_image(&self) -> ImageU8 {
        let mut pixels = Vec::with_capacity(self.h * self.w * 3);
        for i in 0..self.h * self.w {
            for c in 0..3 {
                pixels.push(super::color::quantize_round_half_up(self.planes[c][i]));
            }
        }
        ImageU8::new(self.h, self.w, pixels).expect("consistent planes")
    }
}

/// `1 × 3 × h × w` tensor with values `pixel / 255`.
pub fn image_to_tensor(img: &ImageU8) -> Tensor4 {
    let shape = Shape4::new(1, 3, img.h, img.w);
    Tensor4::from_fn(shape, |_, c, y, x| img.pixels[(y * img.w + x) * 3 + c] as Real / 255.0)
}

/// Converts batch item `n` of a 3-channel tensor to 8 bits: clamp to
/// `[0, 1]`, scale by 255, round half up.
pub fn tensor_to_image(t: &Tensor4, n: usize) -> Result<ImageU8> {
    let s = t.shape();
    if s.c != 3 || n >= s.n {
        return Err(Error::shape("tensor_to_image", format!("cannot export item {n} of {s} as RGB")));
    }
    ImageU8::from_fn(s.h, s.w, |y, x| {
        let mut px = [0u8; 3];
        for (c, p) in px.iter_mut().enumerate() {
            *p = super::color::quantize_round_half_up(t.get(n, c, y, x).clamp(0.0, 1.0) * 255.0);
        }
        px
    })
}

fn parse_ppm(bytes: &[u8]) -> Result<ImageU8, ImageError> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String, ImageError> {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::BadHeader(format!("missing {what}"))),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token("magic number")?;
    if magic != "P6" {
        return Err(if magic.len() == 2 && magic.starts_with('P') {
            ImageError::UnsupportedFormat(magic)
        } else {
            ImageError::BadHeader(format!("bad magic number `{magic}`"))
        });
    }
    let mut number = |what: &str| -> Result<usize, ImageError> {
        let t = token(what)?;
        t.parse::<usize>()
            .map_err(|_| ImageError::BadHeader(format!("{what} `{t}` is not a non-negative integer")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if w == 0 || h == 0 {
        return Err(ImageError::BadHeader(format!("zero-sized image {w}x{h}")));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval.min(u32::MAX as usize) as u32));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::BadHeader("missing whitespace after maxval".into())),
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| ImageError::BadHeader(format!("image {w}x{h} too large")))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(ImageU8 {
        h,
        w,
        pixels: payload[..expected].to_vec(),
    })
}

/// Canonical encoding: `P6\n{w} {h}\n255\n` followed by the pixels.
fn encode_ppm(img: &ImageU8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageU8> {
    let bytes = fs::read(path).map_err(ImageError::Io)?;
    Ok(parse_ppm(&bytes)?)
}

pub fn write_ppm(img: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(ImageError::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_red_pixel() {
        let img = parse_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!((img.height(), img.width(), img.pixels()), (1, 1, &[255u8, 0, 0][..]));
    }

    #[test]
    fn header_comments_and_whitespace() {
        let img = parse_ppm(b"P6 # comment\n2\t1 # more\n255 \x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(img.pixel(0, 1), [4, 5, 6]);
    }

    #[test]
    fn rejections() {
        assert!(matches!(parse_ppm(b"P5\n1 1\n255\n\x00"), Err(ImageError::UnsupportedFormat(m)) if m == "P5"));
        assert!(matches!(parse_ppm(b"JUNK"), Err(ImageError::BadHeader(_))));
        assert!(matches!(parse_ppm(b"P6\n1 x\n255\n"), Err(ImageError::BadHeader(_))));
        assert!(matches!(parse_ppm(b"P6\n1 1\n65535\n\x00\x00"), Err(ImageError::UnsupportedMaxval(65535))));
        assert!(matches!(
            parse_ppm(b"P6\n2 2\n255\n\x00\x00\x00"),
            Err(ImageError::Truncated { expected: 12, found: 3 })
        ));
        assert!(matches!(parse_ppm(b"P6\n1 1"), Err(ImageError::BadHeader(_))));
    }

    #[test]
    fn canonical_bytes_roundtrip() {
        let img = ImageU8::from_fn(3, 4, |y, x| [(y * 40) as u8, (x * 60) as u8, 7]).unwrap();
        let bytes = encode_ppm(&img);
        let back = parse_ppm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_ppm(&back), bytes);
    }

    #[test]
    fn tensor_conversion() {
        let img = ImageU8::from_fn(2, 3, |y, x| [(y * 100) as u8, (x * 100) as u8, 255]).unwrap();
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), Shape4::new(1, 3, 2, 3));
        assert_eq!(t.get(0, 0, 1, 0), 100.0 / 255.0);
        assert_eq!(tensor_to_image(&t, 0).unwrap(), img);
        let out_of_range = Tensor4::full(Shape4::new(1, 3, 1, 1), 1.7);
        assert_eq!(tensor_to_image(&out_of_range, 0).unwrap().pixels(), &[255, 255, 255]);
    }

    #[test]
    fn crop_and_shave() {
        let img = ImageU8::from_fn(4, 5, |y, x| [y as u8, x as u8, 0]).unwrap();
        let c = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.pixel(0, 0), [1, 2, 0]);
        assert_eq!(c.pixel(1, 2), [2, 4, 0]);
        assert!(img.crop(3, 0, 2, 1).is_err());
        let p = Plane::new(4, 4, (0..16).map(|v| v as Real).collect()).unwrap();
        assert_eq!(p.shave(1).unwrap().data, vec![5.0, 6.0, 9.0, 10.0]);
        assert!(p.shave(2).is_err());
    }
}
