//! The eight symmetries of the square, used for training augmentation and
//! self-ensemble inference.
//!
//! Mode `m ∈ 0..8` rotates by `m % 4` clockwise quarter turns and then, when
//! `m >= 4`, flips horizontally. Mode 0 is the identity.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(mode: usize) -> Result<Self> {
        if mode < 8 {
            Ok(Dihedral(mode as u8))
        } else {
            Err(Error::InvalidArgument(format!(
                "augmentation mode must be in 0..8, got {mode}"
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn mode(self) -> usize {
        self.0 as usize
    }

    pub fn quarter_turns(self) -> usize {
        (self.0 % 4) as usize
    }

    pub fn flips(self) -> bool {
        self.0 >= 4
    }

    /// `(h, w)` after the transform.
    pub fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns() % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }
}

/// One clockwise quarter turn of an `h × w` grid with `elem` values per cell.
fn rot90<T: Copy>(src: &[T], h: usize, w: usize, elem: usize) -> Vec<T> {
    // output is w × h; out(i, j) = src(h - 1 - j, i)
    let mut out = Vec::with_capacity(src.len());
    for i in 0..w {
        for j in 0..h {
            let s = ((h - 1 - j) * w + i) * elem;
            out.extend_from_slice(&src[s..s + elem]);
        }
    }
    out
}

fn flip_h<T: Copy>(src: &[T], h: usize, w: usize, elem: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for i in 0..h {
        for j in (0..w).rev() {
            let s = (i * w + j) * elem;
            out.extend_from_slice(&src[s..s + elem]);
        }
    }
    out
}

/// Applies `d` to a row-major `h × w` grid of cells of `elem` values each.
/// Returns the new grid and its `(h, w)`.
pub fn transform<T: Copy>(src: &[T], h: usize, w: usize, elem: usize, d: Dihedral) -> (Vec<T>, usize, usize) {
    assert_eq!(src.len(), h * w * elem, "dihedral transform: bad grid size");
    let (mut buf, mut hh, mut ww) = (src.to_vec(), h, w);
    for _ in 0..d.quarter_turns() {
        buf = rot90(&buf, hh, ww, elem);
        std::mem::swap(&mut hh, &mut ww);
    }
    if d.flips() {
        buf = flip_h(&buf, hh, ww, elem);
    }
    (buf, hh, ww)
}

/// Undoes [`transform`]: `src` is an already-transformed grid of size `h × w`.
pub fn inverse_transform<T: Copy>(src: &[T], h: usize, w: usize, elem: usize, d: Dihedral) -> (Vec<T>, usize, usize) {
    assert_eq!(src.len(), h * w * elem, "dihedral transform: bad grid size");
    let (mut buf, mut hh, mut ww) = (src.to_vec(), h, w);
    if d.flips() {
        buf = flip_h(&buf, hh, ww, elem);
    }
    for _ in 0..(4 - d.quarter_turns()) % 4 {
        buf = rot90(&buf, hh, ww, elem);
        std::mem::swap(&mut hh, &mut ww);
    }
    (buf, hh, ww)
}

fn map_planes(t: &Tensor4, f: impl Fn(&[crate::Real], usize, usize) -> (Vec<crate::Real>, usize, usize)) -> Tensor4 {
    let s = t.shape();
    let mut data = Vec::with_capacity(s.len());
    let (mut oh, mut ow) = (s.h, s.w);
    for n in 0..s.n {
        for c in 0..s.c {
            let (plane, h, w) = f(t.plane(n, c), s.h, s.w);
            data.extend(plane);
            (oh, ow) = (h, w);
        }
    }
    Tensor4::from_vec(Shape4::new(s.n, s.c, oh, ow), data).expect("dihedral preserves size")
}

/// Applies `d` to every spatial plane of `t`.
pub fn transform_tensor(t: &Tensor4, d: Dihedral) -> Tensor4 {
    map_planes(t, |p, h, w| transform(p, h, w, 1, d))
}

pub fn inverse_transform_tensor(t: &Tensor4, d: Dihedral) -> Tensor4 {
    map_planes(t, |p, h, w| inverse_transform(p, h, w, 1, d))
}
