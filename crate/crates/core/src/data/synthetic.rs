//! Deterministic procedural test images: smooth gradients, oriented
//! gratings, hard-edged shapes and mild noise.

use super::image::ImageU8;
use crate::rng::SplitMix64;

struct Grating {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: [f64; 3],
}

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

pub fn scene(h: usize, w: usize, seed: u64) -> ImageU8 {
    let mut rng = SplitMix64::new(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform(60.0, 190.0));
    let slope: [(f64, f64); 3] = std::array::from_fn(|_| (rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)));
    let gratings: Vec<Grating> = (0..3)
        .map(|_| Grating {
            fy: rng.uniform(-0.6, 0.6),
            fx: rng.uniform(-0.6, 0.6),
            phase: rng.uniform(0.0, std::f64::consts::TAU),
            amp: std::array::from_fn(|_| rng.uniform(5.0, 25.0)),
        })
        .collect();
    let shapes: Vec<(Shape, [f64; 3])> = (0..4)
        .map(|i| {
            let cy = rng.uniform(0.0, h as f64);
            let cx = rng.uniform(0.0, w as f64);
            let size = rng.uniform(0.1, 0.3) * h.min(w) as f64;
            let color = std::array::from_fn(|_| rng.uniform(0.0, 255.0));
            let shape = if i % 2 == 0 {
                Shape::Disc { cy, cx, r: size }
            } else {
                Shape::Rect {
                    y0: cy - size,
                    x0: cx - size * 0.7,
                    y1: cy + size,
                    x1: cx + size * 0.7,
                }
            };
            (shape, color)
        })
        .collect();
    let (hf, wf) = (h.max(1) as f64, w.max(1) as f64);
    ImageU8::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut px: [f64; 3] = std::array::from_fn(|c| base[c] + slope[c].0 * yf / hf + slope[c].1 * xf / wf);
        for g in &gratings {
            let s = (g.fy * yf + g.fx * xf + g.phase).sin();
            for c in 0..3 {
                px[c] += g.amp[c] * s;
            }
        }
        for (shape, color) in &shapes {
            let inside = match *shape {
                Shape::Disc { cy, cx, r } => (yf - cy).powi(2) + (xf - cx).powi(2) <= r * r,
                Shape::Rect { y0, x0, y1, x1 } => yf >= y0 && yf < y1 && xf >= x0 && xf < x1,
            };
            if inside {
                px = std::array::from_fn(|c| 0.3 * px[c] + 0.7 * color[c]);
            }
        }
        std::array::from_fn(|c| (px[c] + rng.uniform(-3.0, 3.0)).round().clamp(0.0, 255.0) as u8)
    })
    .expect("positive dimensions")
}
