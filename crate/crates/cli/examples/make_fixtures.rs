//! Regenerates the procedural images under `fixtures/`.
//!
//! ```text
//! cargo run -p rcan-cli --example make_fixtures
//! ```

use std::path::Path;

use rcan_core::data::{synthetic, write_ppm, ImageU8};

/// `(file name, height, width, seed)` of every generated image.
const IMAGES: &[(&str, usize, usize, u64)] = &[
    ("scene_a.ppm", 96, 96, 100),
    ("scene_b.ppm", 96, 96, 101),
    ("scene_c.ppm", 72, 84, 102),
    ("scene_d.ppm", 60, 66, 103),
    ("small_8x8.ppm", 8, 8, 7),
];

fn main() -> rcan_core::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for &(name, h, w, seed) in IMAGES {
        let img: ImageU8 = synthetic::scene(h, w, seed);
        write_ppm(&img, dir.join(name))?;
        println!("wrote {name}");
    }
    Ok(())
}
