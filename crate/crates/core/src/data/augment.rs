// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

/// Random crop with zero padding followed by an optional horizontal flip,
/// applied in place to a `[channels, height, width]` image.
pub fn crop_and_flip<R: Rng + ?Sized>(image: &mut [f32], dims: [usize; 3], pad: usize, flip: bool, rng: &mut R) {
    let [c, h, w] = dims;
    let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let mirror = flip && rng.random_bool(0.5);
    let src = image.to_vec();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = y as isize + dy;
                let sx0 = if mirror { (w - 1 - x) as isize } else { x as isize };
                let sx = sx0 + dx;
                image[(ch * h + y) * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                    src[(ch * h + sy as usize) * w + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}
