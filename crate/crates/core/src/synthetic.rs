//! Procedural crack images for smoke tests and demos: a speckled asphalt-like
//! background crossed by one or two dark meandering cracks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::maps::Mask;
use crate::tensor::Tensor4;

/// Returns `(image (1, channels, h, w) in [0,1], crack mask)`.
pub fn crack_image(height: usize, width: usize, channels: usize, seed: u64) -> (Tensor4<f32>, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Mask::zeros(height, width);
    let cracks = rng.gen_range(1..=2);
    for _ in 0..cracks {
        let horizontal = rng.gen_bool(0.5);
        let (len, span) = if horizontal { (width, height) } else { (height, width) };
        let mut pos = rng.gen_range(span as f64 * 0.2..span as f64 * 0.8);
        let mut drift = rng.gen_range(-0.6..0.6);
        let thickness = rng.gen_range(1..=2usize);
        for t in 0..len {
            drift = (drift + rng.gen_range(-0.25f64..0.25)).clamp(-1.0, 1.0);
            pos = (pos + drift).clamp(1.0, span as f64 - 2.0);
            let centre = pos.round() as usize;
            for d in 0..thickness {
                let across = (centre + d).min(span - 1);
                let (y, x) = if horizontal { (across, t) } else { (t, across) };
                mask.set(y, x, true);
            }
        }
    }
    let tint: Vec<f32> = (0..channels).map(|_| rng.gen_range(0.9..1.1)).collect();
    let base = rng.gen_range(0.45..0.65f32);
    let mut speckle = vec![0f32; height * width];
    for v in speckle.iter_mut() {
        *v = rng.gen_range(-0.08..0.08);
    }
    let image = Tensor4::from_fn([1, channels, height, width], |_, c, y, x| {
        let bg = base + speckle[y * width + x];
        let v = if mask.get(y, x) { bg * 0.35 } else { bg };
        (v * tint[c]).clamp(0.0, 1.0)
    });
    (image, mask)
}
