//! Procedural clean-scene generator so the repo runs with zero downloads.
//! Cycles through smooth gradients, checkers, radial blobs, and low-pass
//! filtered noise; values stay inside [0.05, 0.95] to keep the simulated
//! camera away from hard clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::imageio::ImageSRGB;

const LO: f64 = 0.05;
const HI: f64 = 0.95;

fn span(rng: &mut impl Rng) -> (f64, f64) {
    let a = rng.gen_range(LO..HI);
    let b = rng.gen_range(LO..HI);
    (a.min(b), a.max(b))
}

fn gradient(h: usize, w: usize, rng: &mut impl Rng) -> ImageSRGB {
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = (theta.sin(), theta.cos());
    let lo = [span(rng), span(rng), span(rng)];
    ImageSRGB::from_fn(h, w, |y, x, c| {
        let t = (dy * y as f64 / h as f64 + dx * x as f64 / w as f64 + 1.0) / 2.0;
        let (a, b) = lo[c];
        a + (b - a) * t.clamp(0.0, 1.0)
    })
}

fn checker(h: usize, w: usize, rng: &mut impl Rng) -> ImageSRGB {
    let period = rng.gen_range(4..=12) * 2;
    let c0 = [rng.gen_range(LO..HI), rng.gen_range(LO..HI), rng.gen_range(LO..HI)];
    let c1 = [rng.gen_range(LO..HI), rng.gen_range(LO..HI), rng.gen_range(LO..HI)];
    ImageSRGB::from_fn(h, w, |y, x, c| {
        if ((y / period) + (x / period)) % 2 == 0 {
            c0[c]
        } else {
            c1[c]
        }
    })
}

fn radial(h: usize, w: usize, rng: &mut impl Rng) -> ImageSRGB {
    let cy = rng.gen_range(0.2..0.8) * h as f64;
    let cx = rng.gen_range(0.2..0.8) * w as f64;
    let scale = rng.gen_range(0.3..1.0) * (h.min(w)) as f64;
    let inner = [rng.gen_range(LO..HI), rng.gen_range(LO..HI), rng.gen_range(LO..HI)];
    let outer = [rng.gen_range(LO..HI), rng.gen_range(LO..HI), rng.gen_range(LO..HI)];
    ImageSRGB::from_fn(h, w, |y, x, c| {
        let d = (((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() / scale).min(1.0);
        inner[c] + (outer[c] - inner[c]) * d
    })
}

fn box_blur(img: &mut ImageSRGB, radius: usize) {
    let (h, w) = (img.height(), img.width());
    let r = radius as isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let i = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        i as usize
    };
    let src = img.data().to_vec();
    let mut tmp = vec![0.0; src.len()];
    // Horizontal pass.
    for y in 0..h {
        for x in 0..w as isize {
            for c in 0..3 {
                let mut s = 0.0;
                for k in -r..=r {
                    s += src[(y * w + reflect(x + k, w)) * 3 + c];
                }
                tmp[(y * w + x as usize) * 3 + c] = s / (2 * r + 1) as f64;
            }
        }
    }
    // Vertical pass.
    let out = img.data_mut();
    for y in 0..h as isize {
        for x in 0..w {
            for c in 0..3 {
                let mut s = 0.0;
                for k in -r..=r {
                    s += tmp[(reflect(y + k, h) * w + x) * 3 + c];
                }
                out[(y as usize * w + x) * 3 + c] = s / (2 * r + 1) as f64;
            }
        }
    }
}

fn filtered_noise(h: usize, w: usize, rng: &mut impl Rng) -> ImageSRGB {
    let mut img = ImageSRGB::from_fn(h, w, |_, _, _| 0.0);
    for v in img.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    box_blur(&mut img, 3);
    box_blur(&mut img, 3);
    // Renormalize the blurred field back to a usable contrast range.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in img.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let scale = if hi > lo { (HI - LO) / (hi - lo) } else { 0.0 };
    for v in img.data_mut() {
        *v = LO + (*v - lo) * scale;
    }
    img
}

/// Deterministically generates `count` scenes of size `h` x `w`.
/// Smooth triangle-wave ramp sweeping almost the whole intensity range on
/// every channel. The wave peaks at the horizontal midpoint, so each spatial
/// quadrant of the image covers the full range on its own — important when a
/// map or noise level function is fitted on one quadrant and checked on the
/// others.
pub fn calibration_ramp(h: usize, w: usize) -> ImageSRGB {
    ImageSRGB::from_fn(h, w, |_, x, _| {
        let t = 1.0 - (2.0 * x as f64 / (w - 1) as f64 - 1.0).abs();
        0.06 + 0.92 * t
    })
}

pub fn generate(count: usize, h: usize, w: usize, seed: u64) -> Vec<ImageSRGB> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| match i % 4 {
            0 => gradient(h, w, &mut rng),
            1 => filtered_noise(h, w, &mut rng),
            2 => checker(h, w, &mut rng),
            _ => radial(h, w, &mut rng),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = generate(5, 32, 48, 7);
        let b = generate(5, 32, 48, 7);
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        for img in &a {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(1, 16, 16, 1);
        let b = generate(1, 16, 16, 2);
        assert_ne!(a[0].data(), b[0].data());
    }
}
