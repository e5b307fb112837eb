//! PSNR and SSIM over [0,1] sRGB images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::ImageSRGB;

/// PSNR is capped here so identical images stay finite.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub image_id: String,
    pub round: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub config_hash: String,
}

/// FNV-1a hash of the canonical JSON form of a config, hex-encoded.
/// Stable across runs and platforms, so reports from identical configs
/// carry identical hashes.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)
        .map_err(|e| Error::Config(format!("hash encode: {e}")))?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{h:016x}"))
}

/// 10*log10(1/MSE) over all channels, capped at 100 dB.
pub fn psnr(a: &ImageSRGB, b: &ImageSRGB) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!(
            "psnr: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over the
/// three channels; windows are evaluated in valid mode (no padding).
pub fn ssim(a: &ImageSRGB, b: &ImageSRGB) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!(
            "ssim: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs dims >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (K1 * K1) as f64;
    let c2 = (K2 * K2) as f64;
    let mut total = 0.0;
    for ch in 0..3 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for top in 0..=(h - SSIM_WINDOW) {
            for left in 0..=(w - SSIM_WINDOW) {
                let (mut ma, mut mb) = (0.0, 0.0);
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let g = win[wy * SSIM_WINDOW + wx];
                        ma += g * a.get(top + wy, left + wx, ch);
                        mb += g * b.get(top + wy, left + wx, ch);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let g = win[wy * SSIM_WINDOW + wx];
                        let da = a.get(top + wy, left + wx, ch) - ma;
                        let db = b.get(top + wy, left + wx, ch) - mb;
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    Ok(total / 3.0)
}
