//! sRGB image type and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// H x W x 3 sRGB image, values in [0,1], channel-interleaved rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSRGB {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ImageSRGB {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image {h}x{w}x3 needs {} values, got {}",
                h * w * 3,
                data.len()
            )));
        }
        Ok(ImageSRGB { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ImageSRGB {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = f(y, x, c);
                }
            }
        }
        ImageSRGB { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.w + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.w + x) * 3 + c] = v;
    }

    pub fn clip(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Converts to a [1,3,H,W] tensor (planar).
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.h * self.w;
        let mut out = vec![0.0; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                out[c * hw + i] = self.data[i * 3 + c];
            }
        }
        Tensor::new(vec![1, 3, self.h, self.w], out).expect("consistent dims")
    }

    /// Builds from a [1,3,H,W] tensor without clipping.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = *t.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "expected [1,3,H,W], got {:?}",
                t.shape()
            )));
        };
        if n != 1 || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected [1,3,H,W], got {:?}",
                t.shape()
            )));
        }
        let hw = h * w;
        let src = t.data();
        let mut data = vec![0.0; 3 * hw];
        for i in 0..hw {
            for ch in 0..3 {
                data[i * 3 + ch] = src[ch * hw + i];
            }
        }
        Ok(ImageSRGB { h, w, data })
    }

    pub fn crop(&self, top: usize, left: usize, ch: usize, cw: usize) -> Result<ImageSRGB> {
        if top + ch > self.h || left + cw > self.w {
            return Err(Error::InvalidArgument(format!(
                "crop {top}+{ch} x {left}+{cw} out of {}x{}",
                self.h, self.w
            )));
        }
        let mut out = ImageSRGB::zeros(ch, cw);
        for y in 0..ch {
            for x in 0..cw {
                for c in 0..3 {
                    out.set(y, x, c, self.get(top + y, left + x, c));
                }
            }
        }
        Ok(out)
    }
}

/// Writes a 16-bit PNG (values clipped to [0,1]).
pub fn write_png16(path: &Path, img: &ImageSRGB) -> Result<()> {
    let mut buf: Vec<u16> = Vec::with_capacity(img.data.len());
    for &v in &img.data {
        buf.push((v.clamp(0.0, 1.0) * 65535.0).round() as u16);
    }
    let out = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(
        img.w as u32,
        img.h as u32,
        buf,
    )
    .expect("sized buffer");
    out.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes an 8-bit PNG (values clipped to [0,1]).
pub fn write_png8(path: &Path, img: &ImageSRGB) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(img.data.len());
    for &v in &img.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let out =
        image::ImageBuffer::<image::Rgb<u8>, _>::from_raw(img.w as u32, img.h as u32, buf)
            .expect("sized buffer");
    out.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads an 8- or 16-bit PNG into [0,1] floats.
pub fn read_png(path: &Path) -> Result<ImageSRGB> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.into_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data: Vec<f64> = rgb.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    ImageSRGB::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trip_is_exact_on_grid_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        // Values on the 16-bit grid survive the round trip exactly.
        let img = ImageSRGB::from_fn(6, 4, |y, x, c| {
            (((y * 4 + x) * 3 + c) * 631 % 65536) as f64 / 65535.0
        });
        write_png16(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.height(), 6);
        assert_eq!(back.width(), 4);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_round_trip() {
        let img = ImageSRGB::from_fn(4, 6, |y, x, c| (y + x + c) as f64 / 12.0);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 4, 6]);
        let back = ImageSRGB::from_tensor(&t).unwrap();
        assert_eq!(img, back);
    }
}
