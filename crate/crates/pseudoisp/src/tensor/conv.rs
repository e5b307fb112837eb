//! Grouped 2D cross-correlation (stride 1, zero padding) via im2col + GEMM.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) struct ConvSpec {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub groups: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn check(
        input_shape: &[usize],
        weight_shape: &[usize],
        bias_shape: &[usize],
        groups: usize,
        padding: usize,
    ) -> Result<ConvSpec> {
        let [n, c_in, h, w] = *input_shape else {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input must be [N,C,H,W], got {input_shape:?}"
            )));
        };
        let [c_out, c_in_g, kh, kw] = *weight_shape else {
            return Err(Error::ShapeMismatch(format!(
                "conv2d weight must be [Cout,Cin/g,k,k], got {weight_shape:?}"
            )));
        };
        if kh != kw {
            return Err(Error::ShapeMismatch(format!(
                "square kernels only, got {kh}x{kw}"
            )));
        }
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "groups {groups} must divide in/out channels {c_in}/{c_out}"
            )));
        }
        if c_in_g != c_in / groups {
            return Err(Error::ShapeMismatch(format!(
                "weight expects {c_in_g} input channels per group, input has {}",
                c_in / groups
            )));
        }
        if bias_shape != [c_out] {
            return Err(Error::ShapeMismatch(format!(
                "bias must be [{c_out}], got {bias_shape:?}"
            )));
        }
        if padding != (kh - 1) / 2 || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "padding {padding} must be (k-1)/2 for odd k, k={kh}"
            )));
        }
        Ok(ConvSpec {
            n,
            c_in,
            c_out,
            h,
            w,
            k: kh,
            groups,
            padding,
        })
    }
}

/// Gathers one sample's group slice into [Cin_g*k*k, H*W] column form.
fn im2col(input: &[f64], s: &ConvSpec, group: usize) -> Array2<f64> {
    let c_in_g = s.c_in / s.groups;
    let (h, w, k, p) = (s.h, s.w, s.k, s.padding as isize);
    let mut cols = Array2::<f64>::zeros((c_in_g * k * k, h * w));
    for c in 0..c_in_g {
        let plane = &input[(group * c_in_g + c) * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dy = ky as isize - p;
                let dx = kx as isize - p;
                let mut dst = cols.row_mut(row);
                for y in 0..h as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0);
                    let x_hi = (w as isize - dx).min(w as isize);
                    for x in x_lo..x_hi {
                        dst[(y * w as isize + x) as usize] =
                            plane[(sy * w as isize + x + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds column-form gradients back to the input layout.
fn col2im(cols: &Array2<f64>, s: &ConvSpec, group: usize, out: &mut [f64]) {
    let c_in_g = s.c_in / s.groups;
    let (h, w, k, p) = (s.h, s.w, s.k, s.padding as isize);
    for c in 0..c_in_g {
        let plane = &mut out[(group * c_in_g + c) * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dy = ky as isize - p;
                let dx = kx as isize - p;
                let src = cols.row(row);
                for y in 0..h as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0);
                    let x_hi = (w as isize - dx).min(w as isize);
                    for x in x_lo..x_hi {
                        plane[(sy * w as isize + x + dx) as usize] +=
                            src[(y * w as isize + x) as usize];
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(input: &[f64], weight: &[f64], bias: &[f64], s: &ConvSpec) -> Vec<f64> {
    let (c_in_g, c_out_g) = (s.c_in / s.groups, s.c_out / s.groups);
    let hw = s.h * s.w;
    let mut out = vec![0.0; s.n * s.c_out * hw];
    for n in 0..s.n {
        let in_n = &input[n * s.c_in * hw..][..s.c_in * hw];
        for g in 0..s.groups {
            let w_g = ArrayView2::from_shape(
                (c_out_g, c_in_g * s.k * s.k),
                &weight[g * c_out_g * c_in_g * s.k * s.k..][..c_out_g * c_in_g * s.k * s.k],
            )
            .expect("weight slice");
            let prod = if s.k == 1 {
                let cols = ArrayView2::from_shape((c_in_g, hw), &in_n[g * c_in_g * hw..][..c_in_g * hw])
                    .expect("input slice");
                w_g.dot(&cols)
            } else {
                let cols = im2col(in_n, s, g);
                w_g.dot(&cols)
            };
            for co in 0..c_out_g {
                let b = bias[g * c_out_g + co];
                let dst = &mut out[(n * s.c_out + g * c_out_g + co) * hw..][..hw];
                let src = prod.row(co);
                for (d, v) in dst.iter_mut().zip(src.iter()) {
                    *d = v + b;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub d_input: Vec<f64>,
    pub d_weight: Vec<f64>,
    pub d_bias: Vec<f64>,
}

pub(crate) fn backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    s: &ConvSpec,
) -> ConvGrads {
    let (c_in_g, c_out_g) = (s.c_in / s.groups, s.c_out / s.groups);
    let hw = s.h * s.w;
    let mut d_input = vec![0.0; s.n * s.c_in * hw];
    let mut d_weight = vec![0.0; weight.len()];
    let mut d_bias = vec![0.0; s.c_out];
    for n in 0..s.n {
        let in_n = &input[n * s.c_in * hw..][..s.c_in * hw];
        for g in 0..s.groups {
            let w_len = c_out_g * c_in_g * s.k * s.k;
            let w_g = ArrayView2::from_shape(
                (c_out_g, c_in_g * s.k * s.k),
                &weight[g * w_len..][..w_len],
            )
            .expect("weight slice");
            let dy = ArrayView2::from_shape(
                (c_out_g, hw),
                &grad_out[(n * s.c_out + g * c_out_g) * hw..][..c_out_g * hw],
            )
            .expect("grad slice");
            for co in 0..c_out_g {
                d_bias[g * c_out_g + co] += dy.row(co).sum();
            }
            if s.k == 1 {
                let cols =
                    ArrayView2::from_shape((c_in_g, hw), &in_n[g * c_in_g * hw..][..c_in_g * hw])
                        .expect("input slice");
                let dw = dy.dot(&cols.t());
                for (d, v) in d_weight[g * w_len..][..w_len].iter_mut().zip(dw.iter()) {
                    *d += v;
                }
                let dcols = w_g.t().dot(&dy);
                let dst = &mut d_input[(n * s.c_in + g * c_in_g) * hw..][..c_in_g * hw];
                for (d, v) in dst.iter_mut().zip(dcols.iter()) {
                    *d += v;
                }
            } else {
                let cols = im2col(in_n, s, g);
                let dw = dy.dot(&cols.t());
                for (d, v) in d_weight[g * w_len..][..w_len].iter_mut().zip(dw.iter()) {
                    *d += v;
                }
                let dcols = w_g.t().dot(&dy);
                let dst = &mut d_input[n * s.c_in * hw..][..s.c_in * hw];
                col2im(&dcols, s, g, dst);
            }
        }
    }
    ConvGrads {
        d_input,
        d_weight,
        d_bias,
    }
}
