//! Tape-based dynamic graph. Each forward op appends a node; `backward`
//! sweeps the tape in reverse. Tapes are cheap, single-owner values meant to
//! be built per forward pass and dropped after the gradients are harvested.

use std::sync::Arc;

use super::conv::{self, ConvSpec};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Val, Val),
    Sub(Val, Val),
    Mul(Val, Val),
    Abs(Val),
    Sqrt(Val),
    Scale(Val, f64),
    Relu(Val),
    Softplus(Val),
    Mse(Val, Val),
    Conv2d {
        input: Val,
        weight: Val,
        bias: Val,
        groups: usize,
        padding: usize,
    },
    ConcatCh(Vec<Val>),
    Crop {
        input: Val,
        top: usize,
        left: usize,
        out_h: usize,
        out_w: usize,
    },
    ReflectPad {
        input: Val,
        margin: usize,
    },
    BayerSample(Val),
    SpaceToDepth(Val),
    DepthToSpace(Val),
}

struct Node {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-value gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Val) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn nchw(shape: &[usize], op: &str) -> Result<(usize, usize, usize, usize)> {
    let [n, c, h, w] = *shape else {
        return Err(Error::ShapeMismatch(format!(
            "{op} expects [N,C,H,W], got {shape:?}"
        )));
    };
    Ok((n, c, h, w))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Val {
        self.nodes.push(Node {
            shape,
            data: Arc::new(data),
            op,
            needs_grad,
        });
        Val(self.nodes.len() - 1)
    }

    fn needs(&self, v: Val) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers an external tensor. Its `requires_grad` flag decides whether
    /// the backward sweep propagates to it.
    pub fn leaf(&mut self, t: &Tensor) -> Val {
        let needs = t.requires_grad();
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            data: t.data_arc(),
            op: Op::Leaf,
            needs_grad: needs,
        });
        Val(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Val> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "constant shape {shape:?} vs {} values",
                data.len()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn shape(&self, v: Val) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Val) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Val) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.to_vec())
            .expect("node shape is consistent")
    }

    fn binary_elementwise(
        &mut self,
        a: Val,
        b: Val,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> Result<Val> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, op, needs))
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Result<Val> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn unary(&mut self, a: Val, f: impl Fn(f64) -> f64, op: Op) -> Val {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let needs = self.needs(a);
        self.push(self.nodes[a.0].shape.clone(), data, op, needs)
    }

    pub fn abs(&mut self, a: Val) -> Val {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Elementwise square root; negative inputs are an error state surfaced
    /// as NaN and caught by the caller's finiteness check.
    pub fn sqrt(&mut self, a: Val) -> Val {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn scale(&mut self, a: Val, s: f64) -> Val {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Val) -> Val {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Val) -> Val {
        self.unary(
            a,
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Op::Softplus(a),
        )
    }

    /// Mean squared error, reduced to a scalar.
    pub fn mse(&mut self, a: Val, b: Val) -> Result<Val> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch(format!(
                "mse: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let sum: f64 = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let mean = sum / self.nodes[a.0].data.len() as f64;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![1], vec![mean], Op::Mse(a, b), needs))
    }

    /// Grouped cross-correlation, stride 1, zero padding (k-1)/2.
    pub fn conv2d(
        &mut self,
        input: Val,
        weight: Val,
        bias: Val,
        groups: usize,
        padding: usize,
    ) -> Result<Val> {
        let spec = ConvSpec::check(
            &self.nodes[input.0].shape,
            &self.nodes[weight.0].shape,
            &self.nodes[bias.0].shape,
            groups,
            padding,
        )?;
        let out = conv::forward(
            &self.nodes[input.0].data,
            &self.nodes[weight.0].data,
            &self.nodes[bias.0].data,
            &spec,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            vec![spec.n, spec.c_out, spec.h, spec.w],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                groups,
                padding,
            },
            needs,
        ))
    }

    /// Concatenates [N,C,H,W] tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Val]) -> Result<Val> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (n, _, h, w) = nchw(&self.nodes[parts[0].0].shape, "concat_channels")?;
        let mut c_total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = nchw(&self.nodes[p.0].shape, "concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::ShapeMismatch(
                    "concat_channels: mismatched N/H/W".into(),
                ));
            }
            c_total += pc;
        }
        let hw = h * w;
        let mut data = vec![0.0; n * c_total * hw];
        for ni in 0..n {
            let mut c_off = 0;
            for &p in parts {
                let pc = self.nodes[p.0].shape[1];
                let src = &self.nodes[p.0].data[ni * pc * hw..][..pc * hw];
                data[(ni * c_total + c_off) * hw..][..pc * hw].copy_from_slice(src);
                c_off += pc;
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            vec![n, c_total, h, w],
            data,
            Op::ConcatCh(parts.to_vec()),
            needs,
        ))
    }

    /// Spatial crop of an [N,C,H,W] tensor.
    /// Reflection-pads the two spatial dims by `margin` on every side.
    pub fn reflect_pad(&mut self, input: Val, margin: usize) -> Result<Val> {
        let (n, c, h, w) = nchw(&self.nodes[input.0].shape, "reflect_pad")?;
        if margin >= h || margin >= w {
            return Err(Error::InvalidArgument(format!(
                "reflect_pad margin {margin} too large for {h}x{w}"
            )));
        }
        let (oh, ow) = (h + 2 * margin, w + 2 * margin);
        let mut data = vec![0.0; n * c * oh * ow];
        let src = &self.nodes[input.0].data;
        for ci in 0..n * c {
            for y in 0..oh {
                let sy = crate::tensor::mirror(y as isize - margin as isize, h);
                for x in 0..ow {
                    let sx = crate::tensor::mirror(x as isize - margin as isize, w);
                    data[(ci * oh + y) * ow + x] = src[(ci * h + sy) * w + sx];
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            vec![n, c, oh, ow],
            data,
            Op::ReflectPad { input, margin },
            needs,
        ))
    }

    pub fn crop(&mut self, input: Val, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Val> {
        let (n, c, h, w) = nchw(&self.nodes[input.0].shape, "crop")?;
        if top + out_h > h || left + out_w > w || out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {top}+{out_h} x {left}+{out_w} out of {h}x{w}"
            )));
        }
        let mut data = vec![0.0; n * c * out_h * out_w];
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..out_h {
                    let src = &self.nodes[input.0].data
                        [((ni * c + ci) * h + top + y) * w + left..][..out_w];
                    data[((ni * c + ci) * out_h + y) * out_w..][..out_w].copy_from_slice(src);
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            vec![n, c, out_h, out_w],
            data,
            Op::Crop {
                input,
                top,
                left,
                out_h,
                out_w,
            },
            needs,
        ))
    }

    /// RGGB mosaic: [N,3,H,W] -> [N,1,H,W], selecting R at even/even,
    /// G at even/odd and odd/even, B at odd/odd sites.
    pub fn bayer_sample(&mut self, input: Val) -> Result<Val> {
        let (n, c, h, w) = nchw(&self.nodes[input.0].shape, "bayer_sample")?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "bayer_sample expects 3 channels, got {c}"
            )));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "bayer_sample needs even dims, got {h}x{w}"
            )));
        }
        let hw = h * w;
        let mut data = vec![0.0; n * hw];
        let src = &self.nodes[input.0].data;
        for ni in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let ch = bayer_channel(y, x);
                    data[ni * hw + y * w + x] = src[(ni * 3 + ch) * hw + y * w + x];
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(vec![n, 1, h, w], data, Op::BayerSample(input), needs))
    }

    /// [N,C,H,W] -> [N,4C,H/2,W/2]; output channel 4c+2r+q holds input
    /// channel c at the (r,q) corner of each 2x2 block. For a 1-channel
    /// RGGB mosaic this yields the [R,G1,G2,B] packing.
    pub fn space_to_depth(&mut self, input: Val) -> Result<Val> {
        let (n, c, h, w) = nchw(&self.nodes[input.0].shape, "space_to_depth")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "space_to_depth needs even dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut data = vec![0.0; n * 4 * c * oh * ow];
        let src = &self.nodes[input.0].data;
        for ni in 0..n {
            for ci in 0..c {
                for r in 0..2 {
                    for q in 0..2 {
                        let oc = 4 * ci + 2 * r + q;
                        for y in 0..oh {
                            for x in 0..ow {
                                data[((ni * 4 * c + oc) * oh + y) * ow + x] =
                                    src[((ni * c + ci) * h + 2 * y + r) * w + 2 * x + q];
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            vec![n, 4 * c, oh, ow],
            data,
            Op::SpaceToDepth(input),
            needs,
        ))
    }

    /// Pixel-shuffle upsampling by 2: exact inverse of `space_to_depth`.
    pub fn depth_to_space(&mut self, input: Val) -> Result<Val> {
        let (n, c4, h, w) = nchw(&self.nodes[input.0].shape, "depth_to_space")?;
        if c4 % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "depth_to_space needs channels divisible by 4, got {c4}"
            )));
        }
        let c = c4 / 4;
        let (oh, ow) = (2 * h, 2 * w);
        let mut data = vec![0.0; n * c * oh * ow];
        let src = &self.nodes[input.0].data;
        for ni in 0..n {
            for ci in 0..c {
                for r in 0..2 {
                    for q in 0..2 {
                        let ic = 4 * ci + 2 * r + q;
                        for y in 0..h {
                            for x in 0..w {
                                data[((ni * c + ci) * oh + 2 * y + r) * ow + 2 * x + q] =
                                    src[((ni * c4 + ic) * h + y) * w + x];
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(vec![n, c, oh, ow], data, Op::DepthToSpace(input), needs))
    }

    /// Reverse sweep from a scalar loss. Returns per-value gradients; leaves
    /// registered from tensors with `requires_grad` carry theirs in the result.
    pub fn backward(&self, loss: Val) -> Result<Gradients> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].needs_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Val, delta: Vec<f64>) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi += di;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[b.0].data.iter())
                    .map(|(&gi, &bi)| gi * bi)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[a.0].data.iter())
                    .map(|(&gi, &ai)| gi * ai)
                    .collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Abs(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[a.0].data.iter())
                    .map(|(&gi, &x)| gi * x.signum() * (x != 0.0) as u8 as f64)
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Sqrt(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(node.data.iter())
                    .map(|(&gi, &y)| if y > 0.0 { gi * 0.5 / y } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, g.iter().map(|v| v * s).collect());
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[a.0].data.iter())
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Softplus(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[a.0].data.iter())
                    .map(|(&gi, &x)| gi / (1.0 + (-x).exp()))
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Mse(a, b) => {
                let n = self.nodes[a.0].data.len() as f64;
                let s = 2.0 * g[0] / n;
                let da: Vec<f64> = self.nodes[a.0]
                    .data
                    .iter()
                    .zip(self.nodes[b.0].data.iter())
                    .map(|(&x, &y)| s * (x - y))
                    .collect();
                let db: Vec<f64> = da.iter().map(|v| -v).collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                groups,
                padding,
            } => {
                let spec = ConvSpec::check(
                    &self.nodes[input.0].shape,
                    &self.nodes[weight.0].shape,
                    &self.nodes[bias.0].shape,
                    *groups,
                    *padding,
                )
                .expect("validated at forward time");
                let cg = conv::backward(
                    &self.nodes[input.0].data,
                    &self.nodes[weight.0].data,
                    g,
                    &spec,
                );
                self.accumulate(grads, *input, cg.d_input);
                self.accumulate(grads, *weight, cg.d_weight);
                self.accumulate(grads, *bias, cg.d_bias);
            }
            Op::ConcatCh(parts) => {
                let [n, _, h, w] = node.shape[..] else { unreachable!() };
                let hw = h * w;
                let c_total = node.shape[1];
                let mut c_off = 0;
                for &p in parts {
                    let pc = self.nodes[p.0].shape[1];
                    let mut dp = vec![0.0; n * pc * hw];
                    for ni in 0..n {
                        dp[ni * pc * hw..][..pc * hw]
                            .copy_from_slice(&g[(ni * c_total + c_off) * hw..][..pc * hw]);
                    }
                    self.accumulate(grads, p, dp);
                    c_off += pc;
                }
            }
            Op::Crop {
                input,
                top,
                left,
                out_h,
                out_w,
            } => {
                let [n, c, h, w] = self.nodes[input.0].shape[..] else {
                    unreachable!()
                };
                let mut di = vec![0.0; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..*out_h {
                            let dst =
                                &mut di[((ni * c + ci) * h + top + y) * w + left..][..*out_w];
                            dst.copy_from_slice(
                                &g[((ni * c + ci) * out_h + y) * out_w..][..*out_w],
                            );
                        }
                    }
                }
                self.accumulate(grads, *input, di);
            }
            Op::ReflectPad { input, margin } => {
                let [n, c, h, w] = self.nodes[input.0].shape[..] else {
                    unreachable!()
                };
                let m = *margin;
                let (oh, ow) = (h + 2 * m, w + 2 * m);
                let mut di = vec![0.0; n * c * h * w];
                for ci in 0..n * c {
                    for y in 0..oh {
                        let sy = crate::tensor::mirror(y as isize - m as isize, h);
                        for x in 0..ow {
                            let sx = crate::tensor::mirror(x as isize - m as isize, w);
                            di[(ci * h + sy) * w + sx] += g[(ci * oh + y) * ow + x];
                        }
                    }
                }
                self.accumulate(grads, *input, di);
            }
            Op::BayerSample(input) => {
                let [n, _, h, w] = self.nodes[input.0].shape[..] else {
                    unreachable!()
                };
                let hw = h * w;
                let mut di = vec![0.0; n * 3 * hw];
                for ni in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let ch = bayer_channel(y, x);
                            di[(ni * 3 + ch) * hw + y * w + x] = g[ni * hw + y * w + x];
                        }
                    }
                }
                self.accumulate(grads, *input, di);
            }
            Op::SpaceToDepth(input) => {
                let [n, c, h, w] = self.nodes[input.0].shape[..] else {
                    unreachable!()
                };
                let (oh, ow) = (h / 2, w / 2);
                let mut di = vec![0.0; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        for r in 0..2 {
                            for q in 0..2 {
                                let oc = 4 * ci + 2 * r + q;
                                for y in 0..oh {
                                    for x in 0..ow {
                                        di[((ni * c + ci) * h + 2 * y + r) * w + 2 * x + q] =
                                            g[((ni * 4 * c + oc) * oh + y) * ow + x];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, di);
            }
            Op::DepthToSpace(input) => {
                let [n, c4, h, w] = self.nodes[input.0].shape[..] else {
                    unreachable!()
                };
                let c = c4 / 4;
                let (oh, ow) = (2 * h, 2 * w);
                let mut di = vec![0.0; n * c4 * h * w];
                for ni in 0..n {
                    for ci in 0..c {
                        for r in 0..2 {
                            for q in 0..2 {
                                let ic = 4 * ci + 2 * r + q;
                                for y in 0..h {
                                    for x in 0..w {
                                        di[((ni * c4 + ic) * h + y) * w + x] =
                                            g[((ni * c + ci) * oh + 2 * y + r) * ow + 2 * x + q];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, di);
            }
        }
    }
}

/// RGGB site -> channel index (R=0, G=1, B=2).
pub fn bayer_channel(y: usize, x: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}
