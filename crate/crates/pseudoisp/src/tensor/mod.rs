//! Minimal reverse-mode autodiff sized for the small fixed conv nets used
//! throughout this crate. Float64 everywhere: the nets are tiny, and it keeps
//! gradient checks honest.

mod conv;
mod optim;
mod tape;

pub use optim::{adam_step, AdamState};
pub use tape::{bayer_channel, Gradients, Tape, Val};

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense N-dimensional float array with an optional gradient buffer.
///
/// Data is held behind an `Arc` so cloning a tensor (e.g. handing weights to
/// per-sample worker tapes) is cheap; mutation goes through copy-on-write.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("positive extents")
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.numel()]),
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.numel() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} vs tensor {}",
                delta.len(),
                self.numel()
            )));
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named, deterministically ordered parameter collection.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        t.requires_grad = true;
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.all_finite())
    }

    /// Merges another set under a name prefix, e.g. `merge("srgb2raw.", w)`.
    pub fn merge(&mut self, prefix: &str, other: &ParamSet) {
        for (k, v) in other.iter() {
            self.params.insert(format!("{prefix}{k}"), v.clone());
        }
    }
}

/// Kaiming-uniform fan-in initialization for conv weights feeding ReLU.
/// Mirror index for reflection padding (period 2n-2, edge not repeated).
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = (2 * n - 2 - i).max(0);
    }
    i.clamp(0, n - 1) as usize
}

/// Reflection-pads a [N,C,H,W] tensor by `m` pixels on every spatial side.
pub fn reflect_pad(t: &Tensor, m: usize) -> Result<Tensor> {
    let [n, c, h, w] = *t.shape() else {
        return Err(Error::ShapeMismatch("reflect_pad expects [N,C,H,W]".into()));
    };
    let (oh, ow) = (h + 2 * m, w + 2 * m);
    let mut out = vec![0.0; n * c * oh * ow];
    for ci in 0..n * c {
        for y in 0..oh {
            let sy = mirror(y as isize - m as isize, h);
            for x in 0..ow {
                let sx = mirror(x as isize - m as isize, w);
                out[(ci * oh + y) * ow + x] = t.data()[(ci * h + sy) * w + sx];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Crops `m` pixels from every spatial side of a [N,C,H,W] tensor.
pub fn crop_border(t: &Tensor, m: usize) -> Result<Tensor> {
    let [n, c, h, w] = *t.shape() else {
        return Err(Error::ShapeMismatch("crop_border expects [N,C,H,W]".into()));
    };
    if h <= 2 * m || w <= 2 * m {
        return Err(Error::ShapeMismatch(format!(
            "cannot crop {m} from {h}x{w}"
        )));
    }
    let (oh, ow) = (h - 2 * m, w - 2 * m);
    let mut out = vec![0.0; n * c * oh * ow];
    for ci in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                out[(ci * oh + y) * ow + x] = t.data()[(ci * h + y + m) * w + x + m];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn kaiming_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut impl rand::Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("positive extents")
}
