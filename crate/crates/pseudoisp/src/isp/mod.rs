//! The learned pseudo ISP: three subnets (sRGB-to-raw, raw-to-sRGB, noise
//! estimation) with Bayer sampling, packing, pixel-shuffle upsampling, and
//! the joint training loss.

mod train;

pub use train::{crop_reflect, train_pseudoisp, train_single, PseudoPair, SharingScope, TrainConfig, TrainedPseudoIsp};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::ImageSRGB;
use crate::tensor::{kaiming_uniform, ParamSet, Tape, Tensor, Val};

pub const WIDTH: usize = 128;

/// Reflection padding applied around full images at inference so borders
/// see the same statistics the interior-cropped training loss optimizes.
/// Even, so Bayer phase is preserved.
pub const INFER_PAD: usize = 6;
pub const SQRT_HALF_PI: f64 = 1.2533141373155003; // sqrt(pi/2)

/// Final activation of the noise-estimation subnet. Softplus keeps gradients
/// alive near zero; plain ReLU is available for strict fidelity to the
/// original formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaActivation {
    #[default]
    Softplus,
    Relu,
}

/// Which form the noise-supervision term takes: the folded-normal mean
/// identity on |residual|, or the squared-residual variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    FoldedNormal,
    SquaredResidual,
}

/// A plain stack of conv layers with ReLU between them (linear output).
#[derive(Debug, Clone)]
pub struct ConvStack {
    /// (c_in, c_out, k, groups) per layer.
    layers: Vec<(usize, usize, usize, usize)>,
    /// Softplus (smooth) vs ReLU inter-layer activation.
    smooth: bool,
}

impl ConvStack {
    pub fn new(layers: Vec<(usize, usize, usize, usize)>) -> Self {
        ConvStack { layers, smooth: false }
    }

    /// Uses softplus instead of ReLU between layers. A piecewise-linear
    /// stack has a step-function derivative; fits whose *slope* matters
    /// (e.g. the element-wise map feeding a Taylor argument) need a smooth
    /// one.
    pub fn with_smooth_activation(mut self) -> Self {
        self.smooth = true;
        self
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        let mut params = ParamSet::new();
        for (i, &(c_in, c_out, k, groups)) in self.layers.iter().enumerate() {
            let fan_in = (c_in / groups) * k * k;
            params.insert(
                format!("conv{i}.weight"),
                kaiming_uniform(vec![c_out, c_in / groups, k, k], fan_in, rng),
            );
            params.insert(format!("conv{i}.bias"), Tensor::zeros(vec![c_out]));
        }
        params
    }

    /// Forward through registered tape leaves (`vals` maps param name -> Val).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        input: Val,
    ) -> Result<Val> {
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, &(_, _, k, groups)) in self.layers.iter().enumerate() {
            let w = vals[&format!("conv{i}.weight")];
            let b = vals[&format!("conv{i}.bias")];
            x = tape.conv2d(x, w, b, groups, (k - 1) / 2)?;
            if i != last {
                x = if self.smooth { tape.softplus(x) } else { tape.relu(x) };
            }
        }
        Ok(x)
    }
}

/// Fraction the random Kaiming init is scaled down by before the identity
/// skeleton is added on top.
const INIT_NOISE_SCALE: f64 = 0.01;

/// softplus(-2.5) ~ 0.079, a typical packed-domain noise level.
const SIGMA_BIAS_INIT: f64 = -2.5;

/// Biases the freshly initialized camera nets toward a sensible starting
/// ISP: sRGB2Raw passes the image through unchanged (so the initial pack is
/// the Bayer-sampled sRGB) and Raw2sRGB performs nearest-neighbour
/// demosaicing. Signals ride on paired positive/negative channels so they
/// survive the interior ReLUs; everything else keeps a small random
/// component for symmetry breaking. Starting near an invertible pixelwise
/// ISP instead of pure noise cuts the training budget by an order of
/// magnitude and avoids collapsed latents.
fn seed_identity_skeleton(srgb2raw: &mut ParamSet, raw2srgb: &mut ParamSet) -> Result<()> {
    let shrink = |set: &mut ParamSet| {
        for (name, t) in set.iter_mut() {
            if name.ends_with(".weight") {
                for v in t.data_mut() {
                    *v *= INIT_NOISE_SCALE;
                }
            }
        }
    };
    shrink(srgb2raw);
    shrink(raw2srgb);

    // w[o][i][ky][kx] center-tap bump for a [c_out, c_in, 3, 3] kernel.
    let bump = |set: &mut ParamSet, layer: usize, o: usize, i: usize, v: f64| -> Result<()> {
        let name = format!("conv{layer}.weight");
        let t = set
            .get_mut(&name)
            .ok_or_else(|| Error::Config(format!("missing {name}")))?;
        let [_, c_in, kh, kw] = *t.shape() else {
            return Err(Error::ShapeMismatch(format!("{name} is not 4-d")));
        };
        t.data_mut()[((o * c_in + i) * kh + kh / 2) * kw + kw / 2] += v;
        Ok(())
    };

    // sRGB2Raw: identity. Channels 0..3 carry relu(x), 3..6 carry relu(-x).
    for c in 0..3 {
        bump(srgb2raw, 0, c, c, 1.0)?;
        bump(srgb2raw, 0, c + 3, c, -1.0)?;
    }
    for layer in 1..=4 {
        for c in 0..6 {
            bump(srgb2raw, layer, c, c, 1.0)?;
        }
    }
    for c in 0..3 {
        bump(srgb2raw, 5, c, c, 1.0)?;
        bump(srgb2raw, 5, c, c + 3, -1.0)?;
    }

    // Raw2sRGB: nearest-neighbour demosaic of the RGGB pack. Output channel
    // 4c+q (color c at block position q) copies its nearest pack channel;
    // the green positions average the two green samples.
    let sources: [&[(usize, f64)]; 12] = [
        &[(0, 1.0)],               // R at q0 (the R site)
        &[(0, 1.0)],               // R at q1
        &[(0, 1.0)],               // R at q2
        &[(0, 1.0)],               // R at q3
        &[(1, 0.5), (2, 0.5)],     // G at q0
        &[(1, 1.0)],               // G at q1 (its own site)
        &[(2, 1.0)],               // G at q2 (its own site)
        &[(1, 0.5), (2, 0.5)],     // G at q3
        &[(3, 1.0)],               // B at q0
        &[(3, 1.0)],               // B at q1
        &[(3, 1.0)],               // B at q2
        &[(3, 1.0)],               // B at q3
    ];
    for (j, srcs) in sources.iter().enumerate() {
        for &(pc, wgt) in *srcs {
            bump(raw2srgb, 0, j, pc, wgt)?;
            bump(raw2srgb, 0, j + 12, pc, -wgt)?;
        }
    }
    for layer in 1..=4 {
        for c in 0..24 {
            bump(raw2srgb, layer, c, c, 1.0)?;
        }
    }
    for j in 0..12 {
        bump(raw2srgb, 5, j, j, 1.0)?;
        bump(raw2srgb, 5, j, j + 12, -1.0)?;
    }
    Ok(())
}

/// Registers every parameter of a set as a tape leaf.
pub fn register_params(tape: &mut Tape, params: &ParamSet) -> BTreeMap<String, Val> {
    params
        .iter()
        .map(|(name, t)| (name.clone(), tape.leaf(t)))
        .collect()
}

fn srgb2raw_arch() -> ConvStack {
    ConvStack::new(vec![
        (3, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, 3, 3, 1),
    ])
}

fn raw2srgb_arch() -> ConvStack {
    ConvStack::new(vec![
        (4, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, WIDTH, 3, 1),
        (WIDTH, 12, 3, 1),
    ])
}

fn noise_net_arch() -> ConvStack {
    ConvStack::new(vec![
        (4, WIDTH, 1, 4),
        (WIDTH, WIDTH, 1, 4),
        (WIDTH, WIDTH, 1, 4),
        (WIDTH, WIDTH, 1, 4),
        (WIDTH, WIDTH, 1, 4),
        (WIDTH, 4, 1, 4),
    ])
}

/// Parameters of the three subnets plus the loss configuration.
#[derive(Debug, Clone)]
pub struct PseudoIspModel {
    pub srgb2raw: ParamSet,
    pub raw2srgb: ParamSet,
    pub noise_net: ParamSet,
    pub lambda: f64,
    pub sharing_scope: SharingScope,
    pub sigma_activation: SigmaActivation,
    pub loss_variant: LossVariant,
}

impl PseudoIspModel {
    pub fn init(rng: &mut impl Rng, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let mut srgb2raw = srgb2raw_arch().init(rng);
        let mut raw2srgb = raw2srgb_arch().init(rng);
        seed_identity_skeleton(&mut srgb2raw, &mut raw2srgb)?;
        let mut noise_net = noise_net_arch().init(rng);
        // Start sigma_hat near a plausible noise scale instead of
        // softplus(0) ~ 0.69: chasing the early (still meaningless) targets
        // from that far overshoots into the saturated softplus tail, where
        // recovery is extremely slow.
        if let Some(b) = noise_net.get_mut("conv5.bias") {
            for v in b.data_mut() {
                *v = SIGMA_BIAS_INIT;
            }
        }
        Ok(PseudoIspModel {
            srgb2raw,
            raw2srgb,
            noise_net,
            lambda,
            sharing_scope: SharingScope::Image,
            sigma_activation: SigmaActivation::default(),
            loss_variant: LossVariant::default(),
        })
    }

    /// All parameters under one namespace (used for Adam and checkpoints).
    pub fn merged_params(&self) -> ParamSet {
        let mut all = ParamSet::new();
        all.merge("srgb2raw.", &self.srgb2raw);
        all.merge("raw2srgb.", &self.raw2srgb);
        all.merge("noise.", &self.noise_net);
        all
    }

    /// Splits a merged parameter set back into the three subnets.
    pub fn apply_merged(&mut self, merged: &ParamSet) {
        for (name, t) in merged.iter() {
            let (prefix, rest) = name.split_once('.').unwrap_or(("", name));
            let target = match prefix {
                "srgb2raw" => &mut self.srgb2raw,
                "raw2srgb" => &mut self.raw2srgb,
                "noise" => &mut self.noise_net,
                _ => continue,
            };
            target.insert(rest.to_string(), t.clone());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.srgb2raw.all_finite() && self.raw2srgb.all_finite() && self.noise_net.all_finite()
    }

    // ---- Tape-level forward pieces (shared by training and inference) ----

    pub fn srgb_to_dem_val(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        srgb: Val,
    ) -> Result<Val> {
        let [_, _, h, w] = *tape.shape(srgb) else {
            return Err(Error::ShapeMismatch("expected [N,3,H,W]".into()));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "srgb_to_dem needs even dims, got {h}x{w}"
            )));
        }
        srgb2raw_arch().forward(tape, vals, srgb)
    }

    /// Full sRGB -> packed pseudo-raw chain.
    pub fn srgb_to_pack_val(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        srgb: Val,
    ) -> Result<Val> {
        let dem = self.srgb_to_dem_val(tape, vals, srgb)?;
        let raw = tape.bayer_sample(dem)?;
        tape.space_to_depth(raw)
    }

    /// Packed pseudo-raw -> sRGB via 12-channel conv and pixel shuffle.
    pub fn raw_to_srgb_val(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        packed: Val,
    ) -> Result<Val> {
        if tape.shape(packed)[1] != 4 {
            return Err(Error::ShapeMismatch(format!(
                "packed input must have 4 channels, got {}",
                tape.shape(packed)[1]
            )));
        }
        let out12 = raw2srgb_arch().forward(tape, vals, packed)?;
        tape.depth_to_space(out12)
    }

    /// sRGB -> packed pseudo-raw with reflection padding: the input is
    /// padded by an even amount (preserving Bayer phase) so borders behave
    /// like interiors, and the pack is cropped back to the true size.
    /// Training and image-level inference both use this exact chain.
    pub fn srgb_to_pack_padded_val(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        srgb: Val,
    ) -> Result<Val> {
        let padded = tape.reflect_pad(srgb, INFER_PAD)?;
        let pack = self.srgb_to_pack_val(tape, vals, padded)?;
        let [_, _, ph, pw] = *tape.shape(pack) else {
            return Err(Error::ShapeMismatch("expected packed [N,4,H,W]".into()));
        };
        let m = INFER_PAD / 2;
        tape.crop(pack, m, m, ph - 2 * m, pw - 2 * m)
    }

    /// Packed pseudo-raw -> sRGB with reflection padding, mirroring
    /// `srgb_to_pack_padded_val` on the way back.
    pub fn raw_to_srgb_padded_val(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        packed: Val,
    ) -> Result<Val> {
        let padded = tape.reflect_pad(packed, INFER_PAD / 2)?;
        let srgb = self.raw_to_srgb_val(tape, vals, padded)?;
        let [_, _, h, w] = *tape.shape(srgb) else {
            return Err(Error::ShapeMismatch("expected [N,3,H,W]".into()));
        };
        tape.crop(srgb, INFER_PAD, INFER_PAD, h - 2 * INFER_PAD, w - 2 * INFER_PAD)
    }

    /// Noise std estimate from the packed clean stream; nonnegative by
    /// construction.
    pub fn sigma_val(
        &self,
        tape: &mut Tape,
        vals: &BTreeMap<String, Val>,
        packed: Val,
    ) -> Result<Val> {
        let raw = noise_net_arch().forward(tape, vals, packed)?;
        Ok(match self.sigma_activation {
            SigmaActivation::Softplus => tape.softplus(raw),
            SigmaActivation::Relu => tape.relu(raw),
        })
    }

    /// The joint loss over one noisy/pseudo-clean pair:
    /// both round-trip reconstruction terms plus the noise-supervision term.
    pub fn joint_loss_val(
        &self,
        tape: &mut Tape,
        s2r_vals: &BTreeMap<String, Val>,
        r2s_vals: &BTreeMap<String, Val>,
        noise_vals: &BTreeMap<String, Val>,
        pseudo_clean: Val,
        noisy: Val,
    ) -> Result<Val> {
        self.joint_loss_margin_val(tape, s2r_vals, r2s_vals, noise_vals, pseudo_clean, noisy, 0, false)
    }

    /// Joint loss with every term cropped to the patch interior: `margin`
    /// full-resolution pixels (even) are dropped from each side, so pixels
    /// whose receptive field touches the zero padding never contribute.
    /// Without this, small-patch training learns padding-dependent maps
    /// that do not transfer to full images.
    ///
    /// With `detach_noise_target` the noise term sees the packed streams as
    /// constants, so it only trains the noise net. Otherwise gradients also
    /// flow into the camera nets, which rewards shrinking the packed
    /// residual and collapses the learned raw space during training.
    #[allow(clippy::too_many_arguments)]
    pub fn joint_loss_margin_val(
        &self,
        tape: &mut Tape,
        s2r_vals: &BTreeMap<String, Val>,
        r2s_vals: &BTreeMap<String, Val>,
        noise_vals: &BTreeMap<String, Val>,
        pseudo_clean: Val,
        noisy: Val,
        margin: usize,
        detach_noise_target: bool,
    ) -> Result<Val> {
        if tape.shape(pseudo_clean) != tape.shape(noisy) {
            return Err(Error::ShapeMismatch(format!(
                "pair shapes differ: {:?} vs {:?}",
                tape.shape(pseudo_clean),
                tape.shape(noisy)
            )));
        }
        if margin % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "loss margin must be even, got {margin}"
            )));
        }
        let [_, _, h, w] = *tape.shape(pseudo_clean) else {
            return Err(Error::ShapeMismatch("expected [N,3,H,W]".into()));
        };
        if h <= 2 * margin || w <= 2 * margin {
            return Err(Error::InvalidArgument(format!(
                "loss margin {margin} leaves no interior on {h}x{w}"
            )));
        }
        let inner = |tape: &mut Tape, v: Val, m: usize| -> Result<Val> {
            if m == 0 {
                return Ok(v);
            }
            let [_, _, vh, vw] = *tape.shape(v) else {
                return Err(Error::ShapeMismatch("expected 4-d value".into()));
            };
            tape.crop(v, m, m, vh - 2 * m, vw - 2 * m)
        };
        let x_pack = self.srgb_to_pack_padded_val(tape, s2r_vals, pseudo_clean)?;
        let y_pack = self.srgb_to_pack_padded_val(tape, s2r_vals, noisy)?;
        let x_rec = self.raw_to_srgb_padded_val(tape, r2s_vals, x_pack)?;
        let y_rec = self.raw_to_srgb_padded_val(tape, r2s_vals, y_pack)?;
        let x_rec_in = inner(tape, x_rec, margin)?;
        let y_rec_in = inner(tape, y_rec, margin)?;
        let clean_in = inner(tape, pseudo_clean, margin)?;
        let noisy_in = inner(tape, noisy, margin)?;
        let rec_x = tape.mse(x_rec_in, clean_in)?;
        let rec_y = tape.mse(y_rec_in, noisy_in)?;
        let variant_term =
            |tape: &mut Tape, sigma: Val, x_in: Val, y_in: Val, variant| -> Result<Val> {
                match variant {
                    LossVariant::FoldedNormal => {
                        let resid = tape.sub(y_in, x_in)?;
                        let absres = tape.abs(resid);
                        let target = tape.scale(absres, SQRT_HALF_PI);
                        tape.mse(sigma, target)
                    }
                    LossVariant::SquaredResidual => {
                        let sigma_sq = tape.mul(sigma, sigma)?;
                        let resid = tape.sub(y_in, x_in)?;
                        let resid_sq = tape.mul(resid, resid)?;
                        tape.mse(sigma_sq, resid_sq)
                    }
                }
            };
        let noise_term = if detach_noise_target {
            // The noise net regresses onto the residual statistic treated as
            // a constant target; the camera nets receive no gradient from
            // this term (a coupled term rewards shrinking the residual and
            // collapses the learned raw space).
            let xc = tape.to_tensor(x_pack).set_requires_grad(false);
            let yc = tape.to_tensor(y_pack).set_requires_grad(false);
            let x_d = tape.leaf(&xc);
            let y_d = tape.leaf(&yc);
            let x_in_d = inner(tape, x_d, margin / 2)?;
            let y_in_d = inner(tape, y_d, margin / 2)?;
            let sigma_full = self.sigma_val(tape, noise_vals, x_d)?;
            let sigma = inner(tape, sigma_full, margin / 2)?;
            variant_term(tape, sigma, x_in_d, y_in_d, self.loss_variant)?
        } else {
            let x_in = inner(tape, x_pack, margin / 2)?;
            let y_in = inner(tape, y_pack, margin / 2)?;
            let sigma_full = self.sigma_val(tape, noise_vals, x_pack)?;
            let sigma = inner(tape, sigma_full, margin / 2)?;
            variant_term(tape, sigma, x_in, y_in, self.loss_variant)?
        };
        let rec = tape.add(rec_x, rec_y)?;
        let weighted = tape.scale(noise_term, self.lambda);
        tape.add(rec, weighted)
    }

    // ---- Inference helpers over images (no gradients) ----

    /// sRGB image -> full-resolution 3-channel pseudo-demosaiced tensor.
    pub fn srgb_to_dem(&self, image: &ImageSRGB) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vals = register_inference(&mut tape, &self.srgb2raw);
        let input = tape.leaf(&image.to_tensor());
        let padded = tape.reflect_pad(input, INFER_PAD)?;
        let out = self.srgb_to_dem_val(&mut tape, &vals, padded)?;
        crate::tensor::crop_border(&tape.to_tensor(out), INFER_PAD)
    }

    /// sRGB image -> packed pseudo-raw [1,4,H/2,W/2].
    pub fn srgb_to_pack(&self, image: &ImageSRGB) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vals = register_inference(&mut tape, &self.srgb2raw);
        let input = tape.leaf(&image.to_tensor());
        let out = self.srgb_to_pack_padded_val(&mut tape, &vals, input)?;
        Ok(tape.to_tensor(out))
    }

    /// Packed pseudo-raw -> sRGB image (not clipped).
    pub fn pack_to_srgb(&self, packed: &Tensor) -> Result<ImageSRGB> {
        let mut tape = Tape::new();
        let vals = register_inference(&mut tape, &self.raw2srgb);
        let input = tape.leaf(packed);
        let out = self.raw_to_srgb_padded_val(&mut tape, &vals, input)?;
        ImageSRGB::from_tensor(&tape.to_tensor(out))
    }

    /// Noise std estimate for a packed clean tensor.
    pub fn estimate_sigma(&self, packed: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vals = register_inference(&mut tape, &self.noise_net);
        let input = tape.leaf(packed);
        let out = self.sigma_val(&mut tape, &vals, input)?;
        Ok(tape.to_tensor(out))
    }

    pub fn save(&self, path: &std::path::Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra_meta.clone();
        meta.insert("lambda".into(), self.lambda.to_string());
        meta.insert(
            "sharing_scope".into(),
            serde_json::to_string(&self.sharing_scope).unwrap(),
        );
        meta.insert(
            "sigma_activation".into(),
            serde_json::to_string(&self.sigma_activation).unwrap(),
        );
        meta.insert(
            "loss_variant".into(),
            serde_json::to_string(&self.loss_variant).unwrap(),
        );
        crate::checkpoint::save(path, &self.merged_params(), &meta)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (merged, meta) = crate::checkpoint::load(path)?;
        let lambda = meta
            .get("lambda")
            .and_then(|v| v.parse().ok())
            .unwrap_or(1.0);
        let mut model = PseudoIspModel {
            srgb2raw: ParamSet::new(),
            raw2srgb: ParamSet::new(),
            noise_net: ParamSet::new(),
            lambda,
            sharing_scope: meta
                .get("sharing_scope")
                .and_then(|v| serde_json::from_str(v).ok())
                .unwrap_or(SharingScope::Image),
            sigma_activation: meta
                .get("sigma_activation")
                .and_then(|v| serde_json::from_str(v).ok())
                .unwrap_or_default(),
            loss_variant: meta
                .get("loss_variant")
                .and_then(|v| serde_json::from_str(v).ok())
                .unwrap_or_default(),
        };
        model.apply_merged(&merged);
        let expect = |p: &ParamSet, n: usize, what: &str| -> Result<()> {
            if p.len() != 2 * n {
                return Err(Error::Checkpoint(format!(
                    "{what}: expected {} arrays, found {}",
                    2 * n,
                    p.len()
                )));
            }
            Ok(())
        };
        expect(&model.srgb2raw, 6, "srgb2raw")?;
        expect(&model.raw2srgb, 6, "raw2srgb")?;
        expect(&model.noise_net, 6, "noise_net")?;
        Ok(model)
    }
}

/// Registers params as non-differentiable constants for inference tapes.
fn register_inference(tape: &mut Tape, params: &ParamSet) -> BTreeMap<String, Val> {
    params
        .iter()
        .map(|(name, t)| {
            let frozen = t.clone().set_requires_grad(false);
            (name.clone(), tape.leaf(&frozen))
        })
        .collect()
}
