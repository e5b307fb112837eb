//! Patch-based joint training of the three subnets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{register_params, LossVariant, PseudoIspModel, SigmaActivation};
use crate::error::{Error, Result};
use crate::imageio::ImageSRGB;
use crate::parallel;
use crate::tensor::{adam_step, AdamState, Tape};

/// How widely one trained model is shared across the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SharingScope {
    /// One model per fixed patch (each image contributes a single crop).
    Patch,
    /// One model per image (the default).
    #[default]
    Image,
    /// A single model for the whole set.
    Set,
}

/// A test noisy image paired with the current denoiser's output for it.
#[derive(Debug, Clone)]
pub struct PseudoPair {
    pub image_id: String,
    pub noisy: ImageSRGB,
    pub pseudo_clean: ImageSRGB,
    /// Fixed patch origin for patch-scoped sharing.
    pub patch: Option<(usize, usize)>,
}

impl PseudoPair {
    pub fn new(image_id: impl Into<String>, noisy: ImageSRGB, pseudo_clean: ImageSRGB) -> Result<Self> {
        if noisy.height() != pseudo_clean.height() || noisy.width() != pseudo_clean.width() {
            return Err(Error::ShapeMismatch(format!(
                "pair {}x{} vs {}x{}",
                noisy.height(),
                noisy.width(),
                pseudo_clean.height(),
                pseudo_clean.width()
            )));
        }
        Ok(PseudoPair {
            image_id: image_id.into(),
            noisy,
            pseudo_clean,
            patch: None,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch: usize,
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub lr1: f64,
    pub lr2: f64,
    pub lambda: f64,
    pub sharing_scope: SharingScope,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub sigma_activation: SigmaActivation,
    /// Even number of full-resolution pixels cropped from each patch side
    /// before the loss, so receptive fields never touch the zero padding.
    pub loss_margin: usize,
    /// Per-step pull of the camera nets back toward their identity-skeleton
    /// initialization (0 disables). The reconstruction loss leaves whole
    /// directions of the camera weights unconstrained (e.g. channel mixing
    /// on gray content); unchecked drift along them changes how the learned
    /// raw space propagates noise. A weak anchor keeps that propagation
    /// close to the near-element-wise behavior of the initialization.
    pub camera_anchor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 60,
            batch: 32,
            iters_stage1: 1200,
            iters_stage2: 600,
            lr1: 1e-4,
            lr2: 1e-5,
            lambda: 1.0,
            sharing_scope: SharingScope::Image,
            seed: 0,
            loss_variant: LossVariant::default(),
            sigma_activation: SigmaActivation::default(),
            loss_margin: 0,
            camera_anchor: 0.0,
        }
    }
}

impl TrainConfig {
    /// Restores the original large-scale schedule.
    pub fn paper_scale(mut self) -> Self {
        self.iters_stage1 = 8000;
        self.iters_stage2 = 4000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || self.patch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "patch_size must be even and >= 8, got {}",
                self.patch_size
            )));
        }
        if self.batch == 0 || self.iters_stage1 + self.iters_stage2 == 0 {
            return Err(Error::Config("batch and iterations must be positive".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.camera_anchor) {
            return Err(Error::Config(format!(
                "camera_anchor must be in [0, 1), got {}",
                self.camera_anchor
            )));
        }
        if self.loss_margin % 2 != 0 || (self.loss_margin > 0 && 2 * self.loss_margin >= self.patch_size) {
            return Err(Error::Config(format!(
                "loss_margin must be even and below patch_size/2, got {}",
                self.loss_margin
            )));
        }
        Ok(())
    }

    /// Reads a TOML or JSON config, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Extracts an even-aligned `size` x `size` crop, reflecting at borders when
/// the image is smaller than the patch.
pub fn crop_reflect(img: &ImageSRGB, top: usize, left: usize, size: usize) -> ImageSRGB {
    let (h, w) = (img.height(), img.width());
    let reflect = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * n - 2;
        let i = i % period;
        if i < n {
            i
        } else {
            period - i
        }
    };
    ImageSRGB::from_fn(size, size, |y, x, c| {
        img.get(reflect(top + y, h), reflect(left + x, w), c)
    })
}

fn sample_origin(rng: &mut impl Rng, extent: usize, size: usize) -> usize {
    if extent > size {
        // Even alignment keeps the Bayer phase consistent across crops.
        let max = (extent - size) / 2;
        2 * rng.gen_range(0..=max)
    } else {
        0
    }
}

/// One trained model per sharing-scope group.
#[derive(Debug)]
pub struct TrainedPseudoIsp {
    pub scope: SharingScope,
    /// (image id, model); a single entry with id "set" for set scope.
    pub models: Vec<(String, PseudoIspModel)>,
    /// Per-model raw loss history.
    pub loss_history: Vec<Vec<f64>>,
}

impl TrainedPseudoIsp {
    pub fn model_for(&self, image_id: &str) -> &PseudoIspModel {
        if self.scope == SharingScope::Set {
            return &self.models[0].1;
        }
        self.models
            .iter()
            .find(|(id, _)| id == image_id)
            .map(|(_, m)| m)
            .unwrap_or(&self.models[0].1)
    }
}

/// Trains one model on the given pairs. `seed_salt` decorrelates runs that
/// share a config (e.g. per-image models).
pub fn train_single(
    pairs: &[PseudoPair],
    config: &TrainConfig,
    seed_salt: u64,
) -> Result<(PseudoIspModel, Vec<f64>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ seed_salt.wrapping_mul(0x9e3779b97f4a7c15));
    let mut model = PseudoIspModel::init(&mut rng, config.lambda)?;
    model.sharing_scope = config.sharing_scope;
    model.loss_variant = config.loss_variant;
    model.sigma_activation = config.sigma_activation;

    let mut params = model.merged_params();
    let anchor: Option<BTreeMap<String, Vec<f64>>> = (config.camera_anchor > 0.0).then(|| {
        params
            .iter()
            .filter(|(k, _)| k.starts_with("srgb2raw.") || k.starts_with("raw2srgb."))
            .map(|(k, t)| (k.clone(), t.data().to_vec()))
            .collect()
    });
    let margin = config.loss_margin;
    let mut state = AdamState::new(config.lr1);
    let total = config.iters_stage1 + config.iters_stage2;
    let mut history = Vec::with_capacity(total);

    for iter in 0..total {
        state.learning_rate = if iter < config.iters_stage1 {
            config.lr1
        } else {
            config.lr2
        };
        // Draw the whole batch plan on the main thread for determinism.
        let plan: Vec<(usize, usize, usize)> = (0..config.batch)
            .map(|_| {
                let pi = rng.gen_range(0..pairs.len());
                let p = &pairs[pi];
                match p.patch {
                    Some((t, l)) => (pi, t & !1, l & !1),
                    None => (
                        pi,
                        sample_origin(&mut rng, p.noisy.height(), config.patch_size),
                        sample_origin(&mut rng, p.noisy.width(), config.patch_size),
                    ),
                }
            })
            .collect();

        let snapshot = params.clone();
        let model_ref = &model;
        let results = parallel::map_slice(&plan, |&(pi, top, left)| {
            let p = &pairs[pi];
            let clean = crop_reflect(&p.pseudo_clean, top, left, config.patch_size);
            let noisy = crop_reflect(&p.noisy, top, left, config.patch_size);
            sample_loss_and_grads(model_ref, &snapshot, &clean, &noisy, margin)
        });

        let mut batch_loss = 0.0;
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in results {
            let (loss, grads) = r?;
            batch_loss += loss;
            for (name, g) in grads {
                match acc.get_mut(&name) {
                    Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        batch_loss /= config.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {iter} (lr {}, batch {})",
                state.learning_rate, config.batch
            )));
        }
        history.push(batch_loss);

        let scale = 1.0 / config.batch as f64;
        for (name, t) in params.iter_mut() {
            t.zero_grad();
            if let Some(g) = acc.get(name) {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.accumulate_grad(&scaled)?;
            }
        }
        adam_step(&mut params, &mut state)?;
        if let Some(a) = &anchor {
            let k = config.camera_anchor;
            for (name, t) in params.iter_mut() {
                if let Some(init) = a.get(name) {
                    for (v, i0) in t.data_mut().iter_mut().zip(init) {
                        *v -= k * (*v - i0);
                    }
                }
            }
        }
    }
    model.apply_merged(&params);
    if !model.all_finite() {
        return Err(Error::Numerical("non-finite weights after training".into()));
    }
    Ok((model, history))
}

fn sample_loss_and_grads(
    model: &PseudoIspModel,
    params: &crate::tensor::ParamSet,
    clean: &ImageSRGB,
    noisy: &ImageSRGB,
    margin: usize,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::new();
    let leaf_vals = register_params(&mut tape, params);
    let strip = |prefix: &str| -> BTreeMap<String, crate::tensor::Val> {
        leaf_vals
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|r| (r.to_string(), *v)))
            .collect()
    };
    let s2r = strip("srgb2raw.");
    let r2s = strip("raw2srgb.");
    let nn = strip("noise.");
    let cv = tape.leaf(&clean.to_tensor());
    let nv = tape.leaf(&noisy.to_tensor());
    let loss = model.joint_loss_margin_val(&mut tape, &s2r, &r2s, &nn, cv, nv, margin, true)?;
    let loss_val = tape.value(loss)[0];
    let grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, val) in &leaf_vals {
        if let Some(g) = grads.get(*val) {
            out.insert(name.clone(), g.to_vec());
        }
    }
    Ok((loss_val, out))
}

/// Trains models according to the configured sharing scope.
pub fn train_pseudoisp(pairs: &[PseudoPair], config: &TrainConfig) -> Result<TrainedPseudoIsp> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    match config.sharing_scope {
        SharingScope::Set => {
            let (model, history) = train_single(pairs, config, 0)?;
            Ok(TrainedPseudoIsp {
                scope: SharingScope::Set,
                models: vec![("set".to_string(), model)],
                loss_history: vec![history],
            })
        }
        SharingScope::Image | SharingScope::Patch => {
            let mut models = Vec::new();
            let mut hist = Vec::new();
            for (i, pair) in pairs.iter().enumerate() {
                let mut one = pair.clone();
                if config.sharing_scope == SharingScope::Patch && one.patch.is_none() {
                    // A patch-specific model sees one fixed crop of its image.
                    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ (i as u64 + 101));
                    let t = sample_origin(&mut rng, one.noisy.height(), config.patch_size);
                    let l = sample_origin(&mut rng, one.noisy.width(), config.patch_size);
                    one.patch = Some((t, l));
                }
                let (model, history) = train_single(std::slice::from_ref(&one), config, i as u64 + 1)?;
                models.push((pair.image_id.clone(), model));
                hist.push(history);
            }
            Ok(TrainedPseudoIsp {
                scope: config.sharing_scope,
                models,
                loss_history: hist,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.patch_size = 15;
        assert!(c.validate().is_err());
        c.patch_size = 6;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.loss_margin = 3;
        assert!(c.validate().is_err());
        c.loss_margin = 8;
        c.patch_size = 16;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.lambda = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().paper_scale().iters_stage1, 8000);
    }

    #[test]
    fn empty_pairs_rejected() {
        assert!(train_pseudoisp(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn crop_reflect_tiles_small_images() {
        let img = ImageSRGB::from_fn(4, 4, |y, x, _| (y * 4 + x) as f64);
        let c = crop_reflect(&img, 0, 0, 8);
        // Reflection: row indices 0,1,2,3,2,1,0,1 -> wait, period 6: 0..5 -> 0,1,2,3,2,1 then 6->0, 7->1
        assert_eq!(c.get(0, 0, 0), 0.0);
        assert_eq!(c.get(4, 0, 0), img.get(2, 0, 0));
        assert_eq!(c.get(6, 0, 0), img.get(0, 0, 0));
        assert_eq!(c.get(0, 5, 1), img.get(0, 1, 1));
    }

    #[test]
    fn toml_and_json_configs_parse() {
        let dir = tempfile::tempdir().unwrap();
        let tml = dir.path().join("c.toml");
        std::fs::write(&tml, "patch_size = 20\nbatch = 2\nsharing_scope = \"set\"\n").unwrap();
        let c = TrainConfig::from_file(&tml).unwrap();
        assert_eq!(c.patch_size, 20);
        assert_eq!(c.sharing_scope, SharingScope::Set);
        let jsn = dir.path().join("c.json");
        std::fs::write(&jsn, "{\"patch_size\": 24, \"loss_variant\": \"squared_residual\"}").unwrap();
        let c = TrainConfig::from_file(&jsn).unwrap();
        assert_eq!(c.patch_size, 24);
        assert_eq!(c.loss_variant, crate::isp::LossVariant::SquaredResidual);
    }
}
