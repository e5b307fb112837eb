//! Self-supervised adaption loop: alternate between (1) pseudo-clean
//! generation with the current denoiser, (2) pseudo-ISP training on the
//! pseudo pairs, (3) noisy synthesis from held clean images through the
//! trained model, and (4) denoiser fine-tuning on a stratified mix of
//! synthetic and pseudo pairs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::ImageSRGB;
use crate::isp::{crop_reflect, train_pseudoisp, PseudoPair, TrainConfig};
use crate::isp::{register_params, ConvStack};
use crate::metrics::{self, MetricsRecord};
use crate::parallel;
use crate::synthesis::{synthesize_noisy, SyntheticPair};
use crate::tensor::{adam_step, AdamState, ParamSet, Tape};

const BLUR_RADIUS: usize = 2;

/// Receptive-field radius of the compact CNN (seven 3x3 layers). Training
/// crops this margin out of the loss; inference reflection-pads by it.
const CNN_MARGIN: usize = 7;

fn gaussian_kernel() -> [f64; 2 * BLUR_RADIUS + 1] {
    let sigma = 1.0;
    let mut k = [0.0; 2 * BLUR_RADIUS + 1];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - BLUR_RADIUS as f64;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn compact_cnn_arch() -> ConvStack {
    ConvStack::new(vec![
        (3, 64, 3, 1),
        (64, 64, 3, 1),
        (64, 64, 3, 1),
        (64, 64, 3, 1),
        (64, 64, 3, 1),
        (64, 64, 3, 1),
        (64, 3, 3, 1),
    ])
}

/// Image denoiser: either the fixed Gaussian-blur baseline or a compact
/// residual CNN (prediction is the noise, subtracted from the input).
#[derive(Debug, Clone)]
pub enum Denoiser {
    GaussianBlur,
    CompactCnn { params: ParamSet },
}

impl Denoiser {
    /// Fresh residual CNN. The final layer starts at zero so the untrained
    /// network is the identity.
    pub fn compact_cnn(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = compact_cnn_arch().init(&mut rng);
        for name in ["conv6.weight", "conv6.bias"] {
            let t = params.get_mut(name).expect("final layer present");
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        Denoiser::CompactCnn { params }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Denoiser::GaussianBlur => "gaussian_blur",
            Denoiser::CompactCnn { .. } => "compact_cnn",
        }
    }

    pub fn denoise(&self, image: &ImageSRGB) -> Result<ImageSRGB> {
        match self {
            Denoiser::GaussianBlur => Ok(gaussian_blur(image)),
            Denoiser::CompactCnn { params } => {
                let mut tape = Tape::new();
                let frozen: BTreeMap<String, crate::tensor::Val> = params
                    .iter()
                    .map(|(k, t)| {
                        let c = t.clone().set_requires_grad(false);
                        (k.clone(), tape.leaf(&c))
                    })
                    .collect();
                // Reflection-pad so image borders look like interiors,
                // matching the interior-cropped training loss.
                let padded = crate::tensor::reflect_pad(&image.to_tensor(), CNN_MARGIN)?;
                let iv = tape.leaf(&padded);
                let resid = compact_cnn_arch().forward(&mut tape, &frozen, iv)?;
                let out = tape.sub(iv, resid)?;
                let cropped = crate::tensor::crop_border(&tape.to_tensor(out), CNN_MARGIN)?;
                Ok(ImageSRGB::from_tensor(&cropped)?.clip())
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), self.kind().to_string());
        let params = match self {
            Denoiser::GaussianBlur => ParamSet::new(),
            Denoiser::CompactCnn { params } => params.clone(),
        };
        crate::checkpoint::save(path, &params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = crate::checkpoint::load(path)?;
        match meta.get("kind").map(String::as_str) {
            Some("gaussian_blur") => Ok(Denoiser::GaussianBlur),
            Some("compact_cnn") => Ok(Denoiser::CompactCnn { params }),
            other => Err(Error::Checkpoint(format!(
                "unknown denoiser kind {other:?} in {}",
                path.display()
            ))),
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Separable 5-tap Gaussian blur with reflected borders.
pub fn gaussian_blur(image: &ImageSRGB) -> ImageSRGB {
    let k = gaussian_kernel();
    let (h, w) = (image.height(), image.width());
    let mut horiz = ImageSRGB::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xs = reflect(x as isize + i as isize - BLUR_RADIUS as isize, w);
                    s += kv * image.get(y, xs, c);
                }
                horiz.set(y, x, c, s);
            }
        }
    }
    ImageSRGB::from_fn(h, w, |y, x, c| {
        let mut s = 0.0;
        for (i, kv) in k.iter().enumerate() {
            let ys = reflect(y as isize + i as isize - BLUR_RADIUS as isize, h);
            s += kv * horiz.get(ys, x, c);
        }
        s
    })
}

/// Runs the current denoiser over the noisy set to produce pseudo pairs.
pub fn build_pseudo_pairs(
    denoiser: &Denoiser,
    noisy_set: &[(String, ImageSRGB)],
) -> Result<Vec<PseudoPair>> {
    let cleaned = parallel::map_slice(noisy_set, |(_, img)| denoiser.denoise(img));
    noisy_set
        .iter()
        .zip(cleaned)
        .map(|((id, noisy), pc)| PseudoPair::new(id.clone(), noisy.clone(), pc?))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub patch: usize,
    pub learning_rate: f64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            iters: 400,
            batch: 8,
            patch: 32,
            learning_rate: 1e-3,
        }
    }
}

struct TrainSample {
    noisy: ImageSRGB,
    target: ImageSRGB,
}

fn denoiser_sample_grads(
    params: &ParamSet,
    sample: &TrainSample,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::new();
    let vals = register_params(&mut tape, params);
    let iv = tape.leaf(&sample.noisy.to_tensor());
    let tv = tape.leaf(&sample.target.to_tensor());
    // Same padded chain as Denoiser::denoise so the trained function and
    // the inference function agree everywhere, borders included.
    let padded = tape.reflect_pad(iv, CNN_MARGIN)?;
    let resid = compact_cnn_arch().forward(&mut tape, &vals, padded)?;
    let out_pad = tape.sub(padded, resid)?;
    let [_, _, ph, pw] = *tape.shape(out_pad) else {
        return Err(Error::ShapeMismatch("expected [1,3,H,W]".into()));
    };
    let out = tape.crop(
        out_pad,
        CNN_MARGIN,
        CNN_MARGIN,
        ph - 2 * CNN_MARGIN,
        pw - 2 * CNN_MARGIN,
    )?;
    let loss = tape.mse(out, tv)?;
    let loss_val = tape.value(loss)[0];
    let grads = tape.backward(loss)?;
    let mut collected = BTreeMap::new();
    for (name, val) in &vals {
        if let Some(g) = grads.get(*val) {
            collected.insert(name.clone(), g.to_vec());
        }
    }
    Ok((loss_val, collected))
}

/// Fine-tunes (or trains from scratch, when starting from the blur
/// baseline) a compact CNN on a stratified mix of synthetic and pseudo
/// pairs. Each batch holds exactly round(ratio * batch) synthetic samples.
pub fn finetune_denoiser(
    initial: &Denoiser,
    pseudo: &[PseudoPair],
    synthetic: &[SyntheticPair],
    ratio: f64,
    config: &DenoiserTrainConfig,
    seed: u64,
) -> Result<Denoiser> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "synthetic ratio {ratio} outside [0,1]"
        )));
    }
    let n_syn = (ratio * config.batch as f64).round() as usize;
    let n_pseudo = config.batch - n_syn;
    if n_syn > 0 && synthetic.is_empty() {
        return Err(Error::InvalidArgument(
            "ratio > 0 but no synthetic pairs".into(),
        ));
    }
    if n_pseudo > 0 && pseudo.is_empty() {
        return Err(Error::InvalidArgument(
            "ratio < 1 but no pseudo pairs".into(),
        ));
    }
    let mut params = match initial {
        Denoiser::CompactCnn { params } => params.clone(),
        Denoiser::GaussianBlur => match Denoiser::compact_cnn(seed ^ 0xd6e8feb8) {
            Denoiser::CompactCnn { params } => params,
            Denoiser::GaussianBlur => unreachable!(),
        },
    };
    let mut state = AdamState::new(config.learning_rate);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p = config.patch;
    for iter in 0..config.iters {
        // Draw the whole batch plan on the main thread so the result does
        // not depend on the parallel schedule.
        let mut samples = Vec::with_capacity(config.batch);
        for _ in 0..n_syn {
            let sp = &synthetic[rng.gen_range(0..synthetic.len())];
            let top = rng.gen_range(0..sp.noisy.height().saturating_sub(p).max(1));
            let left = rng.gen_range(0..sp.noisy.width().saturating_sub(p).max(1));
            samples.push(TrainSample {
                noisy: crop_reflect(&sp.noisy, top, left, p),
                target: crop_reflect(&sp.clean, top, left, p),
            });
        }
        for _ in 0..n_pseudo {
            let pp = &pseudo[rng.gen_range(0..pseudo.len())];
            let top = rng.gen_range(0..pp.noisy.height().saturating_sub(p).max(1));
            let left = rng.gen_range(0..pp.noisy.width().saturating_sub(p).max(1));
            samples.push(TrainSample {
                noisy: crop_reflect(&pp.noisy, top, left, p),
                target: crop_reflect(&pp.pseudo_clean, top, left, p),
            });
        }
        let results = parallel::map_slice(&samples, |s| denoiser_sample_grads(&params, s));
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            for (name, g) in grads {
                let slot = acc.entry(name).or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in slot.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::Numerical(format!(
                "denoiser loss non-finite at iter {iter}"
            )));
        }
        let scale = 1.0 / config.batch as f64;
        for (name, t) in params.iter_mut() {
            t.zero_grad();
            if let Some(g) = acc.get(name) {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.accumulate_grad(&scaled)?;
            }
        }
        adam_step(&mut params, &mut state)?;
    }
    Ok(Denoiser::CompactCnn { params })
}

#[derive(Debug, Clone)]
pub struct EvalItem {
    pub image_id: String,
    pub noisy: ImageSRGB,
    pub reference: ImageSRGB,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub per_image: Vec<MetricsRecord>,
}

/// Scores the denoiser against oracle references.
pub fn evaluate_denoiser(
    denoiser: &Denoiser,
    eval: &[EvalItem],
    round: usize,
    config_hash: &str,
) -> Result<RoundMetrics> {
    if eval.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let denoised = parallel::map_slice(eval, |item| denoiser.denoise(&item.noisy));
    let mut per_image = Vec::new();
    let (mut psum, mut ssum) = (0.0, 0.0);
    for (item, d) in eval.iter().zip(denoised) {
        let d = d?;
        let p = metrics::psnr(&d, &item.reference)?;
        let s = metrics::ssim(&d, &item.reference)?;
        psum += p;
        ssum += s;
        per_image.push(MetricsRecord {
            image_id: item.image_id.clone(),
            round,
            psnr_db: p,
            ssim: s,
            config_hash: config_hash.to_string(),
        });
    }
    Ok(RoundMetrics {
        round,
        mean_psnr_db: psum / eval.len() as f64,
        mean_ssim: ssum / eval.len() as f64,
        per_image,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptionConfig {
    /// Number of alternation rounds t.
    pub rounds: usize,
    /// Fraction of each denoiser batch drawn from synthetic pairs.
    pub ratio: f64,
    pub isp: TrainConfig,
    pub denoiser: DenoiserTrainConfig,
    pub seed: u64,
    /// Stop early when the round-over-round PSNR gain falls below this
    /// threshold (dB). `None` disables early stopping.
    pub early_stop_db: Option<f64>,
}

impl Default for AdaptionConfig {
    fn default() -> Self {
        AdaptionConfig {
            rounds: 3,
            ratio: 0.5,
            isp: TrainConfig::default(),
            denoiser: DenoiserTrainConfig::default(),
            seed: 0,
            early_stop_db: Some(0.02),
        }
    }
}

#[derive(Debug)]
pub struct AdaptionOutcome {
    pub denoiser: Denoiser,
    pub rounds: Vec<RoundMetrics>,
    pub config_hash: String,
}

fn round_dir(out_dir: &Path, round: usize) -> std::path::PathBuf {
    out_dir.join(format!("round-{round:02}"))
}

/// Runs the full alternation loop. Completed rounds found under `out_dir`
/// (a saved denoiser plus metrics) are reused instead of recomputed, so an
/// interrupted run resumes where it stopped and extending `rounds` on a
/// finished run only trains the extra rounds.
pub fn run_adaption(
    noisy_set: &[(String, ImageSRGB)],
    clean_set: &[(String, ImageSRGB)],
    initial: Denoiser,
    config: &AdaptionConfig,
    out_dir: &Path,
    eval: &[EvalItem],
) -> Result<AdaptionOutcome> {
    if config.rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be >= 1".into()));
    }
    if noisy_set.is_empty() || clean_set.is_empty() {
        return Err(Error::InvalidArgument(
            "adaption needs both noisy and clean image sets".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io("create_dir", out_dir, e))?;
    let config_hash = metrics::config_hash(config)?;
    let mut denoiser = initial;
    let mut rounds: Vec<RoundMetrics> = Vec::new();

    for round in 1..=config.rounds {
        let dir = round_dir(out_dir, round);
        let ckpt = dir.join("denoiser.ckpt");
        let metrics_path = dir.join("metrics.json");
        if ckpt.is_file() && metrics_path.is_file() {
            let text = std::fs::read_to_string(&metrics_path)
                .map_err(|e| Error::io("read", &metrics_path, e))?;
            let rm: RoundMetrics = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad metrics.json: {e}")))?;
            denoiser = Denoiser::load(&ckpt)?;
            rounds.push(rm);
            continue;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io("create_dir", &dir, e))?;
        let round_seed = config
            .seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(round as u64);

        // Step 1: pseudo-clean targets from the current denoiser.
        let pairs = build_pseudo_pairs(&denoiser, noisy_set)
            .map_err(|e| e.in_stage("pseudo-pairs"))?;

        // Step 2: pseudo-ISP training.
        let mut isp_cfg = config.isp.clone();
        isp_cfg.seed = round_seed;
        let trained =
            train_pseudoisp(&pairs, &isp_cfg).map_err(|e| e.in_stage("pseudoisp-train"))?;
        let ckpt_dir = dir.join("pseudoisp-ckpts");
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io("create_dir", &ckpt_dir, e))?;
        for (i, (id, model)) in trained.models.iter().enumerate() {
            let mut meta = BTreeMap::new();
            meta.insert("image_id".to_string(), id.clone());
            meta.insert("round".to_string(), round.to_string());
            model.save(&ckpt_dir.join(format!("model-{i:03}.ckpt")), &meta)?;
        }

        // Step 3: synthesize noisy counterparts for the clean set,
        // cycling over the trained models.
        let plan: Vec<(usize, usize)> = (0..clean_set.len())
            .map(|i| (i, i % trained.models.len()))
            .collect();
        let synth_results = parallel::map_slice(&plan, |&(i, mi)| {
            let (id, clean) = &clean_set[i];
            let (model_id, model) = &trained.models[mi];
            synthesize_noisy(
                model,
                model_id,
                clean,
                round_seed ^ (i as u64).wrapping_mul(0x100000001b3),
            )
            .map(|p| (id.clone(), p))
        });
        let mut synthetic = Vec::with_capacity(clean_set.len());
        let synth_dir = dir.join("synthetic");
        std::fs::create_dir_all(&synth_dir).map_err(|e| Error::io("create_dir", &synth_dir, e))?;
        for r in synth_results {
            let (id, pair) = r.map_err(|e| e.in_stage("synthesis"))?;
            crate::imageio::write_png16(&synth_dir.join(format!("{id}.png")), &pair.noisy)?;
            synthetic.push(pair);
        }

        // Step 4: denoiser fine-tuning on the stratified mix.
        denoiser = finetune_denoiser(
            &denoiser,
            &pairs,
            &synthetic,
            config.ratio,
            &config.denoiser,
            round_seed ^ 0xa5a5a5a5,
        )
        .map_err(|e| e.in_stage("denoiser-finetune"))?;

        let rm = evaluate_denoiser(&denoiser, eval, round, &config_hash)?;
        denoiser.save(&ckpt)?;
        let text = serde_json::to_string_pretty(&rm)
            .map_err(|e| Error::Config(format!("metrics encode: {e}")))?;
        std::fs::write(&metrics_path, text).map_err(|e| Error::io("write", &metrics_path, e))?;
        rounds.push(rm);

        if let (Some(thresh), true) = (config.early_stop_db, rounds.len() >= 2) {
            let gain = rounds[rounds.len() - 1].mean_psnr_db - rounds[rounds.len() - 2].mean_psnr_db;
            if gain < thresh {
                break;
            }
        }
    }

    Ok(AdaptionOutcome {
        denoiser,
        rounds,
        config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_normalized_and_symmetric() {
        let k = gaussian_kernel();
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
        assert!(k[2] > k[1] && k[1] > k[0]);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = ImageSRGB::from_fn(9, 11, |_, _, c| 0.2 + 0.1 * c as f64);
        let out = gaussian_blur(&img);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_reduces_noise_variance() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let img = ImageSRGB::from_fn(32, 32, |_, _, _| 0.5 + rng.gen_range(-0.2..0.2));
        let out = gaussian_blur(&img);
        let var = |d: &[f64]| {
            let m = d.iter().sum::<f64>() / d.len() as f64;
            d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64
        };
        assert!(var(out.data()) < 0.5 * var(img.data()));
    }

    #[test]
    fn fresh_cnn_is_identity() {
        let d = Denoiser::compact_cnn(3);
        let img = crate::scenes::generate(1, 12, 12, 0).remove(0);
        let out = d.denoise(&img).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn denoiser_checkpoint_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let d = Denoiser::compact_cnn(7);
        let path = tmp.path().join("d.ckpt");
        d.save(&path).unwrap();
        let loaded = Denoiser::load(&path).unwrap();
        let img = crate::scenes::generate(1, 10, 10, 1).remove(0);
        assert_eq!(
            d.denoise(&img).unwrap().data(),
            loaded.denoise(&img).unwrap().data()
        );
        let g = Denoiser::GaussianBlur;
        let gpath = tmp.path().join("g.ckpt");
        g.save(&gpath).unwrap();
        assert_eq!(Denoiser::load(&gpath).unwrap().kind(), "gaussian_blur");
    }

    #[test]
    fn finetune_learns_denoising_on_tiny_problem() {
        // Clean constant images plus Gaussian noise; after a short fit the
        // CNN should beat the identity.
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut synthetic = Vec::new();
        for i in 0..4 {
            let clean = ImageSRGB::from_fn(32, 32, |_, _, c| 0.3 + 0.1 * ((c + i) % 3) as f64);
            let noisy = ImageSRGB::from_fn(32, 32, |y, x, c| {
                (clean.get(y, x, c) + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0)
            });
            synthetic.push(SyntheticPair {
                clean,
                noisy,
                model_id: "t".into(),
                seed: i as u64,
            });
        }
        let cfg = DenoiserTrainConfig {
            iters: 120,
            batch: 4,
            patch: 28,
            learning_rate: 1e-3,
        };
        let d = finetune_denoiser(&Denoiser::GaussianBlur, &[], &synthetic, 1.0, &cfg, 5).unwrap();
        let probe = &synthetic[0];
        let out = d.denoise(&probe.noisy).unwrap();
        let before = metrics::psnr(&probe.noisy, &probe.clean).unwrap();
        let after = metrics::psnr(&out, &probe.clean).unwrap();
        assert!(
            after > before + 3.0,
            "expected >3 dB gain, got {before:.2} -> {after:.2}"
        );
    }

    #[test]
    fn stratified_counts_are_exact() {
        // ratio 0.5 with batch 4 and an empty pseudo set must fail; with
        // ratio 1.0 it must succeed.
        let synthetic = vec![SyntheticPair {
            clean: ImageSRGB::zeros(16, 16),
            noisy: ImageSRGB::zeros(16, 16),
            model_id: "t".into(),
            seed: 0,
        }];
        let cfg = DenoiserTrainConfig {
            iters: 1,
            batch: 4,
            patch: 8,
            learning_rate: 1e-3,
        };
        let err = finetune_denoiser(&Denoiser::GaussianBlur, &[], &synthetic, 0.5, &cfg, 0);
        assert!(err.is_err());
        finetune_denoiser(&Denoiser::GaussianBlur, &[], &synthetic, 1.0, &cfg, 0).unwrap();
    }

    #[test]
    fn finetune_is_deterministic() {
        let synthetic = vec![SyntheticPair {
            clean: crate::scenes::generate(1, 16, 16, 2).remove(0),
            noisy: crate::scenes::generate(1, 16, 16, 3).remove(0),
            model_id: "t".into(),
            seed: 0,
        }];
        let cfg = DenoiserTrainConfig {
            iters: 3,
            batch: 2,
            patch: 8,
            learning_rate: 1e-3,
        };
        let run = || {
            let d =
                finetune_denoiser(&Denoiser::GaussianBlur, &[], &synthetic, 1.0, &cfg, 9).unwrap();
            match d {
                Denoiser::CompactCnn { params } => params
                    .iter()
                    .flat_map(|(_, t)| t.data().to_vec())
                    .collect::<Vec<f64>>(),
                _ => unreachable!(),
            }
        };
        assert_eq!(run(), run());
        crate::parallel::set_parallel(false);
        let serial = run();
        crate::parallel::set_parallel(true);
        assert_eq!(run(), serial);
    }
}
