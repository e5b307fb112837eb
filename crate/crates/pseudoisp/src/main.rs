use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use pseudoisp::adaption::{
    build_pseudo_pairs, evaluate_denoiser, run_adaption, AdaptionConfig, Denoiser,
    EvalItem,
};
use pseudoisp::camera::CameraProfile;
use pseudoisp::dataset::{generate_dataset, Dataset};
use pseudoisp::error::{Error, Result};
use pseudoisp::experiment::{run_experiment, ExperimentSpec};
use pseudoisp::isp::{train_pseudoisp, PseudoIspModel, TrainConfig};
use pseudoisp::metrics::config_hash;
use pseudoisp::synthesis::{
    fit_elementwise_map, pack_quadrant, synthesize_noisy, verify_taylor_noise_model,
    write_panels,
};

#[derive(Parser)]
#[command(
    name = "pseudoisp",
    about = "Pseudo-ISP pipeline: camera simulation, joint ISP/noise learning, \
             noisy synthesis, and denoiser adaption",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Config file (TOML or JSON); schema depends on the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for all random choices.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the full paper-scale iteration counts instead of desk scale.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Output directory (or file, for `evaluate`).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated noisy/clean dataset with oracle raw data.
    Simulate {
        /// Number of scenes (first half noisy, rest clean).
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        /// Square image side (even).
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train the pseudo-ISP subnets on pseudo pairs from a dataset.
    TrainPseudoisp {
        /// Dataset directory from `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Optional denoiser checkpoint for pseudo-clean generation
        /// (defaults to the Gaussian-blur baseline).
        #[arg(long)]
        denoiser: Option<PathBuf>,
    },
    /// Synthesize noisy counterparts of the clean set through a model.
    Synthesize {
        #[arg(long)]
        data: PathBuf,
        /// Trained pseudo-ISP checkpoint.
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the full alternating adaption loop.
    Adapt {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a denoiser checkpoint against the dataset oracles.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Denoiser checkpoint; omit to score the Gaussian-blur baseline.
        #[arg(long)]
        denoiser: Option<PathBuf>,
    },
    /// Verify the element-wise-map and Taylor noise-model assumptions.
    VerifyAssumptions {
        #[arg(long)]
        data: PathBuf,
        /// Trained pseudo-ISP checkpoint.
        #[arg(long)]
        model: PathBuf,
    },
    /// Run an ablation experiment from a spec file.
    Experiment,
}

fn load_train_config(g: &GlobalArgs) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.paper_scale {
        cfg = cfg.paper_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_adaption_config(g: &GlobalArgs) -> Result<AdaptionConfig> {
    let mut cfg: AdaptionConfig = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io("read", p, e))?;
            match p.extension().and_then(|e| e.to_str()) {
                Some("json") => serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                _ => toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            }
        }
        None => AdaptionConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.isp.seed = s;
    }
    if g.paper_scale {
        cfg.isp = cfg.isp.clone().paper_scale();
    }
    cfg.isp.validate()?;
    Ok(cfg)
}

fn load_eval_items(dataset: &Dataset) -> Result<Vec<EvalItem>> {
    let mut eval = Vec::new();
    for (id, noisy) in dataset.noisy_images()? {
        let oracle = dataset.oracle_for(&id)?;
        eval.push(EvalItem {
            image_id: id,
            noisy,
            reference: oracle.clean_srgb,
        });
    }
    Ok(eval)
}

fn load_denoiser(path: &Option<PathBuf>) -> Result<Denoiser> {
    match path {
        Some(p) => Denoiser::load(p),
        None => Ok(Denoiser::GaussianBlur),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io("create_dir", dir, e))
}

fn run(cli: Cli) -> Result<()> {
    pseudoisp::parallel::init_pool();
    let g = &cli.global;
    match cli.command {
        Command::Simulate { scenes, size } => {
            let seed = g.seed.unwrap_or(0);
            let profile = CameraProfile::default_profile(seed);
            let images = pseudoisp::scenes::generate(scenes, size, size, seed);
            let manifest = generate_dataset(&profile, &images, &g.out)?;
            println!(
                "wrote {} entries to {}",
                manifest.entries.len(),
                g.out.display()
            );
        }
        Command::TrainPseudoisp { data, denoiser } => {
            let cfg = load_train_config(g)?;
            let dataset = Dataset::load(&data)?;
            let den = load_denoiser(&denoiser)?;
            let pairs = build_pseudo_pairs(&den, &dataset.noisy_images()?)?;
            let trained = train_pseudoisp(&pairs, &cfg)?;
            ensure_dir(&g.out)?;
            for (i, (id, model)) in trained.models.iter().enumerate() {
                let mut meta = BTreeMap::new();
                meta.insert("image_id".to_string(), id.clone());
                meta.insert("config_hash".to_string(), config_hash(&cfg)?);
                model.save(&g.out.join(format!("model-{i:03}.ckpt")), &meta)?;
            }
            let hist = serde_json::to_string_pretty(&trained.loss_history)
                .map_err(|e| Error::Config(format!("history encode: {e}")))?;
            let hp = g.out.join("loss_history.json");
            std::fs::write(&hp, hist).map_err(|e| Error::io("write", &hp, e))?;
            println!(
                "trained {} model(s) into {}",
                trained.models.len(),
                g.out.display()
            );
        }
        Command::Synthesize { data, model } => {
            let seed = g.seed.unwrap_or(0);
            let model = PseudoIspModel::load(&model)?;
            let dataset = Dataset::load(&data)?;
            ensure_dir(&g.out)?;
            let clean = dataset.clean_images()?;
            for (i, (id, img)) in clean.iter().enumerate() {
                let pair = synthesize_noisy(&model, "cli", img, seed ^ i as u64)?;
                pseudoisp::imageio::write_png16(
                    &g.out.join(format!("{id}.png")),
                    &pair.noisy,
                )?;
            }
            println!("synthesized {} image(s) into {}", clean.len(), g.out.display());
        }
        Command::Adapt { data } => {
            let cfg = load_adaption_config(g)?;
            let dataset = Dataset::load(&data)?;
            let eval = load_eval_items(&dataset)?;
            let outcome = run_adaption(
                &dataset.noisy_images()?,
                &dataset.clean_images()?,
                Denoiser::GaussianBlur,
                &cfg,
                &g.out,
                &eval,
            )?;
            for r in &outcome.rounds {
                println!(
                    "round {}: psnr {:.3} dB  ssim {:.4}",
                    r.round, r.mean_psnr_db, r.mean_ssim
                );
            }
        }
        Command::Evaluate { data, denoiser } => {
            let dataset = Dataset::load(&data)?;
            let eval = load_eval_items(&dataset)?;
            let den = load_denoiser(&denoiser)?;
            let hash = config_hash(&denoiser.as_ref().map(|p| p.display().to_string()))?;
            let rm = evaluate_denoiser(&den, &eval, 0, &hash)?;
            let text = serde_json::to_string_pretty(&rm)
                .map_err(|e| Error::Config(format!("metrics encode: {e}")))?;
            if let Some(parent) = g.out.parent() {
                if !parent.as_os_str().is_empty() {
                    ensure_dir(parent)?;
                }
            }
            let out = if g.out.extension().is_some() {
                g.out.clone()
            } else {
                ensure_dir(&g.out)?;
                g.out.join("metrics.json")
            };
            std::fs::write(&out, text).map_err(|e| Error::io("write", &out, e))?;
            println!(
                "{}: psnr {:.3} dB  ssim {:.4}",
                den.kind(),
                rm.mean_psnr_db,
                rm.mean_ssim
            );
        }
        Command::VerifyAssumptions { data, model } => {
            let seed = g.seed.unwrap_or(0);
            let model = PseudoIspModel::load(&model)?;
            let dataset = Dataset::load(&data)?;
            let (id, noisy) = dataset
                .noisy_images()?
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidArgument("dataset has no noisy images".into()))?;
            let oracle = dataset.oracle_for(&id)?;
            let pseudo_pack = model.srgb_to_pack(&noisy)?;
            let gt_pack = oracle.noisy_raw.pack();
            let map = fit_elementwise_map(
                &pack_quadrant(&gt_pack, 0)?,
                &pack_quadrant(&pseudo_pack, 0)?,
                2000,
                seed,
            )?;
            let report = verify_taylor_noise_model(
                &dataset.manifest.profile,
                &map,
                &model,
                &noisy,
                &oracle.noisy_raw,
            )?;
            ensure_dir(&g.out)?;
            report.save_json(&g.out.join("report.json"))?;
            write_panels(&g.out.join("panels"), &pseudo_pack, &gt_pack, &map)?;
            println!(
                "median sigma rel err {:.3}, f fit {:.2} dB, round trip {:.2} dB, srgb {:.2} dB",
                report.median_rel_err,
                report.psnr_f_fit_db,
                report.psnr_f_roundtrip_db,
                report.psnr_srgb_db
            );
        }
        Command::Experiment => {
            let path = g.config.as_ref().ok_or_else(|| {
                Error::Config("experiment requires --config pointing to a spec file".into())
            })?;
            let mut spec = ExperimentSpec::from_file(path)?;
            if let Some(s) = g.seed {
                spec.adaption.seed = s;
                spec.adaption.isp.seed = s;
            }
            if g.paper_scale {
                spec.adaption.isp = spec.adaption.isp.clone().paper_scale();
            }
            let report = run_experiment(&spec, &g.out)?;
            println!(
                "experiment {} ({} variant(s)) written to {}",
                report.name,
                report.variants.len(),
                g.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            if code == 0 {
                print!("{e}");
            } else {
                eprint!("{e}");
            }
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
