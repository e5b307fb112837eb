//! Experiment driver: generates a simulated dataset, runs the adaption
//! loop per configuration variant, and writes a JSON report, a plain-text
//! summary table, and a CSV of the per-round PSNR/SSIM curves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaption::{run_adaption, AdaptionConfig, Denoiser, EvalItem, RoundMetrics};
use crate::camera::CameraProfile;
use crate::dataset::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::isp::{LossVariant, SharingScope};
use crate::metrics::config_hash;

/// One ablation axis; every other setting stays at the spec value from the
/// embedding `ExperimentSpec`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum AblationAxis {
    /// Synthetic-data fraction per denoiser batch.
    Ratio(Vec<f64>),
    /// Pseudo-ISP sharing scope.
    Sharing(Vec<SharingScope>),
    /// Number of alternation rounds.
    Rounds(Vec<usize>),
    /// Noise term of the joint loss.
    LossVariant(Vec<LossVariant>),
}

impl AblationAxis {
    fn variants(&self, base: &AdaptionConfig) -> Vec<(String, AdaptionConfig)> {
        let mut out = Vec::new();
        match self {
            AblationAxis::Ratio(values) => {
                for v in values {
                    let mut c = base.clone();
                    c.ratio = *v;
                    out.push((format!("ratio-{v:.2}"), c));
                }
            }
            AblationAxis::Sharing(values) => {
                for v in values {
                    let mut c = base.clone();
                    c.isp.sharing_scope = *v;
                    let label = match v {
                        SharingScope::Patch => "sharing-patch",
                        SharingScope::Image => "sharing-image",
                        SharingScope::Set => "sharing-set",
                    };
                    out.push((label.to_string(), c));
                }
            }
            AblationAxis::Rounds(values) => {
                for v in values {
                    let mut c = base.clone();
                    c.rounds = *v;
                    // Comparing round counts only makes sense when every
                    // requested round actually runs.
                    c.early_stop_db = None;
                    out.push((format!("rounds-{v}"), c));
                }
            }
            AblationAxis::LossVariant(values) => {
                for v in values {
                    let mut c = base.clone();
                    c.isp.loss_variant = *v;
                    let label = match v {
                        LossVariant::FoldedNormal => "loss-folded-normal",
                        LossVariant::SquaredResidual => "loss-squared-residual",
                    };
                    out.push((label.to_string(), c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    /// Total number of generated scenes; the first half becomes the noisy
    /// set, the rest the clean set.
    pub scenes: usize,
    pub image_size: usize,
    pub profile: Option<CameraProfile>,
    pub adaption: AdaptionConfig,
    pub ablation: Option<AblationAxis>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            scenes: 8,
            image_size: 64,
            profile: None,
            adaption: AdaptionConfig::default(),
            ablation: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        let spec: ExperimentSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes < 2 {
            return Err(Error::Config("need at least 2 scenes".into()));
        }
        if self.image_size % 2 != 0 || self.image_size < 16 {
            return Err(Error::Config(
                "image_size must be even and at least 16".into(),
            ));
        }
        if let Some(AblationAxis::Ratio(v)) = &self.ablation {
            if v.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Config("ablation ratios must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantResult {
    pub label: String,
    pub rounds: Vec<RoundMetrics>,
    pub final_psnr_db: f64,
    pub final_ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub baseline_psnr_db: f64,
    pub baseline_ssim: f64,
    pub variants: Vec<VariantResult>,
}

fn render_table(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", report.name);
    let _ = writeln!(s, "config hash: {}", report.config_hash);
    let _ = writeln!(s, "seed: {}", report.seed);
    let _ = writeln!(
        s,
        "gaussian-blur baseline: {:7.3} dB  ssim {:.4}",
        report.baseline_psnr_db, report.baseline_ssim
    );
    let _ = writeln!(s, "{:<24} {:>7} {:>9} {:>7}", "variant", "rounds", "psnr_db", "ssim");
    for v in &report.variants {
        let _ = writeln!(
            s,
            "{:<24} {:>7} {:>9.3} {:>7.4}",
            v.label,
            v.rounds.len(),
            v.final_psnr_db,
            v.final_ssim
        );
    }
    s
}

fn render_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("variant,round,psnr_db,ssim\n");
    for v in &report.variants {
        for r in &v.rounds {
            let _ = writeln!(s, "{},{},{},{}", v.label, r.round, r.mean_psnr_db, r.mean_ssim);
        }
    }
    s
}

/// Runs the experiment end to end under `out_dir`:
/// `dataset/` holds the simulated images, `variants/<label>/` the adaption
/// artifacts, and `report.json` / `table.txt` / `curve.csv` the results.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    let hash = config_hash(spec)?;
    let seed = spec.adaption.seed;
    let profile = spec
        .profile
        .clone()
        .unwrap_or_else(|| CameraProfile::default_profile(seed));

    let dataset_dir = out_dir.join("dataset");
    if !dataset_dir.join("manifest.json").is_file() {
        let scenes = crate::scenes::generate(spec.scenes, spec.image_size, spec.image_size, seed);
        generate_dataset(&profile, &scenes, &dataset_dir).map_err(|e| e.in_stage("simulate"))?;
    }
    let dataset = Dataset::load(&dataset_dir)?;
    let noisy_set = dataset.noisy_images()?;
    let clean_set = dataset.clean_images()?;
    let mut eval = Vec::new();
    for (id, noisy) in &noisy_set {
        let oracle = dataset.oracle_for(id)?;
        eval.push(EvalItem {
            image_id: id.clone(),
            noisy: noisy.clone(),
            reference: oracle.clean_srgb,
        });
    }

    // Score the fixed blur baseline once for reference.
    let baseline = crate::adaption::evaluate_denoiser(&Denoiser::GaussianBlur, &eval, 0, &hash)?;

    let variants = match &spec.ablation {
        None => vec![("base".to_string(), spec.adaption.clone())],
        Some(axis) => axis.variants(&spec.adaption),
    };
    let mut results = Vec::new();
    for (label, config) in &variants {
        let vdir = out_dir.join("variants").join(label);
        let outcome = run_adaption(
            &noisy_set,
            &clean_set,
            Denoiser::GaussianBlur,
            config,
            &vdir,
            &eval,
        )
        .map_err(|e| e.in_stage(format!("adapt[{label}]")))?;
        let last = outcome
            .rounds
            .last()
            .ok_or_else(|| Error::Numerical("adaption produced no rounds".into()))?;
        results.push(VariantResult {
            label: label.clone(),
            final_psnr_db: last.mean_psnr_db,
            final_ssim: last.mean_ssim,
            rounds: outcome.rounds,
        });
    }

    let report = ExperimentReport {
        name: spec.name.clone(),
        config_hash: hash,
        seed,
        baseline_psnr_db: baseline.mean_psnr_db,
        baseline_ssim: baseline.mean_ssim,
        variants: results,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report encode: {e}")))?;
    for (name, text) in [
        ("report.json", json),
        ("table.txt", render_table(&report)),
        ("curve.csv", render_csv(&report)),
    ] {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io("write", &p, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_variants_change_exactly_one_setting() {
        let base = AdaptionConfig::default();
        let axis = AblationAxis::Ratio(vec![0.25, 0.5, 0.75, 1.0]);
        let vs = axis.variants(&base);
        assert_eq!(vs.len(), 4);
        for (label, c) in &vs {
            assert!(label.starts_with("ratio-"));
            assert_eq!(c.rounds, base.rounds);
            assert_eq!(c.isp.sharing_scope, base.isp.sharing_scope);
        }
        assert_eq!(vs[0].1.ratio, 0.25);
        assert_eq!(vs[3].1.ratio, 1.0);

        let axis = AblationAxis::Rounds(vec![1, 2, 3, 4]);
        for (_, c) in axis.variants(&base) {
            assert!(c.early_stop_db.is_none());
        }
    }

    #[test]
    fn spec_round_trips_through_toml_and_json() {
        let spec = ExperimentSpec {
            ablation: Some(AblationAxis::Sharing(vec![
                SharingScope::Patch,
                SharingScope::Set,
            ])),
            ..ExperimentSpec::default()
        };
        let tmp = tempfile::tempdir().unwrap();
        let tpath = tmp.path().join("spec.toml");
        std::fs::write(&tpath, toml::to_string(&spec).unwrap()).unwrap();
        let jpath = tmp.path().join("spec.json");
        std::fs::write(&jpath, serde_json::to_string(&spec).unwrap()).unwrap();
        for p in [tpath, jpath] {
            let loaded = ExperimentSpec::from_file(&p).unwrap();
            assert_eq!(loaded.scenes, spec.scenes);
            assert!(matches!(
                loaded.ablation,
                Some(AblationAxis::Sharing(ref v)) if v.len() == 2
            ));
        }
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let mut s = ExperimentSpec {
            scenes: 1,
            ..ExperimentSpec::default()
        };
        assert!(s.validate().is_err());
        s.scenes = 4;
        s.image_size = 33;
        assert!(s.validate().is_err());
        s.image_size = 32;
        s.ablation = Some(AblationAxis::Ratio(vec![1.5]));
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let a = ExperimentSpec::default();
        let mut b = ExperimentSpec::default();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.scenes += 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }
}
