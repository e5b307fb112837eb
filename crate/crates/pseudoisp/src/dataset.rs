//! Dataset generation and on-disk layout.
//!
//! `generate_dataset` renders each scene through the simulated camera and
//! writes an unpaired pair of sets: noisy sRGB images (developed noisy raws)
//! and clean sRGB images of *different* scenes, plus a hidden oracle sidecar
//! (clean/noisy raws and clean sRGB, used only by verification code).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{add_raw_noise, develop, render_clean_raw, CameraProfile, RawImage};
use crate::error::{Error, Result};
use crate::imageio::{read_png, write_png16, ImageSRGB};
use crate::tensor::{ParamSet, Tensor};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Noisy,
    Clean,
    Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub path: String,
    pub scene_id: usize,
    /// Noise seed for noisy entries, 0 otherwise.
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub profile: CameraProfile,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries_with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io("write", path, e))
}

fn raw_to_tensor(raw: &RawImage) -> Tensor {
    Tensor::new(
        vec![raw.height(), raw.width()],
        raw.data().to_vec(),
    )
    .expect("consistent dims")
}

fn tensor_to_raw(t: &Tensor) -> Result<RawImage> {
    let [h, w] = *t.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "raw oracle array must be [H,W], got {:?}",
            t.shape()
        )));
    };
    RawImage::new(h, w, t.data().to_vec())
}

/// Renders scenes through the camera and writes the dataset. The first
/// ceil(n/2) scenes become the noisy set, the rest the clean set; the split
/// is disjoint by construction.
pub fn generate_dataset(
    profile: &CameraProfile,
    scenes: &[ImageSRGB],
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if scenes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scenes, got {}",
            scenes.len()
        )));
    }
    for sub in ["noisy", "clean", "oracle"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io("create_dir", &d, e))?;
    }
    let n_noisy = scenes.len().div_ceil(2);
    let mut entries = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let clean_raw = render_clean_raw(profile, scene)?;
        if i < n_noisy {
            let noise_seed = profile
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(i as u64);
            let noisy_raw = add_raw_noise(profile, &clean_raw, noise_seed);
            let noisy_srgb = develop(profile, &noisy_raw);
            let id = format!("noisy_{i:03}");
            let rel = format!("noisy/{id}.png");
            write_png16(&out_dir.join(&rel), &noisy_srgb)?;
            entries.push(ManifestEntry {
                id: id.clone(),
                role: Role::Noisy,
                path: rel,
                scene_id: i,
                noise_seed,
            });

            // Hidden oracle: everything verification needs, nothing the
            // learner is allowed to see.
            let clean_srgb = develop(profile, &clean_raw);
            let mut arrays = ParamSet::new();
            arrays.insert("clean_raw", raw_to_tensor(&clean_raw));
            arrays.insert("noisy_raw", raw_to_tensor(&noisy_raw));
            arrays.insert("clean_srgb", clean_srgb.to_tensor());
            let mut meta = BTreeMap::new();
            meta.insert("scene_id".into(), i.to_string());
            meta.insert("noise_seed".into(), noise_seed.to_string());
            let orel = format!("oracle/{id}.ckpt");
            crate::checkpoint::save(&out_dir.join(&orel), &arrays, &meta)?;
            entries.push(ManifestEntry {
                id: format!("oracle_{i:03}"),
                role: Role::Oracle,
                path: orel,
                scene_id: i,
                noise_seed,
            });
        } else {
            let clean_srgb = develop(profile, &clean_raw);
            let id = format!("clean_{i:03}");
            let rel = format!("clean/{id}.png");
            write_png16(&out_dir.join(&rel), &clean_srgb)?;
            entries.push(ManifestEntry {
                id,
                role: Role::Clean,
                path: rel,
                scene_id: i,
                noise_seed: 0,
            });
        }
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: profile.seed,
        profile: profile.clone(),
        entries,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Hidden ground truth for one noisy image.
pub struct OracleRecord {
    pub clean_raw: RawImage,
    pub noisy_raw: RawImage,
    pub clean_srgb: ImageSRGB,
}

/// A dataset loaded back from disk.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io("read", &path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest schema {}",
                manifest.schema_version
            )));
        }
        Ok(Dataset {
            manifest,
            root: root.to_path_buf(),
        })
    }

    pub fn noisy_images(&self) -> Result<Vec<(String, ImageSRGB)>> {
        self.images_with_role(Role::Noisy)
    }

    pub fn clean_images(&self) -> Result<Vec<(String, ImageSRGB)>> {
        self.images_with_role(Role::Clean)
    }

    fn images_with_role(&self, role: Role) -> Result<Vec<(String, ImageSRGB)>> {
        self.manifest
            .entries_with_role(role)
            .map(|e| Ok((e.id.clone(), read_png(&self.root.join(&e.path))?)))
            .collect()
    }

    /// Loads the oracle record for a noisy image id (`noisy_XXX`).
    pub fn oracle_for(&self, noisy_id: &str) -> Result<OracleRecord> {
        let scene_id = self
            .manifest
            .entries
            .iter()
            .find(|e| e.id == noisy_id && e.role == Role::Noisy)
            .map(|e| e.scene_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown noisy id {noisy_id}")))?;
        let entry = self
            .manifest
            .entries
            .iter()
            .find(|e| e.role == Role::Oracle && e.scene_id == scene_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no oracle for scene {scene_id}"))
            })?;
        let (arrays, _meta) = crate::checkpoint::load(&self.root.join(&entry.path))?;
        let get = |name: &str| {
            arrays
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("oracle missing array '{name}'")))
        };
        Ok(OracleRecord {
            clean_raw: tensor_to_raw(get("clean_raw")?)?,
            noisy_raw: tensor_to_raw(get("noisy_raw")?)?,
            clean_srgb: ImageSRGB::from_tensor(get("clean_srgb")?)?,
        })
    }
}
