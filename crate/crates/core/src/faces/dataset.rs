//! Labelled face corpora and their on-disk layout.
//!
//! ```text
//! <dir>/images/<file>.pgm|.ppm   binary P5 / P6
//! <dir>/labels.csv               filename,identity_id,split
//! <dir>/landmarks.json           {"<file>": {"left_eye": {"x0":..,"y0":..,"x1":..,"y1":..}, ...}}
//! <dir>/dataset.json             generation parameters and identity vectors (synthetic only)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::identity::FaceIdentity;
use super::landmarks::LandmarkMap;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Hold,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Hold => "hold",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "hold" | "holdout" => Ok(Split::Hold),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Images are split independently; an identity may span both splits.
    ImageLevel,
    /// Whole identities go to one split.
    IdentityDisjoint,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image_level" | "image" => Ok(SplitMode::ImageLevel),
            "identity_disjoint" | "identity" => Ok(SplitMode::IdentityDisjoint),
            other => Err(format!("unknown split mode `{other}` (image_level|identity_disjoint)")),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::ImageLevel => "image_level",
            SplitMode::IdentityDisjoint => "identity_disjoint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub file_name: String,
    pub image: Image,
    pub identity: usize,
    pub landmarks: LandmarkMap,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub shape: Shape,
    pub split_fraction: f64,
    pub split_mode: SplitMode,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n_identities: 16,
            images_per_identity: 4,
            shape: Shape::new(32, 32, 1),
            split_fraction: 0.6,
            split_mode: SplitMode::ImageLevel,
            jitter: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceDataset {
    pub shape: Shape,
    pub records: Vec<FaceRecord>,
    pub split_mode: Option<SplitMode>,
    /// Present for synthetic corpora; lets callers render further photos.
    pub generation: Option<GenerationParams>,
    pub identities: Vec<FaceIdentity>,
}

/// Variation index space reserved per identity; renders beyond
/// `images_per_identity` are fresh query photos never placed in the corpus.
const VARIATIONS_PER_IDENTITY: u64 = 1 << 20;

impl FaceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FaceRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn train_images(&self) -> Vec<Image> {
        self.split(Split::Train).map(|r| r.image.clone()).collect()
    }

    pub fn identity_ids(&self) -> BTreeSet<usize> {
        self.records.iter().map(|r| r.identity).collect()
    }

    /// Identities with at least one training image.
    pub fn member_identities(&self) -> BTreeSet<usize> {
        self.split(Split::Train).map(|r| r.identity).collect()
    }

    pub fn identity(&self, id: usize) -> Option<&FaceIdentity> {
        self.identities.iter().find(|i| i.id == id)
    }

    pub fn records_of(&self, id: usize) -> impl Iterator<Item = &FaceRecord> + '_ {
        self.records.iter().filter(move |r| r.identity == id)
    }

    /// Renders photo number `variation` of a synthetic identity.
    pub fn render_variation(&self, identity: &FaceIdentity, variation: u64) -> Result<(Image, LandmarkMap)> {
        let gen = self.generation.as_ref().ok_or_else(|| {
            Error::InsufficientData("dataset has no generation parameters; cannot render".into())
        })?;
        identity.render(
            self.shape,
            variation_seed(gen.seed, identity.id as u64, variation),
            gen.jitter,
        )
    }

    /// A fresh photo of `identity` that is not part of the corpus.
    pub fn render_query(&self, identity: &FaceIdentity, k: usize) -> Result<(Image, LandmarkMap)> {
        let base = self.generation.as_ref().map_or(0, |g| g.images_per_identity as u64);
        self.render_variation(identity, base + k as u64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let images_dir = dir.join("images");
        fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        let mut labels = String::from("filename,identity_id,split\n");
        let mut landmarks = BTreeMap::new();
        for r in &self.records {
            r.image.save_pnm(&images_dir.join(&r.file_name))?;
            labels.push_str(&format!("{},{},{}\n", r.file_name, r.identity, r.split.as_str()));
            landmarks.insert(r.file_name.clone(), r.landmarks.clone());
        }
        write_file(&dir.join("labels.csv"), labels.as_bytes())?;
        let json = serde_json::to_string_pretty(&landmarks).expect("serializable");
        write_file(&dir.join("landmarks.json"), json.as_bytes())?;
        if let Some(gen) = &self.generation {
            let manifest = DatasetManifest {
                generation: gen.clone(),
                identities: self.identities.clone(),
            };
            let json = serde_json::to_string_pretty(&manifest).expect("serializable");
            write_file(&dir.join("dataset.json"), json.as_bytes())?;
        }
        Ok(())
    }

    /// Loads a directory written by [`FaceDataset::save`].
    pub fn load(dir: &Path) -> Result<FaceDataset> {
        let labels_path = dir.join("labels.csv");
        let labels = read_labels(&labels_path)?
            .ok_or_else(|| Error::io(&labels_path, std::io::ErrorKind::NotFound.into()))?;
        let landmarks = read_landmarks(&dir.join("landmarks.json"))?;
        let manifest_path = dir.join("dataset.json");
        let manifest: Option<DatasetManifest> = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::parse(&manifest_path, e.to_string()))?)
        } else {
            None
        };
        let mut records = Vec::with_capacity(labels.len());
        for (file_name, (identity, split)) in labels {
            let image = Image::load_pnm(&dir.join("images").join(&file_name))?;
            let lm = landmarks
                .get(&file_name)
                .cloned()
                .ok_or_else(|| Error::MissingLandmarks(file_name.clone()))?;
            records.push(FaceRecord {
                file_name,
                image,
                identity,
                landmarks: lm,
                split,
            });
        }
        let (generation, identities) = match manifest {
            Some(m) => (Some(m.generation), m.identities),
            None => (None, Vec::new()),
        };
        let split_mode = generation.as_ref().map(|g| g.split_mode);
        finish(records, split_mode, generation, identities)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    generation: GenerationParams,
    identities: Vec<FaceIdentity>,
}

fn variation_seed(base: u64, identity: u64, variation: u64) -> u64 {
    seed::derive(base, identity * VARIATIONS_PER_IDENTITY + variation)
}

fn split_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        k.min(n)
    }
}

/// Renders `n_identities × images_per_identity` photos and partitions them.
pub fn generate_dataset(params: &GenerationParams) -> Result<FaceDataset> {
    if params.n_identities == 0 || params.images_per_identity == 0 {
        return Err(Error::InvalidRange("identity and image counts must be at least 1".into()));
    }
    if !(params.split_fraction > 0.0 && params.split_fraction < 1.0) {
        return Err(Error::InvalidRange(format!(
            "split fraction {} outside (0, 1)",
            params.split_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let identities: Vec<FaceIdentity> = (0..params.n_identities)
        .map(|id| FaceIdentity::random(id, &mut rng))
        .collect();

    let mut records = Vec::with_capacity(params.n_identities * params.images_per_identity);
    for identity in &identities {
        for k in 0..params.images_per_identity {
            let (image, landmarks) = identity.render(
                params.shape,
                variation_seed(params.seed, identity.id as u64, k as u64),
                params.jitter,
            )?;
            let ext = if params.shape.channels == 1 { "pgm" } else { "ppm" };
            records.push(FaceRecord {
                file_name: format!("id{:04}_{k:03}.{ext}", identity.id),
                image,
                identity: identity.id,
                landmarks,
                split: Split::Hold,
            });
        }
    }

    match params.split_mode {
        SplitMode::ImageLevel => {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut rng);
            for &i in &order[..split_count(records.len(), params.split_fraction)] {
                records[i].split = Split::Train;
            }
        }
        SplitMode::IdentityDisjoint => {
            let mut ids: Vec<usize> = (0..params.n_identities).collect();
            ids.shuffle(&mut rng);
            let train: BTreeSet<usize> = ids[..split_count(ids.len(), params.split_fraction)]
                .iter()
                .copied()
                .collect();
            for r in &mut records {
                if train.contains(&r.identity) {
                    r.split = Split::Train;
                }
            }
        }
    }
    finish(records, Some(params.split_mode), Some(params.clone()), identities)
}

fn finish(
    records: Vec<FaceRecord>,
    split_mode: Option<SplitMode>,
    generation: Option<GenerationParams>,
    identities: Vec<FaceIdentity>,
) -> Result<FaceDataset> {
    let shape = records
        .first()
        .map(|r| r.image.shape())
        .ok_or_else(|| Error::InsufficientData("dataset contains no images".into()))?;
    for r in &records {
        if r.image.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                found: format!("{} in {}", r.image.shape(), r.file_name),
            });
        }
        r.landmarks
            .validate_frame(shape.height, shape.width)
            .map_err(|e| Error::Validation(format!("{}: {e}", r.file_name)))?;
    }
    Ok(FaceDataset {
        shape,
        records,
        split_mode,
        generation,
        identities,
    })
}

/// Loads real photos from `directory` (`*.pgm` / `*.ppm`), with landmarks
/// from a sidecar JSON keyed by file name. An optional `labels.csv` in the
/// directory supplies identities and splits; otherwise every image is its
/// own identity in the holdout split.
pub fn load_external_images(directory: &Path, landmark_sidecar: &Path) -> Result<FaceDataset> {
    let landmarks = read_landmarks(landmark_sidecar)?;
    let labels = read_labels(&directory.join("labels.csv"))?;
    let mut files: Vec<PathBuf> = fs::read_dir(directory)
        .map_err(|e| Error::io(directory, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    files.sort();
    let mut records = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let lm = landmarks
            .get(&file_name)
            .cloned()
            .ok_or_else(|| Error::MissingLandmarks(file_name.clone()))?;
        let image = Image::load_pnm(path)?;
        let (identity, split) = match &labels {
            Some(l) => *l.get(&file_name).ok_or_else(|| {
                Error::Validation(format!("{file_name} has no row in labels.csv"))
            })?,
            None => (i, Split::Hold),
        };
        records.push(FaceRecord {
            file_name,
            image,
            identity,
            landmarks: lm,
            split,
        });
    }
    finish(records, None, None, Vec::new())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_landmarks(path: &Path) -> Result<BTreeMap<String, LandmarkMap>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// `None` when the file does not exist.
fn read_labels(path: &Path) -> Result<Option<BTreeMap<String, (usize, Split)>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if (n == 0 && line.starts_with("filename")) || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [file, id, split] = fields[..] else {
            return Err(Error::parse(path, format!("line {}: expected 3 fields", n + 1)));
        };
        let id = id
            .parse()
            .map_err(|_| Error::parse(path, format!("line {}: bad identity `{id}`", n + 1)))?;
        let split = split
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        out.insert(file.to_string(), (id, split));
    }
    Ok(Some(out))
}
