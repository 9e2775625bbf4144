//! Dataset manifests, deterministic splits, label scaling and image
//! preprocessing.
//!
//! Manifests are plain CSV with a header row: `image,mos[,authenticity]`.
//! Image paths are resolved relative to the manifest's directory.

mod preprocess;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use preprocess::{
    preprocess_bytes, preprocess_dynamic, preprocess_image, preprocess_image_sized, ImageTensor,
    CHANNEL_MEAN, CHANNEL_STD, DEFAULT_IMAGE_SIZE,
};

/// Name of the primary target dimension, stored in the `mos` column.
pub const QUALITY: &str = "quality";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub mos: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux_scores: BTreeMap<String, f64>,
    pub split: Split,
}

impl ImageRecord {
    pub fn target(&self, dim: &str) -> Result<f64> {
        if dim == QUALITY {
            return Ok(self.mos);
        }
        self.aux_scores
            .get(dim)
            .copied()
            .ok_or_else(|| Error::UnknownTarget(dim.to_string()))
    }
}

/// Known dataset layouts: label range and target dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetProfile {
    /// MOS in [0, 5], quality only.
    Agiqa3k,
    /// Quality and authenticity in [0, 100].
    Aigciqa2023,
    Custom {
        name: String,
        lo: f64,
        hi: f64,
        dims: Vec<String>,
    },
}

impl DatasetProfile {
    pub fn name(&self) -> &str {
        match self {
            DatasetProfile::Agiqa3k => "AGIQA-3K",
            DatasetProfile::Aigciqa2023 => "AIGCIQA2023",
            DatasetProfile::Custom { name, .. } => name,
        }
    }

    pub fn label_range(&self) -> (f64, f64) {
        match self {
            DatasetProfile::Agiqa3k => (0.0, 5.0),
            DatasetProfile::Aigciqa2023 => (0.0, 100.0),
            DatasetProfile::Custom { lo, hi, .. } => (*lo, *hi),
        }
    }

    pub fn target_dims(&self) -> Vec<String> {
        match self {
            DatasetProfile::Agiqa3k => vec![QUALITY.into()],
            DatasetProfile::Aigciqa2023 => vec![QUALITY.into(), "authenticity".into()],
            DatasetProfile::Custom { dims, .. } => dims.clone(),
        }
    }

    /// Record count of the published dataset, when fixed.
    pub fn expected_records(&self) -> Option<usize> {
        match self {
            DatasetProfile::Agiqa3k => Some(2982),
            _ => None,
        }
    }
}

impl FromStr for DatasetProfile {
    type Err = Error;

    /// Accepts `agiqa-3k`, `aigciqa2023`, or `custom:LO:HI[:dim,dim...]`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.replace(['-', '_'], "").as_str() {
            "agiqa3k" => return Ok(DatasetProfile::Agiqa3k),
            "aigciqa2023" => return Ok(DatasetProfile::Aigciqa2023),
            _ => {}
        }
        let unknown = || Error::UnknownProfile(s.to_string());
        let rest = lower.strip_prefix("custom:").ok_or_else(unknown)?;
        let mut parts = rest.split(':');
        let lo: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(unknown)?;
        let hi: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(unknown)?;
        let dims = match parts.next() {
            Some(d) => d.split(',').map(|x| x.trim().to_string()).collect(),
            None => vec![QUALITY.to_string()],
        };
        if !(lo < hi) || dims.is_empty() || dims[0] != QUALITY {
            return Err(unknown());
        }
        Ok(DatasetProfile::Custom {
            name: "custom".into(),
            lo,
            hi,
            dims,
        })
    }
}

/// Affine map between a dataset's label range and [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub lo: f64,
    pub hi: f64,
}

impl LabelScaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi == lo {
            return Err(Error::ZeroRange);
        }
        Ok(LabelScaler { lo, hi })
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.lo) / (self.hi - self.lo)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * (self.hi - self.lo) + self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub label_range: (f64, f64),
    pub target_dims: Vec<String>,
    pub records: Vec<ImageRecord>,
    /// Original label range when labels have been mapped to [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_from: Option<(f64, f64)>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// Split sidecar: enough to reproduce a partition exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub ratio: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitRecord {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|source| Error::UnwritablePath {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Loads and validates a CSV manifest without touching the images.
pub fn load_manifest(path: impl AsRef<Path>, profile: &DatasetProfile) -> Result<DatasetManifest> {
    load_manifest_with(path, profile, false)
}

/// Like [`load_manifest`]; with `validate_images` every image is decoded
/// once and failures surface as [`Error::UnreadableImage`].
pub fn load_manifest_with(
    path: impl AsRef<Path>,
    profile: &DatasetProfile,
    validate_images: bool,
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = File::open(path)?;
    let manifest = DatasetManifest::from_reader(file, profile, root)?;
    if validate_images {
        for rec in &manifest.records {
            let full = manifest.resolve(rec);
            image::open(&full).map_err(|e| Error::UnreadableImage {
                path: full.clone(),
                reason: e.to_string(),
            })?;
        }
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn from_reader(
        reader: impl Read,
        profile: &DatasetProfile,
        root: PathBuf,
    ) -> Result<DatasetManifest> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = csv
            .headers()?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let image_col = column("image")?;
        let mos_col = column("mos")?;
        let dims = profile.target_dims();
        let aux_cols = dims
            .iter()
            .filter(|d| d.as_str() != QUALITY)
            .map(|d| Ok((d.clone(), column(d)?)))
            .collect::<Result<Vec<_>>>()?;

        let (lo, hi) = profile.label_range();
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (i, row) in csv.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let field = |col: usize| row.get(col).unwrap_or("");
            let label = |col: usize| -> Result<f64> {
                let raw = field(col);
                let value: f64 = raw.parse().map_err(|_| {
                    Error::InvalidScores(format!("row {line}: cannot parse label {raw:?}"))
                })?;
                if !(value.is_finite() && value >= lo && value <= hi) {
                    return Err(Error::OutOfRangeLabel {
                        row: line,
                        value,
                        lo,
                        hi,
                    });
                }
                Ok(value)
            };
            let image = field(image_col).to_string();
            if image.is_empty() {
                return Err(Error::InvalidScores(format!("row {line}: empty image path")));
            }
            let mos = label(mos_col)?;
            let mut aux_scores = BTreeMap::new();
            for (name, col) in &aux_cols {
                aux_scores.insert(name.clone(), label(*col)?);
            }
            if !seen.insert(image.clone()) {
                return Err(Error::DuplicateRecord(image));
            }
            records.push(ImageRecord {
                image,
                mos,
                aux_scores,
                split: Split::Train,
            });
        }
        if let Some(expected) = profile.expected_records() {
            if records.len() != expected {
                log::warn!(
                    "{} manifest has {} records, the full dataset has {expected}",
                    profile.name(),
                    records.len()
                );
            }
        }
        Ok(DatasetManifest {
            name: profile.name().to_string(),
            label_range: (lo, hi),
            target_dims: dims,
            records,
            normalized_from: None,
            root,
        })
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.image)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn scaler(&self) -> Result<LabelScaler> {
        let (lo, hi) = self.normalized_from.unwrap_or(self.label_range);
        LabelScaler::new(lo, hi)
    }

    /// Shuffles records with a seeded RNG and assigns the first
    /// `floor(ratio·n)` (clamped to `[1, n-1]`) to train, the rest to test.
    pub fn make_split(&self, ratio: f64, seed: u64) -> Result<(DatasetManifest, SplitRecord)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidRatio(ratio));
        }
        let n = self.records.len();
        if n == 0 {
            return Err(Error::EmptySplit("train"));
        }
        if n == 1 {
            return Err(Error::EmptySplit("test"));
        }
        let n_train = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut out = self.clone();
        for (rank, &idx) in order.iter().enumerate() {
            out.records[idx].split = if rank < n_train { Split::Train } else { Split::Test };
        }
        let ids = |split| {
            out.records_in(split)
                .map(|r| r.image.clone())
                .collect::<Vec<_>>()
        };
        let record = SplitRecord {
            seed,
            ratio,
            train_ids: ids(Split::Train),
            test_ids: ids(Split::Test),
        };
        Ok((out, record))
    }

    /// Reassigns splits from a sidecar; the sidecar must partition exactly
    /// this manifest's records.
    pub fn apply_split(&self, split: &SplitRecord) -> Result<DatasetManifest> {
        let train: HashSet<&str> = split.train_ids.iter().map(String::as_str).collect();
        let test: HashSet<&str> = split.test_ids.iter().map(String::as_str).collect();
        if train.len() + test.len() != self.records.len() || !train.is_disjoint(&test) {
            return Err(Error::InvalidConfig(
                "split sidecar does not partition the manifest".into(),
            ));
        }
        let mut out = self.clone();
        for rec in &mut out.records {
            rec.split = if train.contains(rec.image.as_str()) {
                Split::Train
            } else if test.contains(rec.image.as_str()) {
                Split::Test
            } else {
                return Err(Error::InvalidConfig(format!(
                    "record {:?} missing from split sidecar",
                    rec.image
                )));
            };
        }
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        if test.is_empty() {
            return Err(Error::EmptySplit("test"));
        }
        Ok(out)
    }

    /// Maps every label to [0, 1] via `(y - lo) / (hi - lo)`.
    pub fn normalize_labels(&self) -> Result<DatasetManifest> {
        if self.normalized_from.is_some() {
            return Ok(self.clone());
        }
        let scaler = LabelScaler::new(self.label_range.0, self.label_range.1)?;
        let mut out = self.clone();
        for rec in &mut out.records {
            rec.mos = scaler.normalize(rec.mos);
            for v in rec.aux_scores.values_mut() {
                *v = scaler.normalize(*v);
            }
        }
        out.label_range = (0.0, 1.0);
        out.normalized_from = Some(self.label_range);
        Ok(out)
    }

    pub fn denormalize_labels(&self) -> Result<DatasetManifest> {
        let Some(original) = self.normalized_from else {
            return Ok(self.clone());
        };
        let scaler = LabelScaler::new(original.0, original.1)?;
        let mut out = self.clone();
        for rec in &mut out.records {
            rec.mos = scaler.denormalize(rec.mos);
            for v in rec.aux_scores.values_mut() {
                *v = scaler.denormalize(*v);
            }
        }
        out.label_range = original;
        out.normalized_from = None;
        Ok(out)
    }
}
