//! Labeled images, dataset manifests, predictions, and seeded subsampling.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("manifest file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest at line {line}, field `{field}`: {message}")]
    MalformedManifest {
        field: String,
        line: usize,
        message: String,
    },
    #[error("split index {index} in `{split}` is out of range ({len} entries)")]
    IndexOutOfRange { split: String, index: usize, len: usize },
    #[error("train and test splits overlap at entry {0}")]
    SplitOverlap(usize),
    #[error("train needs both classes")]
    MissingClass,
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("entry `{id}`: {message}")]
    InvalidEntry { id: String, message: String },
    #[error("too few items: {0}")]
    TooFewItems(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image `{id}`: {source}")]
    Image {
        id: String,
        #[source]
        source: RasterError,
    },
}

/// Binary label, serialized as `1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    /// Accepts `1`, `-1`, and the external `0` convention for negatives.
    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Positive),
            -1 | 0 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// BCE target: +1 → 1.0, −1 → 0.0.
    pub fn target(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.as_i8())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_i64(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 1 or -1, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Aquaculture,
    Eelgrass,
    Solar,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Aquaculture, DatasetKind::Eelgrass, DatasetKind::Solar];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Aquaculture => "aquaculture",
            DatasetKind::Eelgrass => "eelgrass",
            DatasetKind::Solar => "solar",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DatasetKind::Aquaculture => "Aquaculture",
            DatasetKind::Eelgrass => "Eelgrass",
            DatasetKind::Solar => "Solar",
        }
    }

    /// Whether images of this kind carry geospatial metadata and map tools.
    pub fn is_geospatial(self) -> bool {
        self == DatasetKind::Aquaculture
    }

    /// Short noun phrase for the positive class, used in prompts and templates.
    pub fn target_phrase(self) -> &'static str {
        match self {
            DatasetKind::Aquaculture => "aquaculture ponds",
            DatasetKind::Eelgrass => "eelgrass wasting disease",
            DatasetKind::Solar => "solar panels",
        }
    }

    /// Label texts for zero-shot text–image classification.
    pub fn zeroshot_texts(self) -> (&'static str, &'static str) {
        match self {
            DatasetKind::Aquaculture => (
                "a satellite image containing aquaculture ponds",
                "a satellite image without aquaculture ponds",
            ),
            DatasetKind::Eelgrass => (
                "a photo of an eelgrass blade with wasting disease lesions",
                "a photo of a healthy eelgrass blade",
            ),
            DatasetKind::Solar => (
                "a satellite image containing solar panels",
                "a satellite image without solar panels",
            ),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aquaculture" => Ok(DatasetKind::Aquaculture),
            "eelgrass" => Ok(DatasetKind::Eelgrass),
            "solar" => Ok(DatasetKind::Solar),
            other => Err(DomainError::InvalidArgument(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    pub lat: f64,
    pub lon: f64,
    pub zoom: u8,
}

impl GeoTag {
    pub fn validate(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("lat {} outside [-90, 90]", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("lon {} outside [-180, 180]", self.lon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: Raster,
    pub label: Label,
    pub geo: Option<GeoTag>,
    pub source_path: String,
}

/// One line of the manifest's `entries` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<u8>,
}

impl ManifestEntry {
    pub fn geo(&self) -> Option<GeoTag> {
        match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Some(GeoTag {
                lat,
                lon,
                zoom: self.zoom.unwrap_or(DEFAULT_ZOOM),
            }),
            _ => None,
        }
    }
}

/// Zoom assumed for geotagged entries that omit it.
pub const DEFAULT_ZOOM: u8 = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_fraction_hint: Option<f64>,
    pub entries: Vec<ManifestEntry>,
    pub splits: Splits,
    /// Directory that relative entry paths resolve against. Not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(DomainError::DuplicateId(e.id.clone()));
            }
            if e.lat.is_some() != e.lon.is_some() {
                return Err(DomainError::InvalidEntry {
                    id: e.id.clone(),
                    message: "lat and lon must be given together".into(),
                });
            }
            if let Some(g) = e.geo() {
                g.validate().map_err(|message| DomainError::InvalidEntry {
                    id: e.id.clone(),
                    message,
                })?;
            }
        }
        if let Some(h) = self.positive_fraction_hint {
            if !(h > 0.0 && h < 1.0) {
                return Err(DomainError::MalformedManifest {
                    field: "positive_fraction_hint".into(),
                    line: 0,
                    message: format!("{h} not in (0, 1)"),
                });
            }
        }
        let len = self.entries.len();
        for (split, idx) in [("train", &self.splits.train), ("test", &self.splits.test)] {
            for &i in idx.iter() {
                if i >= len {
                    return Err(DomainError::IndexOutOfRange {
                        split: split.into(),
                        index: i,
                        len,
                    });
                }
            }
        }
        let train: HashSet<usize> = self.splits.train.iter().copied().collect();
        if let Some(&i) = self.splits.test.iter().find(|i| train.contains(i)) {
            return Err(DomainError::SplitOverlap(i));
        }
        let pos = self.splits.train.iter().filter(|&&i| self.entries[i].label.is_positive()).count();
        if pos == 0 || pos == self.splits.train.len() {
            return Err(DomainError::MissingClass);
        }
        Ok(())
    }

    pub fn entry(&self, index: usize) -> &ManifestEntry {
        &self.entries[index]
    }

    pub fn find(&self, id: &str) -> Option<(usize, &ManifestEntry)> {
        self.entries.iter().enumerate().find(|(_, e)| e.id == id)
    }

    pub fn resolve_path(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn read_image_bytes(&self, index: usize) -> Result<Vec<u8>, DomainError> {
        let path = self.resolve_path(&self.entries[index]);
        std::fs::read(&path).map_err(|source| DomainError::Io { path, source })
    }

    /// Reads and decodes the image of entry `index`.
    pub fn load_image(&self, index: usize) -> Result<LabeledImage, DomainError> {
        let e = &self.entries[index];
        let bytes = self.read_image_bytes(index)?;
        let pixels = Raster::decode(&bytes).map_err(|source| DomainError::Image {
            id: e.id.clone(),
            source,
        })?;
        Ok(LabeledImage {
            id: e.id.clone(),
            pixels,
            label: e.label,
            geo: e.geo(),
            source_path: e.path.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Parses and validates manifest JSON. Relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, DomainError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut manifest: DatasetManifest = serde_path_to_error::deserialize(de).map_err(|err| {
            let field = err.path().to_string();
            let inner = err.into_inner();
            DomainError::MalformedManifest {
                field,
                line: inner.line(),
                message: inner.to_string(),
            }
        })?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Loads and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DomainError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DomainError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| DomainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::from_json(&text, base)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), DomainError> {
    let path = path.as_ref();
    std::fs::write(path, manifest.to_json()).map_err(|source| DomainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A classifier output. `score` is the probability of the positive class and is
/// what ranking metrics consume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub confidence: f64,
    pub score: f64,
    #[serde(default)]
    pub inconclusive: bool,
}

impl Prediction {
    /// Prediction from a label and the confidence in that label.
    pub fn new(label: Label, confidence: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DomainError::InvalidArgument(format!("confidence {confidence} outside [0, 1]")));
        }
        let score = if label.is_positive() { confidence } else { 1.0 - confidence };
        Ok(Self {
            label,
            confidence,
            score,
            inconclusive: false,
        })
    }

    /// Prediction from a label and a probability-of-positive score.
    pub fn from_score(label: Label, score: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DomainError::InvalidArgument(format!("score {score} outside [0, 1]")));
        }
        let confidence = if label.is_positive() { score } else { 1.0 - score };
        Ok(Self {
            label,
            confidence,
            score,
            inconclusive: false,
        })
    }

    /// Recorded when the agent never produced a parseable answer.
    pub fn inconclusive() -> Self {
        Self {
            label: Label::Negative,
            confidence: 0.5,
            score: 0.5,
            inconclusive: true,
        }
    }
}

fn target_count(fraction: f64, n: usize) -> usize {
    // guard against 0.2 * 10 = 2.0000000000000004
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Seeded stratified subsample of the train split.
///
/// Returns `ceil(fraction * |train|)` indices in train-split order, with each
/// class represented in proportion (to within one item) and at least once.
pub fn subsample_labeled(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<Vec<usize>, DomainError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DomainError::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    let train = &manifest.splits.train;
    if fraction == 1.0 {
        return Ok(train.clone());
    }
    let n = target_count(fraction, train.len());
    if n < 2 {
        return Err(DomainError::TooFewItems(format!(
            "fraction {fraction} of {} train items leaves {n}",
            train.len()
        )));
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        train.iter().partition(|&&i| manifest.entries[i].label.is_positive());
    if pos.is_empty() || neg.is_empty() {
        return Err(DomainError::TooFewItems("train split lacks a class".into()));
    }
    let ideal = n as f64 * pos.len() as f64 / train.len() as f64;
    let mut n_pos = (ideal.round() as usize).clamp(1, pos.len());
    if n - n_pos > neg.len() {
        n_pos = n - neg.len();
    }
    if n_pos >= n {
        n_pos = n - 1;
    }
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 || n_pos > pos.len() || n_neg > neg.len() {
        return Err(DomainError::TooFewItems("sample would lack a class".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let chosen: HashSet<usize> = pos[..n_pos].iter().chain(&neg[..n_neg]).copied().collect();
    Ok(train.iter().copied().filter(|i| chosen.contains(i)).collect())
}

/// Seeded uniform sample of `n` test indices without replacement, in test-split order.
pub fn subsample_test(manifest: &DatasetManifest, n: usize, seed: u64) -> Result<Vec<usize>, DomainError> {
    let test = &manifest.splits.test;
    if n > test.len() {
        return Err(DomainError::TooFewItems(format!("requested {n} of {} test items", test.len())));
    }
    if n == test.len() {
        return Ok(test.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..test.len()).collect();
    positions.shuffle(&mut rng);
    let mut picked = positions[..n].to_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|p| test[p]).collect())
}
