use std::cmp::Ordering;
use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{cosine_with_norms, EmbeddingCache, EmbeddingError, EmbeddingProvider, EmbeddingVector, ProviderError};
use crate::domain::{DatasetManifest, Label};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEmbedding {
    pub id: String,
    pub vector: EmbeddingVector,
    #[serde(skip)]
    norm: f64,
}

impl StoredEmbedding {
    pub fn new(id: impl Into<String>, vector: EmbeddingVector) -> Self {
        let norm = vector.norm();
        Self {
            id: id.into(),
            vector,
            norm,
        }
    }
}

/// Labeled training embeddings split into positive and negative partitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingStore {
    dim: usize,
    positives: Vec<StoredEmbedding>,
    negatives: Vec<StoredEmbedding>,
}

/// The most similar member of each partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisragHit {
    pub pos_id: String,
    pub pos_similarity: f64,
    pub neg_id: String,
    pub neg_similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub id: &'a str,
    pub label: Label,
    pub similarity: f64,
}

/// Higher similarity first, then lower id.
fn better(sim: f64, id: &str, best_sim: f64, best_id: &str) -> bool {
    sim > best_sim || (sim == best_sim && id < best_id)
}

impl EmbeddingStore {
    /// Builds a store; both partitions must be non-empty and share one dimension.
    pub fn new(
        positives: Vec<(String, EmbeddingVector)>,
        negatives: Vec<(String, EmbeddingVector)>,
    ) -> Result<Self, EmbeddingError> {
        if positives.is_empty() {
            return Err(EmbeddingError::EmptyPartition("positive"));
        }
        if negatives.is_empty() {
            return Err(EmbeddingError::EmptyPartition("negative"));
        }
        let dim = positives[0].1.dim();
        let mut seen = HashSet::new();
        for (id, v) in positives.iter().chain(&negatives) {
            if v.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::Cache {
                    path: "<store>".into(),
                    message: format!("duplicate id `{id}`"),
                });
            }
        }
        let wrap = |v: Vec<(String, EmbeddingVector)>| v.into_iter().map(|(id, e)| StoredEmbedding::new(id, e)).collect();
        Ok(Self {
            dim,
            positives: wrap(positives),
            negatives: wrap(negatives),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positives(&self) -> &[StoredEmbedding] {
        &self.positives
    }

    pub fn negatives(&self) -> &[StoredEmbedding] {
        &self.negatives
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All stored vectors with their labels, in partition order (positives first).
    pub fn iter(&self) -> impl Iterator<Item = (&StoredEmbedding, Label)> {
        self.positives
            .iter()
            .map(|e| (e, Label::Positive))
            .chain(self.negatives.iter().map(|e| (e, Label::Negative)))
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), EmbeddingError> {
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok(())
    }

    fn argmax<'a>(
        partition: &'a [StoredEmbedding],
        query: &EmbeddingVector,
        q_norm: f64,
        name: &'static str,
    ) -> Result<(&'a str, f64), EmbeddingError> {
        let mut best: Option<(&str, f64)> = None;
        for e in partition {
            let sim = cosine_with_norms(query.values(), q_norm, e.vector.values(), e.norm);
            match best {
                Some((bid, bsim)) if !better(sim, &e.id, bsim, bid) => {}
                _ => best = Some((&e.id, sim)),
            }
        }
        best.ok_or(EmbeddingError::EmptyPartition(name))
    }

    /// Most similar positive and most similar negative example for `query`.
    pub fn retrieve_visrag(&self, query: &EmbeddingVector) -> Result<VisragHit, EmbeddingError> {
        self.check_query(query)?;
        let q_norm = query.norm();
        let (pos_id, pos_similarity) = Self::argmax(&self.positives, query, q_norm, "positive")?;
        let (neg_id, neg_similarity) = Self::argmax(&self.negatives, query, q_norm, "negative")?;
        Ok(VisragHit {
            pos_id: pos_id.to_string(),
            pos_similarity,
            neg_id: neg_id.to_string(),
            neg_similarity,
        })
    }

    /// Every stored vector ranked by similarity to `query` (ties by id).
    pub fn ranked(&self, query: &EmbeddingVector) -> Result<Vec<Neighbor<'_>>, EmbeddingError> {
        self.check_query(query)?;
        if self.is_empty() {
            return Err(EmbeddingError::EmptyStore);
        }
        let q_norm = query.norm();
        let mut out: Vec<Neighbor<'_>> = self
            .iter()
            .map(|(e, label)| Neighbor {
                id: &e.id,
                label,
                similarity: cosine_with_norms(query.values(), q_norm, e.vector.values(), e.norm),
            })
            .collect();
        out.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.id.cmp(b.id))
        });
        Ok(out)
    }

    /// Training pairs in store order, for fitting a probe.
    pub fn training_pairs(&self) -> Vec<(EmbeddingVector, Label)> {
        self.iter().map(|(e, l)| (e.vector.clone(), l)).collect()
    }
}

impl<'de> Deserialize<'de> for EmbeddingStore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            positives: Vec<StoredEmbedding>,
            negatives: Vec<StoredEmbedding>,
        }
        let raw = Raw::deserialize(d)?;
        let unwrap = |v: Vec<StoredEmbedding>| v.into_iter().map(|e| (e.id, e.vector)).collect();
        EmbeddingStore::new(unwrap(raw.positives), unwrap(raw.negatives)).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Concurrent provider requests.
    pub parallelism: usize,
    /// Extra attempts after a provider reports itself unavailable.
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            retries: 2,
            backoff: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub cached: usize,
    pub embedded: usize,
    pub failed: Vec<String>,
}

enum ItemOutcome {
    Cached(EmbeddingVector),
    Embedded(EmbeddingVector),
    Failed { unavailable: bool, attempts: u32, message: String },
}

fn embed_with_retry(
    provider: &dyn EmbeddingProvider,
    image: &Raster,
    opts: &BuildOptions,
) -> Result<EmbeddingVector, (bool, u32, String)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.embed_image(image) {
            Ok(v) => return Ok(v),
            Err(ProviderError::Unavailable(msg)) => {
                if attempt > opts.retries {
                    return Err((true, attempt, msg));
                }
                if !opts.backoff.is_zero() {
                    std::thread::sleep(opts.backoff * 2u32.saturating_pow(attempt - 1));
                }
            }
            Err(e) => return Err((false, attempt, e.to_string())),
        }
    }
}

fn embed_item(
    manifest: &DatasetManifest,
    index: usize,
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    opts: &BuildOptions,
) -> ItemOutcome {
    let entry = &manifest.entries[index];
    let bytes = match manifest.read_image_bytes(index) {
        Ok(b) => b,
        Err(e) => {
            return ItemOutcome::Failed {
                unavailable: false,
                attempts: 0,
                message: e.to_string(),
            }
        }
    };
    let sha = super::content_hash(&bytes);
    if let Some(v) = cache.and_then(|c| c.get(&sha)) {
        return ItemOutcome::Cached(v);
    }
    let image = match Raster::decode(&bytes) {
        Ok(r) => r,
        Err(e) => {
            return ItemOutcome::Failed {
                unavailable: false,
                attempts: 0,
                message: e.to_string(),
            }
        }
    };
    match embed_with_retry(provider, &image, opts) {
        Ok(v) => {
            if let Some(c) = cache {
                if let Err(e) = c.insert(&entry.id, &sha, &v) {
                    return ItemOutcome::Failed {
                        unavailable: false,
                        attempts: 1,
                        message: e.to_string(),
                    };
                }
            }
            ItemOutcome::Embedded(v)
        }
        Err((unavailable, attempts, message)) => ItemOutcome::Failed {
            unavailable,
            attempts,
            message,
        },
    }
}

/// Embeds the labeled train images and partitions them by label.
///
/// Vectors are looked up in `cache` by content hash first; fresh embeddings are
/// appended to it. Requests run on up to `opts.parallelism` threads.
pub fn build_store(
    manifest: &DatasetManifest,
    labeled: &[usize],
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    opts: &BuildOptions,
) -> Result<(EmbeddingStore, BuildReport), EmbeddingError> {
    let train: HashSet<usize> = manifest.splits.train.iter().copied().collect();
    if let Some(&bad) = labeled.iter().find(|i| !train.contains(i)) {
        let id = manifest
            .entries
            .get(bad)
            .map(|e| e.id.clone())
            .unwrap_or_else(|| format!("#{bad}"));
        return Err(EmbeddingError::NotInTrain(id));
    }

    let outcomes: Mutex<Vec<Option<ItemOutcome>>> = Mutex::new((0..labeled.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, labeled.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let slot = next.fetch_add(1, AtomicOrdering::SeqCst);
                if slot >= labeled.len() {
                    break;
                }
                let out = embed_item(manifest, labeled[slot], provider, cache, opts);
                outcomes.lock().unwrap()[slot] = Some(out);
            });
        }
    });

    let mut report = BuildReport::default();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut all_unavailable = true;
    let mut max_attempts = 0;
    let mut last_message = String::new();
    for (slot, out) in outcomes.into_inner().unwrap().into_iter().enumerate() {
        let entry = &manifest.entries[labeled[slot]];
        let vector = match out.expect("every slot processed") {
            ItemOutcome::Cached(v) => {
                report.cached += 1;
                v
            }
            ItemOutcome::Embedded(v) => {
                report.embedded += 1;
                v
            }
            ItemOutcome::Failed {
                unavailable,
                attempts,
                message,
            } => {
                all_unavailable &= unavailable;
                max_attempts = max_attempts.max(attempts);
                last_message = message;
                report.failed.push(entry.id.clone());
                continue;
            }
        };
        match entry.label {
            Label::Positive => positives.push((entry.id.clone(), vector)),
            Label::Negative => negatives.push((entry.id.clone(), vector)),
        }
    }
    if !report.failed.is_empty() {
        if all_unavailable && report.failed.len() == labeled.len() {
            return Err(EmbeddingError::ProviderUnavailable {
                attempts: max_attempts,
                message: last_message,
            });
        }
        return Err(EmbeddingError::PartialFailure { failed: report.failed });
    }
    let store = EmbeddingStore::new(positives, negatives)?;
    Ok((store, report))
}
