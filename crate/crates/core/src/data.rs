//! Datasets and the contribution-workflow split.
//!
//! A [`Dataset`] is a bag of labeled feature vectors with stable unique ids.
//! Ids are assigned once, at synthesis or ingestion, and survive every later
//! subset/union/perturbation, which is what lets the compensation mechanism
//! track a contributor's points through retraining.
//!
//! Sources:
//! - [`synth_blobs`] — per-class isotropic Gaussians clipped to `[0,1]^dim`;
//! - [`load_idx`] — big-endian IDX image/label pairs scaled by 1/255;
//! - [`load_csv`] — `label,f0,f1,...` text files.
//!
//! [`split_contribution`] carves one pool into the five sets of the two-round
//! contribution workflow plus a remainder that serves as the attacker's
//! distribution-matched shadow pool.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::snapshot;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Where a point entered the workflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Part of the initial (round-0) training corpus.
    Original,
    /// Benign contribution added in round 1.
    BenignNew,
    /// Contribution controlled by the adversary.
    Adversary,
    /// Held-out validation point.
    Validation,
    /// Distribution-matched pool available for shadow-model training.
    ShadowPool,
}

/// One labeled feature vector with a stable id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: u64,
    pub label: usize,
    pub provenance: Provenance,
    pub features: Vec<f64>,
}

/// A set of points sharing a feature dimension and class count.
///
/// Invariants (enforced by [`Dataset::new`] and re-checked when loading a
/// snapshot): ids are unique, every feature vector has length `dim`, every
/// label is `< classes`, and every feature value is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, points: Vec<DataPoint>) -> Result<Self> {
        let d = Dataset {
            dim,
            classes,
            points,
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CoreError::Param("dataset dim must be positive".into()));
        }
        if self.classes < 2 {
            return Err(CoreError::Param(
                "dataset needs at least two classes".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(self.points.len());
        for p in &self.points {
            if !seen.insert(p.id) {
                return Err(CoreError::Param(format!("duplicate point id {}", p.id)));
            }
            if p.features.len() != self.dim {
                return Err(CoreError::DimMismatch(format!(
                    "point {} has {} features, dataset dim is {}",
                    p.id,
                    p.features.len(),
                    self.dim
                )));
            }
            if p.label >= self.classes {
                return Err(CoreError::Param(format!(
                    "point {} has label {} but dataset has {} classes",
                    p.id, p.label, self.classes
                )));
            }
            if p.features.iter().any(|f| !f.is_finite()) {
                return Err(CoreError::NonFinite(format!("features of point {}", p.id)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> &DataPoint {
        &self.points[idx]
    }

    pub fn ids(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.id).collect()
    }

    /// Position of a point by id, if present.
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.points.iter().position(|p| p.id == id)
    }

    /// New dataset holding clones of the selected positions (ids preserved).
    pub fn subset_by_indices(&self, indices: &[usize]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self
                .points
                .get(i)
                .ok_or_else(|| CoreError::Param(format!("subset index {i} out of range")))?;
            points.push(p.clone());
        }
        Dataset::new(self.dim, self.classes, points)
    }

    /// Concatenate two id-disjoint datasets with matching shape.
    pub fn union(&self, other: &Dataset) -> Result<Self> {
        if self.dim != other.dim || self.classes != other.classes {
            return Err(CoreError::DimMismatch(
                "union of datasets with different shapes".into(),
            ));
        }
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        Dataset::new(self.dim, self.classes, points)
    }

    /// A copy with every point's provenance replaced.
    fn with_provenance(mut self, p: Provenance) -> Self {
        for point in &mut self.points {
            point.provenance = p;
        }
        self
    }

    /// A copy with new feature vectors, preserving ids/labels/provenance.
    /// `features[i]` replaces the features of `points()[i]`.
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.points.len() {
            return Err(CoreError::DimMismatch(format!(
                "{} feature vectors for {} points",
                features.len(),
                self.points.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(features)
            .map(|(p, f)| DataPoint {
                features: f,
                ..p.clone()
            })
            .collect();
        Dataset::new(self.dim, self.classes, points)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        snapshot::save_versioned(path, self)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let d: Dataset = snapshot::load_versioned(path)?;
        d.validate()?;
        Ok(d)
    }
}

/// Sizes of the five contribution-workflow sets.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    /// Initial training corpus.
    pub z0: usize,
    /// Benign round-1 contributions.
    pub z1_new: usize,
    /// Adversary-controlled round-1 contributions.
    pub z1_adv: usize,
    /// Round-0 validation set.
    pub v0: usize,
    /// Round-1 validation set (the one the payout is computed on).
    pub v1: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.z0 + self.z1_new + self.z1_adv + self.v0 + self.v1
    }
}

/// The two-round contribution workflow materialized as disjoint datasets.
///
/// `z0` is reused wholesale in round 1: the round-1 training set is
/// `z0 ∪ z1_new ∪ (adversary points)`, assembled by [`assemble_training`].
/// `remainder` holds every pool point not drawn into the five sets and is
/// what a distribution-matched attacker trains shadow models on.
#[derive(Clone, Debug)]
pub struct ContributionSplit {
    pub z0: Dataset,
    pub z1_new: Dataset,
    pub z1_adv: Dataset,
    pub v0: Dataset,
    pub v1: Dataset,
    pub remainder: Dataset,
}

/// Per-class isotropic Gaussian blobs clipped to the unit box.
///
/// Labels are assigned round-robin (`i % classes`), so counts per class are
/// balanced within one. Class centers are drawn uniformly from
/// `[0.2, 0.8]^dim` and redrawn (up to a fixed retry budget) until they are
/// pairwise at least `4 * spread` apart, which keeps random seeds from
/// producing accidentally inseparable problems. Deterministic per seed.
pub fn synth_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(CoreError::Param("blob count must be positive".into()));
    }
    if classes < 2 {
        return Err(CoreError::Param("blobs need at least two classes".into()));
    }
    if dim == 0 {
        return Err(CoreError::Param("blob dim must be positive".into()));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(CoreError::Param(format!("invalid spread {spread}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for _attempt in 0..64 {
        centers = (0..classes)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.2..0.8)).collect())
            .collect();
        let min_dist = pairwise_min_distance(&centers);
        if min_dist >= 4.0 * spread {
            break;
        }
    }

    let points = (0..n)
        .map(|i| {
            let label = i % classes;
            let features = centers[label]
                .iter()
                .map(|&c| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (c + spread * noise).clamp(0.0, 1.0)
                })
                .collect();
            DataPoint {
                id: i as u64,
                label,
                provenance: Provenance::Original,
                features,
            }
        })
        .collect();
    Dataset::new(dim, classes, points)
}

fn pairwise_min_distance(centers: &[Vec<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min = min.min(d);
        }
    }
    min
}

/// Shuffle the pool once and deal consecutive chunks into the five sets.
///
/// Provenance is retagged per destination; ids are untouched, so the five
/// sets plus the remainder partition the pool's id space.
pub fn split_contribution(d: &Dataset, sizes: &SplitSizes, seed: u64) -> Result<ContributionSplit> {
    if sizes.total() > d.len() {
        return Err(CoreError::Param(format!(
            "split needs {} points but the pool has {}",
            sizes.total(),
            d.len()
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut cursor = 0usize;
    let mut take = |count: usize| -> Vec<usize> {
        let slice = order[cursor..cursor + count].to_vec();
        cursor += count;
        slice
    };
    let z0 = d
        .subset_by_indices(&take(sizes.z0))?
        .with_provenance(Provenance::Original);
    let z1_new = d
        .subset_by_indices(&take(sizes.z1_new))?
        .with_provenance(Provenance::BenignNew);
    let z1_adv = d
        .subset_by_indices(&take(sizes.z1_adv))?
        .with_provenance(Provenance::Adversary);
    let v0 = d
        .subset_by_indices(&take(sizes.v0))?
        .with_provenance(Provenance::Validation);
    let v1 = d
        .subset_by_indices(&take(sizes.v1))?
        .with_provenance(Provenance::Validation);
    let remainder = d
        .subset_by_indices(&order[cursor..])?
        .with_provenance(Provenance::ShadowPool);

    Ok(ContributionSplit {
        z0,
        z1_new,
        z1_adv,
        v0,
        v1,
        remainder,
    })
}

/// Assemble the round-1 training set: the persisted round-0 corpus, the new
/// benign contributions, and whichever adversary set (clean or manipulated)
/// the experiment arm calls for.
pub fn assemble_training(z0: &Dataset, z1_new: &Dataset, adversary: &Dataset) -> Result<Dataset> {
    z0.union(z1_new)?.union(adversary)
}

/// Load an IDX image/label pair (the classic big-endian format) into a
/// dataset with features scaled to `[0,1]` by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images_bytes = fs::read(images_path)?;
    let labels_bytes = fs::read(labels_path)?;
    parse_idx(
        &images_bytes,
        &labels_bytes,
        &images_path.display().to_string(),
        &labels_path.display().to_string(),
    )
}

/// Parse an IDX image/label pair from in-memory buffers.
pub fn parse_idx(
    images_bytes: &[u8],
    labels_bytes: &[u8],
    images_name: &str,
    labels_name: &str,
) -> Result<Dataset> {
    let mut r = images_bytes;
    let magic = read_u32(&mut r, images_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CoreError::IdxMagic {
            path: images_name.to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut r, images_name)? as u64;
    let rows = read_u32(&mut r, images_name)? as u64;
    let cols = read_u32(&mut r, images_name)? as u64;
    let expected = count * rows * cols;
    if (r.len() as u64) < expected {
        return Err(CoreError::TruncatedPayload {
            path: images_name.to_string(),
            expected,
            found: r.len() as u64,
        });
    }
    if (r.len() as u64) > expected {
        return Err(CoreError::Param(format!(
            "{images_name}: {} trailing bytes after image payload",
            r.len() as u64 - expected
        )));
    }
    let pixels = r;

    let mut r = labels_bytes;
    let magic = read_u32(&mut r, labels_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CoreError::IdxMagic {
            path: labels_name.to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32(&mut r, labels_name)? as u64;
    if label_count != count {
        return Err(CoreError::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if (r.len() as u64) < label_count {
        return Err(CoreError::TruncatedPayload {
            path: labels_name.to_string(),
            expected: label_count,
            found: r.len() as u64,
        });
    }
    if (r.len() as u64) > label_count {
        return Err(CoreError::Param(format!(
            "{labels_name}: {} trailing bytes after label payload",
            r.len() as u64 - label_count
        )));
    }
    let labels = r;

    let dim = (rows * cols) as usize;
    let classes = labels.iter().map(|&l| l as usize).max().unwrap_or(0) + 1;
    let points = (0..count as usize)
        .map(|i| DataPoint {
            id: i as u64,
            label: labels[i] as usize,
            provenance: Provenance::Original,
            features: pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect(),
        })
        .collect();
    Dataset::new(dim, classes.max(2), points)
}

fn read_u32(r: &mut &[u8], path: &str) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|_| CoreError::TruncatedPayload {
        path: path.to_string(),
        expected: 4,
        found: 0,
    })
}

/// Load a `label,f0,f1,...,f{d-1}` CSV with exactly that header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CoreError::Csv {
            line: 0,
            reason: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| CoreError::Csv {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || &headers[0] != "label" {
        return Err(CoreError::Csv {
            line: 1,
            reason: "first column must be `label`".into(),
        });
    }
    let dim = headers.len() - 1;
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{i}") {
            return Err(CoreError::Csv {
                line: 1,
                reason: format!("expected header `f{i}`, found `{h}`"),
            });
        }
    }
    if dim == 0 {
        return Err(CoreError::Csv {
            line: 1,
            reason: "no feature columns".into(),
        });
    }

    let mut points = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| CoreError::Csv {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != dim + 1 {
            return Err(CoreError::Csv {
                line,
                reason: format!("expected {} fields, found {}", dim + 1, record.len()),
            });
        }
        let label: usize = record[0].trim().parse().map_err(|_| CoreError::Csv {
            line,
            reason: format!("bad label `{}`", &record[0]),
        })?;
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let v: f64 = record[j + 1].trim().parse().map_err(|_| CoreError::Csv {
                line,
                reason: format!("bad float `{}` in f{j}", &record[j + 1]),
            })?;
            if !v.is_finite() {
                return Err(CoreError::Csv {
                    line,
                    reason: format!("non-finite value in f{j}"),
                });
            }
            features.push(v);
        }
        points.push(DataPoint {
            id: idx as u64,
            label,
            provenance: Provenance::Original,
            features,
        });
    }
    let classes = points.iter().map(|p| p.label).max().unwrap_or(0) + 1;
    Dataset::new(dim, classes.max(2), points)
}
