//! Contribution scoring: how much is each training point worth to each
//! validation point?
//!
//! Four scorers share one output type, [`ContributionMatrix`]:
//!
//! * [`influence_function`] — curvature-aware scores via conjugate-gradient
//!   solves against the training-loss Hessian;
//! * [`grad_dot`] — the cheap first-order special case (identity curvature);
//! * [`trak`] — randomly projected margin-gradient kernel scores, optionally
//!   averaged over an ensemble of independently trained models;
//! * [`data_shapley`] — permutation-sampled marginal retraining value.
//!
//! All four use the same orientation: **larger values mean more positively
//! influential**, so downstream ranking always sorts descending. Every entry
//! is finite by construction; matrices persist to a compact self-describing
//! binary format with an optional JSON sidecar for run metadata.

mod cg;
mod graddot;
mod influence;
mod shapley;
mod trak;

pub use cg::CgConfig;
pub use graddot::grad_dot;
pub use influence::influence_function;
pub use shapley::{data_shapley, data_shapley_exact, ShapleyConfig, MAX_SHAPLEY_POINTS};
pub use trak::{train_trak_ensemble, trak, ProjectionKind, TrakConfig};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

const MATRIX_MAGIC: &[u8; 4] = b"TAUB";
const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    InfluenceFunction,
    GradDot,
    Trak,
    DataShapley,
}

impl AttributionMethod {
    fn to_byte(self) -> u8 {
        match self {
            AttributionMethod::InfluenceFunction => 0,
            AttributionMethod::GradDot => 1,
            AttributionMethod::Trak => 2,
            AttributionMethod::DataShapley => 3,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => AttributionMethod::InfluenceFunction,
            1 => AttributionMethod::GradDot,
            2 => AttributionMethod::Trak,
            3 => AttributionMethod::DataShapley,
            other => {
                return Err(CoreError::Serde(format!(
                    "unknown attribution method tag {other}"
                )))
            }
        })
    }
}

impl std::fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AttributionMethod::InfluenceFunction => "influence_function",
            AttributionMethod::GradDot => "grad_dot",
            AttributionMethod::Trak => "trak",
            AttributionMethod::DataShapley => "data_shapley",
        };
        f.write_str(name)
    }
}

/// Orientation of the stored scores. There is a single convention today;
/// the tag exists so persisted artifacts stay self-describing if another
/// orientation is ever added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// Larger score ⇒ more positively influential; rank descending.
    LargerIsMoreInfluential,
}

/// Dense score matrix with rows indexed by training ids and columns by
/// validation ids, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    method: AttributionMethod,
    sign: SignConvention,
    train_ids: Vec<u64>,
    val_ids: Vec<u64>,
    values: Vec<f64>,
    /// Validation ids whose linear solve stopped at the iteration cap rather
    /// than the residual tolerance (influence-function scorer only).
    unconverged_val_ids: Vec<u64>,
}

impl ContributionMatrix {
    pub fn new(
        method: AttributionMethod,
        train_ids: Vec<u64>,
        val_ids: Vec<u64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::with_unconverged(method, train_ids, val_ids, values, Vec::new())
    }

    pub fn with_unconverged(
        method: AttributionMethod,
        train_ids: Vec<u64>,
        val_ids: Vec<u64>,
        values: Vec<f64>,
        unconverged_val_ids: Vec<u64>,
    ) -> Result<Self> {
        if values.len() != train_ids.len() * val_ids.len() {
            return Err(CoreError::DimMismatch(format!(
                "{} values for a {}×{} contribution matrix",
                values.len(),
                train_ids.len(),
                val_ids.len()
            )));
        }
        let unique_train: HashSet<_> = train_ids.iter().collect();
        let unique_val: HashSet<_> = val_ids.iter().collect();
        if unique_train.len() != train_ids.len() || unique_val.len() != val_ids.len() {
            return Err(CoreError::Param(
                "contribution matrix ids must be unique per axis".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("contribution matrix".into()));
        }
        for id in &unconverged_val_ids {
            if !unique_val.contains(id) {
                return Err(CoreError::Param(format!(
                    "unconverged id {id} is not a validation column"
                )));
            }
        }
        Ok(ContributionMatrix {
            method,
            sign: SignConvention::LargerIsMoreInfluential,
            train_ids,
            val_ids,
            values,
            unconverged_val_ids,
        })
    }

    /// Assemble from per-validation-point columns (the natural unit of
    /// parallel work).
    pub(crate) fn from_columns(
        method: AttributionMethod,
        train_ids: Vec<u64>,
        val_ids: Vec<u64>,
        columns: Vec<Vec<f64>>,
        unconverged_val_ids: Vec<u64>,
    ) -> Result<Self> {
        let (n, v) = (train_ids.len(), val_ids.len());
        if columns.len() != v || columns.iter().any(|c| c.len() != n) {
            return Err(CoreError::DimMismatch(
                "column shapes do not match id lists".into(),
            ));
        }
        let mut values = vec![0.0; n * v];
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                values[i * v + j] = x;
            }
        }
        Self::with_unconverged(method, train_ids, val_ids, values, unconverged_val_ids)
    }

    pub fn method(&self) -> AttributionMethod {
        self.method
    }

    pub fn sign(&self) -> SignConvention {
        self.sign
    }

    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    pub fn n_val(&self) -> usize {
        self.val_ids.len()
    }

    pub fn train_ids(&self) -> &[u64] {
        &self.train_ids
    }

    pub fn val_ids(&self) -> &[u64] {
        &self.val_ids
    }

    pub fn unconverged_val_ids(&self) -> &[u64] {
        &self.unconverged_val_ids
    }

    /// Score of training row `i` on validation column `j`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.val_ids.len() + j]
    }

    /// All scores of one training point, in validation-column order.
    pub fn row(&self, i: usize) -> &[f64] {
        let v = self.val_ids.len();
        &self.values[i * v..(i + 1) * v]
    }

    /// All scores of one validation point, in training-row order.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.train_ids.len()).map(|i| self.value(i, j)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Write the compact binary representation.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MATRIX_MAGIC)?;
        w.write_u32::<LittleEndian>(MATRIX_VERSION)?;
        w.write_u8(self.method.to_byte())?;
        w.write_u8(0)?; // SignConvention::LargerIsMoreInfluential
        w.write_u64::<LittleEndian>(self.train_ids.len() as u64)?;
        w.write_u64::<LittleEndian>(self.val_ids.len() as u64)?;
        w.write_u64::<LittleEndian>(self.unconverged_val_ids.len() as u64)?;
        for &id in self.train_ids.iter().chain(&self.val_ids).chain(&self.unconverged_val_ids) {
            w.write_u64::<LittleEndian>(id)?;
        }
        for &v in &self.values {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write the binary matrix plus a human-readable JSON sidecar at
    /// `<path>.meta.json` carrying caller-supplied context (seeds, config
    /// digests, model hashes) for cache reuse across runs.
    pub fn save_with_sidecar(
        &self,
        path: &Path,
        context: &BTreeMap<String, String>,
    ) -> Result<()> {
        self.save(path)?;
        let sidecar = MatrixSidecar {
            method: self.method,
            sign: self.sign,
            n_train: self.train_ids.len(),
            n_val: self.val_ids.len(),
            unconverged_val_ids: self.unconverged_val_ids.clone(),
            context: context.clone(),
        };
        crate::snapshot::save_versioned(&sidecar_path(path), &sidecar)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, path)?;
        if &magic != MATRIX_MAGIC {
            return Err(CoreError::Serde(format!(
                "{} is not a contribution matrix file (bad magic)",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != MATRIX_VERSION {
            return Err(CoreError::SchemaVersion {
                expected: MATRIX_VERSION,
                found: version,
            });
        }
        let method = AttributionMethod::from_byte(r.read_u8()?)?;
        let sign = r.read_u8()?;
        if sign != 0 {
            return Err(CoreError::Serde(format!(
                "unknown sign convention tag {sign}"
            )));
        }
        let n_train = r.read_u64::<LittleEndian>()? as usize;
        let n_val = r.read_u64::<LittleEndian>()? as usize;
        let n_unconv = r.read_u64::<LittleEndian>()? as usize;
        let mut read_ids = |count: usize| -> Result<Vec<u64>> {
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(r.read_u64::<LittleEndian>().map_err(|_| truncated(path))?);
            }
            Ok(ids)
        };
        let train_ids = read_ids(n_train)?;
        let val_ids = read_ids(n_val)?;
        let unconverged = read_ids(n_unconv)?;
        let mut values = Vec::with_capacity(n_train * n_val);
        for _ in 0..n_train * n_val {
            values.push(r.read_f64::<LittleEndian>().map_err(|_| truncated(path))?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CoreError::Serde(format!(
                "{} has trailing bytes after the value block",
                path.display()
            )));
        }
        Self::with_unconverged(method, train_ids, val_ids, values, unconverged)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

fn truncated(path: &Path) -> CoreError {
    CoreError::Serde(format!(
        "{} ended before the declared payload was read",
        path.display()
    ))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|_| truncated(path))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixSidecar {
    method: AttributionMethod,
    sign: SignConvention,
    n_train: usize,
    n_val: usize,
    unconverged_val_ids: Vec<u64>,
    context: BTreeMap<String, String>,
}
