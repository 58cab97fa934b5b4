//! Two-arm experiment orchestration: run the contribution workflow once with
//! the adversary's points as submitted and once with their manipulated
//! counterparts, then compare the payouts.
//!
//! A run is driven by a flat key-value [`ExperimentConfig`] and produces a
//! self-describing directory: dataset and model snapshots for both arms,
//! contribution matrices, a JSON report, per-stage timings, and a manifest
//! with a SHA-256 digest of every artifact (timing excluded, since wall
//! clocks are not reproducible). Both arms share every derived seed; the only
//! difference between them is the feature content of the adversary's points,
//! so any payout gap is attributable to the manipulation alone.
//!
//! Failures are wrapped with the name of the stage that raised them, and a
//! partial manifest is still written so an aborted run can be inspected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{
    data_shapley, grad_dot, influence_function, trak, train_trak_ensemble, CgConfig,
    ContributionMatrix, ShapleyConfig, TrakConfig, MAX_SHAPLEY_POINTS,
};
use crate::compensation::{
    compensation_share, fraction_of_change, ChangeReport, CompensationReport, TopKConfig,
};
use crate::data::{
    assemble_training, load_idx, split_contribution, synth_blobs, Dataset, SplitSizes,
};
use crate::error::{CoreError, Result};
use crate::model::{train, train_warm, Architecture, ModelParams, OptimizerKind, TrainConfig};
use crate::outlier::{
    fgsm_attack, pgd_attack, random_perturb, simba_attack, zoo_attack, AttackTrace, ModelQuery,
    ProbQuery, SimbaConfig, ZooConfig,
};
use crate::shadow::{shadow_attack, train_shadow_ensemble, AttackBudget};
use crate::snapshot;
use crate::theory::{stability_experiment_multi, StabilityReport};

/// Version stamp every config document must carry.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flat key-value description of one two-arm run. Unknown keys are rejected
/// at parse time; every field is echoed into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Directory-name-safe identifier; artifacts land in `out_dir/run_id`.
    pub run_id: String,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub out_dir: String,

    /// `"blobs"` (synthetic Gaussian clusters) or `"idx"` (image/label pair).
    pub data_source: String,
    pub idx_images: String,
    pub idx_labels: String,
    pub data_dim: usize,
    pub data_classes: usize,
    pub data_spread: f64,

    /// Round-0 training corpus size.
    pub n_z0: usize,
    /// Benign round-1 contributions.
    pub n_z1_new: usize,
    /// Adversary-controlled round-1 contributions.
    pub n_adv: usize,
    /// Round-0 validation size (reported accuracy only; may be 0).
    pub n_v0: usize,
    /// Round-1 validation size (the payout is computed on these points).
    pub n_v1: usize,
    /// Extra distribution-matched points left in the pool for shadow models.
    pub n_shadow_pool: usize,

    /// `"lr"` or `"mlp"`.
    pub arch: String,
    pub mlp_hidden: Vec<usize>,
    pub l2_reg: f64,

    pub train_epochs: usize,
    pub train_lr: f64,
    /// 0 trains full-batch; anything else is the minibatch size.
    pub train_batch: usize,
    /// `"sgd"` or `"adam"`.
    pub train_optimizer: String,
    /// Start round-1 training from the round-0 parameters instead of a fresh
    /// initialization.
    pub warm_start: bool,

    /// `"if"`, `"graddot"`, `"trak"`, or `"shapley"`.
    pub attribution: String,
    /// CG overrides; absent keys fall back to per-architecture defaults.
    pub cg_damping: Option<f64>,
    pub cg_max_iters: Option<usize>,
    pub cg_tolerance: Option<f64>,
    pub trak_k_proj: usize,
    pub trak_ridge: Option<f64>,
    pub trak_ensemble: usize,
    pub trak_subset_fraction: f64,
    pub shapley_permutations: usize,
    pub shapley_truncation_tol: f64,
    pub shapley_retrain_epochs: usize,

    /// Top-k slots per validation point.
    pub k: usize,

    /// `"none"`, `"random"`, `"shadow"`, `"zoo"`, `"simba"`, `"fgsm"`, `"pgd"`.
    pub attack: String,
    /// L∞ budget (shadow/random/fgsm/pgd) or per-iteration step (zoo/simba).
    pub eps: f64,
    /// Per-iteration step size for shadow/pgd.
    pub attack_step_size: f64,
    /// Ascent iterations for shadow/zoo/pgd.
    pub attack_iterations: usize,
    /// Shadow ensemble size m.
    pub shadow_models: usize,
    /// Per-member training subset; 0 picks half of the attacker's pool.
    pub shadow_subset: usize,
    /// Validation points the attacker carves out of its pool.
    pub shadow_val: usize,
    pub zoo_fd_step: f64,
    pub zoo_coord_budget: usize,
    pub simba_max_queries: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            run_id: "run".into(),
            seed: 0,
            out_dir: "runs".into(),

            data_source: "blobs".into(),
            idx_images: String::new(),
            idx_labels: String::new(),
            data_dim: 6,
            data_classes: 2,
            data_spread: 0.15,

            n_z0: 400,
            n_z1_new: 0,
            n_adv: 20,
            n_v0: 0,
            n_v1: 100,
            n_shadow_pool: 0,

            arch: "lr".into(),
            mlp_hidden: Vec::new(),
            l2_reg: 0.01,

            train_epochs: 60,
            train_lr: 0.5,
            train_batch: 0,
            train_optimizer: "sgd".into(),
            warm_start: false,

            attribution: "graddot".into(),
            cg_damping: None,
            cg_max_iters: None,
            cg_tolerance: None,
            trak_k_proj: 256,
            trak_ridge: None,
            trak_ensemble: 1,
            trak_subset_fraction: 0.5,
            shapley_permutations: 100,
            shapley_truncation_tol: 0.0,
            shapley_retrain_epochs: 5,

            k: 20,

            attack: "none".into(),
            eps: 0.1,
            attack_step_size: 0.01,
            attack_iterations: 10,
            shadow_models: 10,
            shadow_subset: 0,
            shadow_val: 50,
            zoo_fd_step: 1e-4,
            zoo_coord_budget: 128,
            simba_max_queries: 1_000_000,
        }
    }
}

const ATTACKS: [&str; 7] = ["none", "random", "shadow", "zoo", "simba", "fgsm", "pgd"];
const ATTRIBUTIONS: [&str; 4] = ["if", "graddot", "trak", "shapley"];

impl ExperimentConfig {
    /// Parse a flat TOML document. Unknown keys and schema mismatches are
    /// errors; the result is fully validated.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML echo of this config (used for the run-directory copy).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CoreError::SchemaVersion {
                expected: CONFIG_SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(CoreError::Config(format!(
                "run_id `{}` must be non-empty and use only [A-Za-z0-9._-]",
                self.run_id
            )));
        }
        match self.data_source.as_str() {
            "blobs" => {
                if self.data_dim == 0 || self.data_classes < 2 {
                    return Err(CoreError::Config(
                        "blobs need data_dim ≥ 1 and data_classes ≥ 2".into(),
                    ));
                }
                if !self.data_spread.is_finite() || self.data_spread < 0.0 {
                    return Err(CoreError::Config(format!(
                        "data_spread must be finite and ≥ 0, got {}",
                        self.data_spread
                    )));
                }
            }
            "idx" => {
                if self.idx_images.is_empty() || self.idx_labels.is_empty() {
                    return Err(CoreError::Config(
                        "idx source needs idx_images and idx_labels paths".into(),
                    ));
                }
            }
            other => {
                return Err(CoreError::Config(format!(
                    "unknown data_source `{other}` (expected blobs or idx)"
                )))
            }
        }
        if self.n_z0 == 0 || self.n_adv == 0 || self.n_v1 == 0 {
            return Err(CoreError::Config(
                "n_z0, n_adv and n_v1 must all be positive".into(),
            ));
        }
        let n_train = self.n_z0 + self.n_z1_new + self.n_adv;
        if self.k == 0 || self.k > n_train {
            return Err(CoreError::Config(format!(
                "k must lie in 1..={n_train}, got {}",
                self.k
            )));
        }
        self.architecture()?.validate()?;
        self.train_config(0).validate()?;
        if !ATTRIBUTIONS.contains(&self.attribution.as_str()) {
            return Err(CoreError::Config(format!(
                "unknown attribution `{}` (expected one of {ATTRIBUTIONS:?})",
                self.attribution
            )));
        }
        match self.attribution.as_str() {
            "trak" => {
                if self.trak_k_proj == 0 || self.trak_ensemble == 0 {
                    return Err(CoreError::Config(
                        "trak needs trak_k_proj ≥ 1 and trak_ensemble ≥ 1".into(),
                    ));
                }
            }
            "shapley" => {
                if self.shapley_permutations == 0 || self.shapley_retrain_epochs == 0 {
                    return Err(CoreError::Config(
                        "shapley needs permutations ≥ 1 and retrain epochs ≥ 1".into(),
                    ));
                }
                if n_train > MAX_SHAPLEY_POINTS {
                    return Err(CoreError::Config(format!(
                        "shapley attribution retrains per point and is capped at \
                         {MAX_SHAPLEY_POINTS} training points; this config trains on {n_train}"
                    )));
                }
            }
            _ => {}
        }
        if !ATTACKS.contains(&self.attack.as_str()) {
            return Err(CoreError::Config(format!(
                "unknown attack `{}` (expected one of {ATTACKS:?})",
                self.attack
            )));
        }
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(CoreError::Config(format!(
                "eps must be finite and ≥ 0, got {}",
                self.eps
            )));
        }
        match self.attack.as_str() {
            "shadow" => {
                if self.shadow_models == 0 || self.shadow_val == 0 {
                    return Err(CoreError::Config(
                        "shadow attack needs shadow_models ≥ 1 and shadow_val ≥ 1".into(),
                    ));
                }
                if self.attack_iterations == 0 || self.attack_step_size <= 0.0 {
                    return Err(CoreError::Config(
                        "shadow attack needs attack_iterations ≥ 1 and attack_step_size > 0"
                            .into(),
                    ));
                }
            }
            "zoo" => {
                if self.zoo_fd_step <= 0.0
                    || self.zoo_coord_budget == 0
                    || self.attack_iterations == 0
                {
                    return Err(CoreError::Config(
                        "zoo attack needs zoo_fd_step > 0, zoo_coord_budget ≥ 1 and \
                         attack_iterations ≥ 1"
                            .into(),
                    ));
                }
            }
            "pgd" => {
                if self.attack_iterations == 0 || self.attack_step_size <= 0.0 {
                    return Err(CoreError::Config(
                        "pgd needs attack_iterations ≥ 1 and attack_step_size > 0".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        match self.arch.as_str() {
            "lr" => Ok(Architecture::Lr {
                dim: self.data_dim,
                classes: self.data_classes,
                l2_reg: self.l2_reg,
            }),
            "mlp" => {
                if self.mlp_hidden.is_empty() {
                    return Err(CoreError::Config(
                        "mlp architecture needs non-empty mlp_hidden".into(),
                    ));
                }
                Ok(Architecture::Mlp {
                    dim: self.data_dim,
                    classes: self.data_classes,
                    hidden: self.mlp_hidden.clone(),
                    l2_reg: self.l2_reg,
                })
            }
            other => Err(CoreError::Config(format!(
                "unknown arch `{other}` (expected lr or mlp)"
            ))),
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            learning_rate: self.train_lr,
            batch_size: if self.train_batch == 0 {
                None
            } else {
                Some(self.train_batch)
            },
            optimizer: if self.train_optimizer == "adam" {
                OptimizerKind::Adam
            } else {
                OptimizerKind::Sgd
            },
            seed,
        }
    }

    fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            z0: self.n_z0,
            z1_new: self.n_z1_new,
            z1_adv: self.n_adv,
            v0: self.n_v0,
            v1: self.n_v1,
        }
    }

    fn top_k(&self) -> TopKConfig {
        TopKConfig {
            k: self.k,
            ..TopKConfig::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Seeds and reports
// ---------------------------------------------------------------------------

/// Stage seeds derived from the master seed, in a fixed order. Both arms use
/// the same plan; only the adversary's perturbation differs between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub data: u64,
    pub split: u64,
    pub t0_train: u64,
    pub attack: u64,
    pub t1_train: u64,
    pub attribution: u64,
}

impl SeedPlan {
    pub fn derive(master: u64) -> SeedPlan {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        SeedPlan {
            data: rng.gen(),
            split: rng.gen(),
            t0_train: rng.gen(),
            attack: rng.gen(),
            t1_train: rng.gen(),
            attribution: rng.gen(),
        }
    }
}

/// Everything the comparison produced, ready for tables and assertions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub attack: String,
    pub attribution: String,
    pub k: usize,
    /// |adversary points| / |round-1 training set|.
    pub adv_fraction: f64,
    pub share_original: f64,
    pub share_manipulated: f64,
    /// `share_manipulated / share_original`; absent when the original share
    /// is zero.
    pub ratio: Option<f64>,
    pub original: CompensationReport,
    pub manipulated: CompensationReport,
    pub change: ChangeReport,
    pub accuracy_t0: f64,
    pub accuracy_t1_original: f64,
    pub accuracy_t1_manipulated: f64,
    /// Total black-box queries spent by the attack, when it queries at all.
    pub queries_used: Option<u64>,
    pub seeds: SeedPlan,
}

/// Relative artifact paths and their SHA-256 digests. Timing and the
/// manifest itself are excluded: they are the only non-reproducible bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// False when a stage aborted; the hashes then cover the partial run.
    pub completed: bool,
    pub failed_stage: Option<String>,
    pub files: BTreeMap<String, String>,
}

/// Handle to a finished run: its directory, report, and manifest.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub report: RunReport,
    pub manifest: RunManifest,
}

// ---------------------------------------------------------------------------
// Run directory plumbing
// ---------------------------------------------------------------------------

/// Exclusive-writer guard: creating the lock file fails if it already
/// exists, and dropping the guard removes it.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<LockGuard> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CoreError::Locked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// SHA-256 digest of a file, hex-encoded.
pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct RunState {
    run_dir: PathBuf,
    /// Relative paths of artifacts written so far, in write order.
    artifacts: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl RunState {
    fn record(&mut self, rel: &str) {
        self.artifacts.push(rel.to_string());
    }

    fn save_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        snapshot::save_versioned(&self.run_dir.join(rel), value)?;
        self.record(rel);
        Ok(())
    }

    fn save_text(&mut self, rel: &str, text: &str) -> Result<()> {
        fs::write(self.run_dir.join(rel), text)?;
        self.record(rel);
        Ok(())
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| e.in_stage(stage));
        self.timings
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn manifest(&self, run_id: &str, failed_stage: Option<String>) -> Result<RunManifest> {
        let mut files = BTreeMap::new();
        for rel in &self.artifacts {
            files.insert(rel.clone(), hash_file(&self.run_dir.join(rel))?);
        }
        Ok(RunManifest {
            run_id: run_id.to_string(),
            completed: failed_stage.is_none(),
            failed_stage,
            files,
        })
    }

    fn write_timing(&self) -> Result<()> {
        let mut text = String::new();
        for (stage, secs) in &self.timings {
            let _ = writeln!(text, "{stage}\t{secs:.3}s");
        }
        fs::write(self.run_dir.join("timing.txt"), text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

/// Execute one two-arm run and persist every artifact under
/// `out_dir/run_id`. On stage failure the error names the stage and a
/// partial manifest is written before returning.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let run_dir = Path::new(&cfg.out_dir).join(&cfg.run_id);
    for sub in ["data", "models", "matrices"] {
        fs::create_dir_all(run_dir.join(sub))?;
    }
    let _lock = LockGuard::acquire(&run_dir)?;

    let seeds = SeedPlan::derive(cfg.seed);
    let mut state = RunState {
        run_dir: run_dir.clone(),
        artifacts: Vec::new(),
        timings: Vec::new(),
    };
    state.save_text("config.toml", &cfg.to_toml_string()?)?;
    state.save_json("seeds.json", &seeds)?;

    match execute(cfg, &seeds, &mut state) {
        Ok(report) => {
            state.save_json("report.json", &report)?;
            state.save_text("tables.txt", &emit_tables(std::slice::from_ref(&report))?)?;
            state.write_timing()?;
            let manifest = state.manifest(&cfg.run_id, None)?;
            snapshot::save_versioned(&run_dir.join("manifest.json"), &manifest)?;
            Ok(RunArtifacts {
                run_dir,
                report,
                manifest,
            })
        }
        Err(e) => {
            let failed_stage = match &e {
                CoreError::Stage { stage, .. } => Some(stage.clone()),
                _ => None,
            };
            state.write_timing()?;
            let manifest = state.manifest(&cfg.run_id, failed_stage)?;
            snapshot::save_versioned(&run_dir.join("manifest.json"), &manifest)?;
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig, seeds: &SeedPlan, state: &mut RunState) -> Result<RunReport> {
    let arch = cfg.architecture()?;
    let sizes = cfg.split_sizes();

    // generate-data: one pool draw, dealt into the workflow sets.
    let split = state.timed("generate-data", |_| {
        let pool = match cfg.data_source.as_str() {
            "blobs" => synth_blobs(
                sizes.total() + cfg.n_shadow_pool,
                cfg.data_classes,
                cfg.data_dim,
                cfg.data_spread,
                seeds.data,
            )?,
            _ => load_idx(Path::new(&cfg.idx_images), Path::new(&cfg.idx_labels))?,
        };
        split_contribution(&pool, &sizes, seeds.split)
    })?;

    // train-t0: the round-0 model every attack variant gets to interact with.
    let t0 = state.timed("train-t0", |state| {
        let model = train(&arch, &split.z0, &cfg.train_config(seeds.t0_train))?;
        model.save_snapshot(&state.run_dir.join("models/t0.json"))?;
        state.record("models/t0.json");
        Ok(model)
    })?;

    // attack: produce the manipulated variant of the adversary's points.
    let (manipulated_adv, queries_used) = state.timed("attack", |state| {
        let z = &split.z1_adv;
        let mut queries = None;
        let mut traces: Option<Vec<AttackTrace>> = None;
        let manipulated = match cfg.attack.as_str() {
            "none" => z.clone(),
            "random" => random_perturb(z, cfg.eps, seeds.attack)?,
            "fgsm" => fgsm_attack(&t0, z, cfg.eps)?,
            "pgd" => pgd_attack(&t0, z, cfg.eps, cfg.attack_iterations, cfg.attack_step_size)?,
            "zoo" => {
                let query = ModelQuery::new(&t0);
                let zoo_cfg = ZooConfig {
                    eps: cfg.eps,
                    fd_step: cfg.zoo_fd_step,
                    coord_budget: cfg.zoo_coord_budget,
                    iterations: cfg.attack_iterations,
                };
                let (d, t) = zoo_attack(&query, z, &zoo_cfg)?;
                queries = Some(query.queries_used());
                traces = Some(t);
                d
            }
            "simba" => {
                let query = ModelQuery::new(&t0);
                let simba_cfg = SimbaConfig {
                    eps: cfg.eps,
                    max_queries: cfg.simba_max_queries,
                    seed: seeds.attack,
                };
                let (d, t) = simba_attack(&query, z, &simba_cfg)?;
                queries = Some(query.queries_used());
                traces = Some(t);
                d
            }
            _ => {
                // shadow: the attacker's pool is the persisted round-0 corpus
                // plus whatever distribution-matched points it can gather.
                let pool = split.z0.union(&split.remainder)?;
                let subset = if cfg.shadow_subset == 0 {
                    (pool.len() / 2).max(1)
                } else {
                    cfg.shadow_subset
                };
                let ensemble = train_shadow_ensemble(
                    &pool,
                    z,
                    cfg.shadow_models,
                    subset,
                    cfg.shadow_val,
                    &arch,
                    &cfg.train_config(seeds.attack),
                    seeds.attack,
                )?;
                let budget = AttackBudget {
                    eps_inf: cfg.eps,
                    step_size: cfg.attack_step_size,
                    iterations: cfg.attack_iterations,
                };
                shadow_attack(z, &ensemble, &budget)?
            }
        };
        if let Some(t) = &traces {
            state.save_json("attack_traces.json", t)?;
        }
        Ok((manipulated, queries))
    })?;

    // train-t1: both arms, identical seeds, optionally warm-started from t0.
    let (z1_original, z1_manipulated, t1_original, t1_manipulated) =
        state.timed("train-t1", |state| {
            let z1_original = assemble_training(&split.z0, &split.z1_new, &split.z1_adv)?;
            let z1_manipulated = assemble_training(&split.z0, &split.z1_new, &manipulated_adv)?;
            let tcfg = cfg.train_config(seeds.t1_train);
            let fit = |d: &Dataset| -> Result<ModelParams> {
                if cfg.warm_start {
                    train_warm(&t0, d, &tcfg)
                } else {
                    train(&arch, d, &tcfg)
                }
            };
            let t1_original = fit(&z1_original)?;
            let t1_manipulated = fit(&z1_manipulated)?;

            z1_original.save_snapshot(&state.run_dir.join("data/z1_original.json"))?;
            state.record("data/z1_original.json");
            z1_manipulated.save_snapshot(&state.run_dir.join("data/z1_manipulated.json"))?;
            state.record("data/z1_manipulated.json");
            split.v1.save_snapshot(&state.run_dir.join("data/validation.json"))?;
            state.record("data/validation.json");
            t1_original.save_snapshot(&state.run_dir.join("models/t1_original.json"))?;
            state.record("models/t1_original.json");
            t1_manipulated.save_snapshot(&state.run_dir.join("models/t1_manipulated.json"))?;
            state.record("models/t1_manipulated.json");
            Ok((z1_original, z1_manipulated, t1_original, t1_manipulated))
        })?;

    // attribute: same method and seeds on both arms.
    let (tau_original, tau_manipulated) = state.timed("attribute", |state| {
        let tau_original = attribute(cfg, seeds, &arch, &z1_original, &t1_original, &split.v1)?;
        let tau_manipulated = attribute(
            cfg,
            seeds,
            &arch,
            &z1_manipulated,
            &t1_manipulated,
            &split.v1,
        )?;
        tau_original.save(&state.run_dir.join("matrices/original.taub"))?;
        state.record("matrices/original.taub");
        tau_manipulated.save(&state.run_dir.join("matrices/manipulated.taub"))?;
        state.record("matrices/manipulated.taub");
        Ok((tau_original, tau_manipulated))
    })?;

    // evaluate: payouts, their ratio, and the per-validation-point movement.
    state.timed("evaluate", |_| {
        let adv_ids: Vec<u64> = split.z1_adv.points().iter().map(|p| p.id).collect();
        let top_k = cfg.top_k();
        let original = compensation_share(&tau_original, &adv_ids, &top_k)?;
        let manipulated = compensation_share(&tau_manipulated, &adv_ids, &top_k)?;
        let change = fraction_of_change(&tau_original, &tau_manipulated, &adv_ids, &top_k)?;
        let ratio = if manipulated.share == original.share {
            Some(1.0)
        } else if original.share > 0.0 {
            Some(manipulated.share / original.share)
        } else {
            None
        };
        Ok(RunReport {
            run_id: cfg.run_id.clone(),
            attack: cfg.attack.clone(),
            attribution: cfg.attribution.clone(),
            k: cfg.k,
            adv_fraction: split.z1_adv.len() as f64 / z1_original.len() as f64,
            share_original: original.share,
            share_manipulated: manipulated.share,
            ratio,
            original,
            manipulated,
            change,
            accuracy_t0: t0.accuracy(&split.v0),
            accuracy_t1_original: t1_original.accuracy(&split.v1),
            accuracy_t1_manipulated: t1_manipulated.accuracy(&split.v1),
            queries_used,
            seeds: *seeds,
        })
    })
}

fn attribute(
    cfg: &ExperimentConfig,
    seeds: &SeedPlan,
    arch: &Architecture,
    train_set: &Dataset,
    model: &ModelParams,
    val: &Dataset,
) -> Result<ContributionMatrix> {
    match cfg.attribution.as_str() {
        "graddot" => grad_dot(train_set, model, val),
        "if" => {
            let base = CgConfig::default_for(arch);
            let cg = CgConfig {
                damping: cfg.cg_damping.unwrap_or(base.damping),
                max_iters: cfg.cg_max_iters.unwrap_or(base.max_iters),
                tolerance: cfg.cg_tolerance.unwrap_or(base.tolerance),
            };
            influence_function(train_set, model, val, &cg)
        }
        "trak" => {
            let trak_cfg = TrakConfig {
                k_proj: cfg.trak_k_proj,
                seed: seeds.attribution,
                ridge: cfg.trak_ridge,
                ensemble: cfg.trak_ensemble,
                subset_fraction: cfg.trak_subset_fraction,
                ..TrakConfig::default()
            };
            let models = train_trak_ensemble(
                train_set,
                model,
                &cfg.train_config(seeds.t1_train),
                &trak_cfg,
            )?;
            trak(train_set, &models, val, &trak_cfg)
        }
        _ => {
            let shapley_cfg = ShapleyConfig {
                permutations: cfg.shapley_permutations,
                truncation_tol: cfg.shapley_truncation_tol,
                retrain_epochs: cfg.shapley_retrain_epochs,
                seed: seeds.attribution,
            };
            data_shapley(
                train_set,
                arch,
                &cfg.train_config(seeds.attribution),
                val,
                &shapley_cfg,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Render the manipulated/original ratio as a one-decimal percentage from
/// full-precision shares (rounding the shares first would drift).
pub fn format_ratio(original: f64, manipulated: f64) -> String {
    if original > 0.0 {
        format!("{:.1}%", 100.0 * manipulated / original)
    } else {
        "n/a".to_string()
    }
}

fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", 100.0 * fraction)
}

/// One text table over the given runs: payout shares before and after the
/// manipulation, their ratio, and the per-validation-point movement split.
pub fn emit_tables(reports: &[RunReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(CoreError::Param("no runs to tabulate".into()));
    }
    let setting_width = reports
        .iter()
        .map(|r| r.run_id.len())
        .chain(std::iter::once("Setting".len()))
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<setting_width$}  {:>11}  {:>9}  {:>12}  {:>8}  {:>7}  {:>7}  {:>7}",
        "Setting", "|Z1a|/|Z1|", "Original", "Manipulated", "Ratio", "More", "Tied", "Fewer"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<setting_width$}  {:>11.4}  {:>9.4}  {:>12.4}  {:>8}  {:>7}  {:>7}  {:>7}",
            r.run_id,
            r.adv_fraction,
            r.share_original,
            r.share_manipulated,
            format_ratio(r.share_original, r.share_manipulated),
            format_percent(r.change.more),
            format_percent(r.change.tied),
            format_percent(r.change.fewer),
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Verification helpers
// ---------------------------------------------------------------------------

/// Thin wrapper for the CLI: run the influence-stability experiment and, when
/// an output directory is given, drop the text report and plot CSV there.
#[allow(clippy::too_many_arguments)]
pub fn verify_theory(
    ns: &[usize],
    dim: usize,
    l2_reg: f64,
    perturb_mag: f64,
    perturbed_points: usize,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<StabilityReport> {
    let arch = Architecture::Lr {
        dim,
        classes: 2,
        l2_reg,
    };
    let report = stability_experiment_multi(ns, &arch, perturb_mag, perturbed_points, trials, seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("stability.txt"), report.to_string())?;
        let mut csv = Vec::new();
        report.write_plot_csv(&mut csv)?;
        fs::write(dir.join("stability.csv"), csv)?;
        snapshot::save_versioned(&dir.join("stability.json"), &report)?;
    }
    Ok(report)
}

/// Re-hash every artifact a manifest lists and return the relative paths
/// whose bytes no longer match (empty means the run directory is intact).
/// Read back the summary report of a finished run directory.
pub fn load_report(run_dir: &Path) -> Result<RunReport> {
    snapshot::load_versioned(&run_dir.join("report.json"))
}

pub fn verify_run_dir(run_dir: &Path) -> Result<Vec<String>> {
    let manifest: RunManifest = snapshot::load_versioned(&run_dir.join("manifest.json"))?;
    let mut mismatched = Vec::new();
    for (rel, recorded) in &manifest.files {
        let path = run_dir.join(rel);
        let current = if path.exists() {
            hash_file(&path)?
        } else {
            String::new()
        };
        if &current != recorded {
            mismatched.push(rel.clone());
        }
    }
    Ok(mismatched)
}
