//! Numerical stability checks for influence scores on strongly convex models.
//!
//! The question answered here: if one training point is perturbed and the
//! model is retrained to a true optimum, how much do the influence scores of
//! the *other* points move? For an l2-regularized logistic model the answer
//! should shrink like `1/n`, and two supporting inequalities are checkable
//! directly at desk scale:
//!
//! * the parameter shift obeys `‖θ̂ − θ̂′‖₂ ≤ 4L/(m·n)` with `m` the l2
//!   strength and `L` an empirical per-point gradient-norm bound, and
//! * the inverse curvature matrices satisfy `‖H⁻¹‖_op ≤ 1/m`, with
//!   `‖H′⁻¹ − H⁻¹‖_op` decaying like `1/n` as well.
//!
//! Everything runs on dense linear algebra (parameter counts are capped), and
//! "retrained" means optimized to first-order stationarity `1e-8`, not a
//! fixed epoch budget, so the measured deltas reflect the minimizers rather
//! than optimizer slack. Independent `(n, trial)` cells run in parallel;
//! aggregation order is fixed, so reports are deterministic per seed.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

use crate::data::{synth_blobs, DataPoint, Dataset};
use crate::error::{CoreError, Result};
use crate::linalg;
use crate::model::{
    grad_theta_at, lr_dense_hessian, mean_loss_and_grad, Architecture, ModelParams,
};

/// Gradient-norm threshold below which a fit counts as a true minimizer.
pub const STATIONARITY_TOL: f64 = 1e-8;

/// Hard cap on Newton iterations before giving up on the tolerance.
const MAX_NEWTON_ITERS: usize = 200;

/// Dense inverses stay exact-oracle grade only for small parameter counts.
const MAX_DENSE_PARAMS: usize = 200;

/// Cluster spread of the synthetic problems the experiments run on.
const BLOB_SPREAD: f64 = 0.15;

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

/// Per-`n` measurements of one stability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    /// Training-set size of this cell.
    pub n: usize,
    /// Per trial: max |Δτ| over the rows whose features were left alone.
    pub unchanged_deltas: Vec<f64>,
    /// Per trial: max |Δτ| over the perturbed row(s).
    pub perturbed_deltas: Vec<f64>,
    /// Per trial: parameter-shift bound margin (RHS − LHS, ≥ 0 when it holds).
    pub bound_margins: Vec<f64>,
    /// Median of `unchanged_deltas`.
    pub median_unchanged_delta: f64,
    /// Median of `perturbed_deltas`.
    pub median_perturbed_delta: f64,
}

/// Outcome of [`stability_experiment`]: how far influence scores move under a
/// single-point feature perturbation, across training-set sizes.
///
/// Embeds every hyperparameter that shaped the run, so a serialized report is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// One cell per requested training-set size, in request order.
    pub cells: Vec<StabilityCell>,
    /// Least-squares slope of `ln(median unchanged delta)` against `ln n`.
    /// Present only with ≥ 3 sizes and strictly positive medians; an
    /// `1/n` decay shows up as a slope near −1.
    pub slope: Option<f64>,
    /// Euclidean magnitude of each feature perturbation.
    pub perturb_mag: f64,
    /// How many training rows were perturbed per trial.
    pub perturbed_points: usize,
    /// Trials per training-set size.
    pub trials: usize,
    /// Master seed the cell seeds were derived from.
    pub seed: u64,
    /// Feature dimension of the synthetic problems.
    pub dim: usize,
    /// Class count of the synthetic problems.
    pub classes: usize,
    /// l2 strength of the fitted models (the strong-convexity constant).
    pub l2_reg: f64,
    /// Cluster spread of the synthetic problems.
    pub spread: f64,
}

impl StabilityReport {
    /// Training-set sizes covered by this report, in cell order.
    pub fn ns(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.n).collect()
    }

    /// Smallest parameter-shift bound margin observed anywhere in the run.
    pub fn min_bound_margin(&self) -> f64 {
        self.cells
            .iter()
            .flat_map(|c| c.bound_margins.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Write the decay curve as CSV: one row per training-set size with the
    /// median deltas and their logarithms (log columns are left empty for
    /// zero deltas, as in the zero-perturbation control).
    pub fn write_plot_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "n,median_unchanged_delta,median_perturbed_delta,ln_n,ln_unchanged_delta,ln_perturbed_delta"
        )?;
        for cell in &self.cells {
            let ln_or_empty = |v: f64| {
                if v > 0.0 {
                    format!("{:.12}", v.ln())
                } else {
                    String::new()
                }
            };
            writeln!(
                w,
                "{},{:e},{:e},{:.12},{},{}",
                cell.n,
                cell.median_unchanged_delta,
                cell.median_perturbed_delta,
                (cell.n as f64).ln(),
                ln_or_empty(cell.median_unchanged_delta),
                ln_or_empty(cell.median_perturbed_delta),
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "influence stability: dim={} classes={} l2={} perturb_mag={} ({} point{}) trials={} seed={}",
            self.dim,
            self.classes,
            self.l2_reg,
            self.perturb_mag,
            self.perturbed_points,
            if self.perturbed_points == 1 { "" } else { "s" },
            self.trials,
            self.seed,
        )?;
        writeln!(
            f,
            "{:>8}  {:>22}  {:>22}  {:>14}",
            "n", "unchanged max |dtau|", "perturbed max |dtau|", "min margin"
        )?;
        for cell in &self.cells {
            let min_margin = cell
                .bound_margins
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            writeln!(
                f,
                "{:>8}  {:>22.6e}  {:>22.6e}  {:>14.6e}",
                cell.n, cell.median_unchanged_delta, cell.median_perturbed_delta, min_margin
            )?;
        }
        match self.slope {
            Some(s) => writeln!(f, "log-log slope of unchanged deltas: {s:.4}"),
            None => writeln!(f, "log-log slope of unchanged deltas: not fitted"),
        }
    }
}

/// Result of checking the parameter-shift inequality
/// `‖θ̂ − θ̂′‖₂ ≤ 4L/(m·n)` on one paired retrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBoundRecord {
    /// Training-set size.
    pub n: usize,
    /// Measured parameter distance `‖θ̂ − θ̂′‖₂`.
    pub lhs: f64,
    /// Bound value `4L/(m·n)`.
    pub rhs: f64,
    /// `rhs − lhs`; the inequality holds iff this is ≥ 0.
    pub margin: f64,
    /// Empirical gradient-norm constant `L`: twice the largest per-point
    /// gradient norm observed along both optimization paths.
    pub lipschitz: f64,
    /// Strong-convexity constant `m` (the l2 strength).
    pub strong_convexity: f64,
    /// Euclidean magnitude of the feature perturbation.
    pub perturb_mag: f64,
    /// Seed that generated data and perturbation.
    pub seed: u64,
}

/// Result of comparing inverse curvature matrices across one paired retrain:
/// `‖H′⁻¹ − H⁻¹‖_op` plus the spectral bound `‖H⁻¹‖_op ≤ 1/m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianBoundRecord {
    /// Training-set size.
    pub n: usize,
    /// Operator norm of the inverse-curvature difference.
    pub inverse_diff_op_norm: f64,
    /// Operator norm of the unperturbed inverse curvature matrix.
    pub inverse_op_norm: f64,
    /// Spectral bound `1/m` the operator norm must stay under.
    pub inverse_op_bound: f64,
    /// `inverse_op_bound − inverse_op_norm`; ≥ 0 when the bound holds.
    pub margin: f64,
    /// Euclidean magnitude of the feature perturbation.
    pub perturb_mag: f64,
    /// Seed that generated data and perturbation.
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Fitting to stationarity
// ---------------------------------------------------------------------------

struct FitOutcome {
    theta: Vec<f64>,
    /// Largest per-point gradient norm seen at any iterate (including the
    /// start and the final parameters).
    max_point_grad_norm: f64,
}

fn max_point_grad_norm(arch: &Architecture, theta: &[f64], data: &Dataset) -> f64 {
    data.points()
        .iter()
        .map(|p| linalg::norm2(&grad_theta_at(arch, theta, &p.features, p.label)))
        .fold(0.0, f64::max)
}

/// Full-batch Newton descent (with Armijo backtracking) until the objective
/// gradient norm drops to [`STATIONARITY_TOL`]. Deterministic: starts from
/// zeros, so identical data yields bitwise-identical parameters.
fn fit_to_stationarity(arch: &Architecture, data: &Dataset) -> Result<FitOutcome> {
    let mut theta = vec![0.0; arch.param_count()];
    let (mut obj, mut grad) = mean_loss_and_grad(arch, &theta, data.points());
    let mut max_pg = max_point_grad_norm(arch, &theta, data);

    for _ in 0..MAX_NEWTON_ITERS {
        let grad_norm = linalg::norm2(&grad);
        if grad_norm <= STATIONARITY_TOL {
            return Ok(FitOutcome {
                theta,
                max_point_grad_norm: max_pg,
            });
        }
        let model = ModelParams {
            arch: arch.clone(),
            theta: theta.clone(),
            train_seed: 0,
        };
        let hessian = lr_dense_hessian(&model, data)?;
        let chol = Cholesky::new(hessian).ok_or_else(|| {
            CoreError::Singular("curvature matrix lost positive definiteness".into())
        })?;
        let step = chol.solve(&DVector::from_column_slice(&grad));
        let descent: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();

        let mut alpha = 1.0;
        loop {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t - alpha * s)
                .collect();
            let (cand_obj, cand_grad) = mean_loss_and_grad(arch, &cand, data.points());
            // Near the optimum the per-step objective decrease drops below
            // fp64 resolution, so gradient contraction also counts as
            // progress; the gradient norm keeps full dynamic range there.
            let sufficient_decrease = cand_obj <= obj - 1e-4 * alpha * descent;
            let gradient_contraction = linalg::norm2(&cand_grad) <= 0.9 * grad_norm;
            if sufficient_decrease || gradient_contraction || alpha < 1e-12 {
                theta = cand;
                obj = cand_obj;
                grad = cand_grad;
                break;
            }
            alpha *= 0.5;
        }
        max_pg = max_pg.max(max_point_grad_norm(arch, &theta, data));
    }

    Err(CoreError::MinimizerTolerance {
        n: data.len(),
        grad_norm: linalg::norm2(&grad),
        iters: MAX_NEWTON_ITERS,
    })
}

// ---------------------------------------------------------------------------
// Cell construction
// ---------------------------------------------------------------------------

fn validated_lr(arch: &Architecture) -> Result<(usize, usize, f64)> {
    match arch {
        Architecture::Lr {
            dim,
            classes,
            l2_reg,
        } => {
            if !(*l2_reg > 0.0) {
                return Err(CoreError::Param(
                    "stability analysis needs a strictly positive l2 penalty (it supplies the strong-convexity constant)"
                        .into(),
                ));
            }
            if arch.param_count() > MAX_DENSE_PARAMS {
                return Err(CoreError::Param(format!(
                    "dense curvature analysis is capped at {MAX_DENSE_PARAMS} parameters, got {}",
                    arch.param_count()
                )));
            }
            Ok((*dim, *classes, *l2_reg))
        }
        _ => Err(CoreError::Param(
            "stability analysis is defined for l2-regularized logistic models only".into(),
        )),
    }
}

struct CellInputs {
    train: Dataset,
    perturbed: Dataset,
    test: DataPoint,
    /// Row positions whose features were moved, sorted ascending.
    perturbed_rows: Vec<usize>,
}

/// Draw an `n+1`-point problem (`n` train rows plus one held-out probe),
/// then move `k` distinct rows by `perturb_mag` along independent random unit
/// directions. With `perturb_mag = 0` the perturbed copy is bitwise identical
/// to the original, which makes the zero-control deltas exactly zero.
fn build_cell(
    arch: &Architecture,
    n: usize,
    perturb_mag: f64,
    perturbed_points: usize,
    data_seed: u64,
    perturb_seed: u64,
) -> Result<CellInputs> {
    let data = synth_blobs(n + 1, arch.classes(), arch.dim(), BLOB_SPREAD, data_seed)?;
    let train_idx: Vec<usize> = (0..n).collect();
    let train = data.subset_by_indices(&train_idx)?;
    let test = data.points()[n].clone();

    let mut rng = ChaCha8Rng::seed_from_u64(perturb_seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, perturbed_points).into_vec();
    rows.sort_unstable();

    let mut features: Vec<Vec<f64>> = train
        .points()
        .iter()
        .map(|p| p.features.clone())
        .collect();
    for &row in &rows {
        let mut dir: Vec<f64> = (0..arch.dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = linalg::norm2(&dir);
        if norm > 0.0 {
            for d in dir.iter_mut() {
                *d /= norm;
            }
        } else {
            dir[0] = 1.0;
        }
        for (f, u) in features[row].iter_mut().zip(&dir) {
            *f += perturb_mag * u;
        }
    }
    let perturbed = train.with_features(features)?;

    Ok(CellInputs {
        train,
        perturbed,
        test,
        perturbed_rows: rows,
    })
}

/// Influence scores of every training row on `test`, evaluated at `theta`
/// with an exact dense curvature inverse: `τ_i = −gᵢᵀ H⁻¹ g_test`.
fn influence_scores(
    arch: &Architecture,
    theta: &[f64],
    train: &Dataset,
    test: &DataPoint,
) -> Result<Vec<f64>> {
    let model = ModelParams {
        arch: arch.clone(),
        theta: theta.to_vec(),
        train_seed: 0,
    };
    let hessian = lr_dense_hessian(&model, train)?;
    let chol = Cholesky::new(hessian).ok_or_else(|| {
        CoreError::Singular("curvature matrix lost positive definiteness".into())
    })?;
    let g_test = DVector::from_vec(grad_theta_at(arch, theta, &test.features, test.label));
    let solved = chol.solve(&g_test);
    Ok(train
        .points()
        .iter()
        .map(|p| {
            let g = grad_theta_at(arch, theta, &p.features, p.label);
            -g.iter().zip(solved.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

struct CellOutcome {
    unchanged_delta: f64,
    perturbed_delta: f64,
    bound_margin: f64,
}

fn run_cell(
    arch: &Architecture,
    n: usize,
    perturb_mag: f64,
    perturbed_points: usize,
    l2_reg: f64,
    data_seed: u64,
    perturb_seed: u64,
) -> Result<CellOutcome> {
    let cell = build_cell(arch, n, perturb_mag, perturbed_points, data_seed, perturb_seed)?;
    let base = fit_to_stationarity(arch, &cell.train)?;
    let moved = fit_to_stationarity(arch, &cell.perturbed)?;

    let tau_base = influence_scores(arch, &base.theta, &cell.train, &cell.test)?;
    let tau_moved = influence_scores(arch, &moved.theta, &cell.perturbed, &cell.test)?;

    let mut unchanged_delta = 0.0f64;
    let mut perturbed_delta = 0.0f64;
    for i in 0..n {
        let delta = (tau_moved[i] - tau_base[i]).abs();
        if cell.perturbed_rows.binary_search(&i).is_ok() {
            perturbed_delta = perturbed_delta.max(delta);
        } else {
            unchanged_delta = unchanged_delta.max(delta);
        }
    }

    let lipschitz = 2.0 * base.max_point_grad_norm.max(moved.max_point_grad_norm);
    let lhs = {
        let diff: Vec<f64> = base
            .theta
            .iter()
            .zip(&moved.theta)
            .map(|(a, b)| a - b)
            .collect();
        linalg::norm2(&diff)
    };
    let rhs = 4.0 * lipschitz / (l2_reg * n as f64);

    Ok(CellOutcome {
        unchanged_delta,
        perturbed_delta,
        bound_margin: rhs - lhs,
    })
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Measure how far influence scores move when a single training point's
/// features are perturbed and the model is retrained to stationarity.
///
/// For each size in `ns` this runs `trials` independent cells (fresh data
/// draw, fresh perturbed row) in parallel. Each cell retrains from scratch,
/// computes exact dense influence scores against one held-out probe point
/// before and after, and records the worst-case score delta separately for
/// untouched rows and for the perturbed row, plus the parameter-shift bound
/// margin. With ≥ 3 sizes the report also carries the fitted log-log decay
/// slope of the untouched-row deltas (≈ −1 for a `1/n` decay).
pub fn stability_experiment(
    ns: &[usize],
    arch: &Architecture,
    perturb_mag: f64,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    stability_experiment_multi(ns, arch, perturb_mag, 1, trials, seed)
}

/// [`stability_experiment`] generalized to perturbing `perturbed_points`
/// distinct rows per cell. The decay slope for multi-point perturbations is
/// reported for inspection; no particular window is promised.
pub fn stability_experiment_multi(
    ns: &[usize],
    arch: &Architecture,
    perturb_mag: f64,
    perturbed_points: usize,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let (dim, classes, l2_reg) = validated_lr(arch)?;
    if ns.is_empty() {
        return Err(CoreError::Param(
            "stability experiment needs at least one training-set size".into(),
        ));
    }
    if perturbed_points == 0 {
        return Err(CoreError::Param(
            "at least one row must be perturbed per cell".into(),
        ));
    }
    if let Some(&n) = ns.iter().find(|&&n| n <= perturbed_points) {
        return Err(CoreError::Param(format!(
            "training-set size {n} leaves no unchanged rows after perturbing {perturbed_points}"
        )));
    }
    if trials == 0 {
        return Err(CoreError::Param("trials must be positive".into()));
    }
    if !perturb_mag.is_finite() || perturb_mag < 0.0 {
        return Err(CoreError::Param(format!(
            "perturbation magnitude must be finite and non-negative, got {perturb_mag}"
        )));
    }

    // Derive every cell seed up front from one master stream so the parallel
    // schedule cannot influence the data.
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::with_capacity(ns.len() * trials);
    for &n in ns {
        for _ in 0..trials {
            let data_seed: u64 = master.gen();
            let perturb_seed: u64 = master.gen();
            plans.push((n, data_seed, perturb_seed));
        }
    }

    let outcomes: Vec<CellOutcome> = plans
        .par_iter()
        .map(|&(n, data_seed, perturb_seed)| {
            run_cell(
                arch,
                n,
                perturb_mag,
                perturbed_points,
                l2_reg,
                data_seed,
                perturb_seed,
            )
        })
        .collect::<Result<_>>()?;

    let cells: Vec<StabilityCell> = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let chunk = &outcomes[i * trials..(i + 1) * trials];
            let unchanged: Vec<f64> = chunk.iter().map(|c| c.unchanged_delta).collect();
            let perturbed: Vec<f64> = chunk.iter().map(|c| c.perturbed_delta).collect();
            let margins: Vec<f64> = chunk.iter().map(|c| c.bound_margin).collect();
            StabilityCell {
                n,
                median_unchanged_delta: linalg::median(&unchanged),
                median_perturbed_delta: linalg::median(&perturbed),
                unchanged_deltas: unchanged,
                perturbed_deltas: perturbed,
                bound_margins: margins,
            }
        })
        .collect();

    let slope = if cells.len() >= 3
        && cells.iter().all(|c| c.median_unchanged_delta > 0.0)
    {
        let xs: Vec<f64> = cells.iter().map(|c| (c.n as f64).ln()).collect();
        let ys: Vec<f64> = cells
            .iter()
            .map(|c| c.median_unchanged_delta.ln())
            .collect();
        Some(linalg::least_squares_slope(&xs, &ys))
    } else {
        None
    };

    Ok(StabilityReport {
        cells,
        slope,
        perturb_mag,
        perturbed_points,
        trials,
        seed,
        dim,
        classes,
        l2_reg,
        spread: BLOB_SPREAD,
    })
}

/// Check the parameter-shift inequality `‖θ̂ − θ̂′‖₂ ≤ 4L/(m·n)` on one
/// paired retrain, with `L` taken as twice the largest per-point gradient
/// norm observed along both optimization paths and `m` the l2 strength.
pub fn lemma_theta_bound(
    n: usize,
    arch: &Architecture,
    perturb_mag: f64,
    seed: u64,
) -> Result<ThetaBoundRecord> {
    let (_, _, l2_reg) = validated_lr(arch)?;
    if n < 2 {
        return Err(CoreError::Param(
            "the parameter-shift check needs at least two training rows".into(),
        ));
    }
    if !perturb_mag.is_finite() || perturb_mag < 0.0 {
        return Err(CoreError::Param(format!(
            "perturbation magnitude must be finite and non-negative, got {perturb_mag}"
        )));
    }

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let data_seed: u64 = master.gen();
    let perturb_seed: u64 = master.gen();
    let cell = build_cell(arch, n, perturb_mag, 1, data_seed, perturb_seed)?;

    let base = fit_to_stationarity(arch, &cell.train)?;
    let moved = fit_to_stationarity(arch, &cell.perturbed)?;

    let lipschitz = 2.0 * base.max_point_grad_norm.max(moved.max_point_grad_norm);
    let diff: Vec<f64> = base
        .theta
        .iter()
        .zip(&moved.theta)
        .map(|(a, b)| a - b)
        .collect();
    let lhs = linalg::norm2(&diff);
    let rhs = 4.0 * lipschitz / (l2_reg * n as f64);

    Ok(ThetaBoundRecord {
        n,
        lhs,
        rhs,
        margin: rhs - lhs,
        lipschitz,
        strong_convexity: l2_reg,
        perturb_mag,
        seed,
    })
}

fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0, |acc, e| acc.max(e.abs()))
}

/// Compare the inverse curvature matrices of one paired retrain:
/// records `‖H′⁻¹ − H⁻¹‖_op` (which should shrink like `1/n`) and checks the
/// spectral bound `‖H⁻¹‖_op ≤ 1/m` implied by the l2 penalty.
pub fn hessian_inverse_bound(
    n: usize,
    arch: &Architecture,
    perturb_mag: f64,
    seed: u64,
) -> Result<HessianBoundRecord> {
    let (_, _, l2_reg) = validated_lr(arch)?;
    if n < 2 {
        return Err(CoreError::Param(
            "the curvature comparison needs at least two training rows".into(),
        ));
    }
    if !perturb_mag.is_finite() || perturb_mag < 0.0 {
        return Err(CoreError::Param(format!(
            "perturbation magnitude must be finite and non-negative, got {perturb_mag}"
        )));
    }

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let data_seed: u64 = master.gen();
    let perturb_seed: u64 = master.gen();
    let cell = build_cell(arch, n, perturb_mag, 1, data_seed, perturb_seed)?;

    let base = fit_to_stationarity(arch, &cell.train)?;
    let moved = fit_to_stationarity(arch, &cell.perturbed)?;

    let inverse_at = |theta: &[f64], data: &Dataset| -> Result<DMatrix<f64>> {
        let model = ModelParams {
            arch: arch.clone(),
            theta: theta.to_vec(),
            train_seed: 0,
        };
        let hessian = lr_dense_hessian(&model, data)?;
        Cholesky::new(hessian)
            .map(|c| c.inverse())
            .ok_or_else(|| {
                CoreError::Singular("curvature matrix lost positive definiteness".into())
            })
    };
    let inv_base = inverse_at(&base.theta, &cell.train)?;
    let inv_moved = inverse_at(&moved.theta, &cell.perturbed)?;

    let inverse_diff_op_norm = sym_op_norm(&(&inv_moved - &inv_base));
    let inverse_op_norm = sym_op_norm(&inv_base);
    let inverse_op_bound = 1.0 / l2_reg;

    Ok(HessianBoundRecord {
        n,
        inverse_diff_op_norm,
        inverse_op_norm,
        inverse_op_bound,
        margin: inverse_op_bound - inverse_op_norm,
        perturb_mag,
        seed,
    })
}
