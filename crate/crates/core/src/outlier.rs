//! Feature perturbation against a fixed deployed model.
//!
//! Two query-only attacks push points toward higher loss under the deployed
//! model: [`zoo_attack`] estimates the feature gradient from symmetric
//! difference quotients of queried probabilities, and [`simba_attack`] tries
//! a `±eps` move per coordinate in a seeded random order, keeping a move
//! only when the queried loss strictly rises. Both see the model exclusively
//! through the [`ProbQuery`] trait — probability vectors in, nothing else
//! out — so they cannot touch parameters or analytic gradients even by
//! accident. [`random_perturb`] is the budget-matched noise control, and
//! [`fgsm_attack`]/[`pgd_attack`] are the white-box upper-bound baselines.
//!
//! Every attack moves features only: ids, labels, and provenance pass
//! through untouched, and outputs stay inside `[0,1]` per coordinate.
//! Points are processed in parallel and results are assembled in input
//! order, so outputs are independent of thread scheduling.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::linalg::{linf_dist, sign0};
use crate::model::ModelParams;

/// Floor added to queried probabilities before taking `−log`, so a zero
/// probability cannot produce an infinite loss.
const PROB_FLOOR: f64 = 1e-12;

/// Query interface the black-box attacks are confined to: class
/// probabilities for a feature vector, and a running call count.
pub trait ProbQuery: Sync {
    /// Class-probability vector for one input.
    fn probs(&self, features: &[f64]) -> Result<Vec<f64>>;

    /// Total queries served so far, monotone over the object's lifetime.
    fn queries_used(&self) -> u64;
}

/// The deployed model exposed query-only, with an atomic call counter.
pub struct ModelQuery<'a> {
    model: &'a ModelParams,
    counter: AtomicU64,
}

impl<'a> ModelQuery<'a> {
    pub fn new(model: &'a ModelParams) -> Self {
        ModelQuery {
            model,
            counter: AtomicU64::new(0),
        }
    }
}

impl ProbQuery for ModelQuery<'_> {
    fn probs(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.model.arch.dim() {
            return Err(CoreError::DimMismatch(format!(
                "query with {} features against a {}-feature model",
                features.len(),
                self.model.arch.dim()
            )));
        }
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(self.model.predict_proba(features))
    }

    fn queries_used(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// Cross-entropy reconstructed from queried probabilities.
fn loss_from_probs(probs: &[f64], label: usize, point_id: u64) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| CoreError::QueryFailure {
        point_id,
        reason: format!(
            "query returned {} probabilities, label {} out of range",
            probs.len(),
            label
        ),
    })?;
    Ok(-(p + PROB_FLOOR).ln())
}

fn query_loss<Q: ProbQuery + ?Sized>(
    q: &Q,
    features: &[f64],
    label: usize,
    point_id: u64,
    local_queries: &mut u64,
) -> Result<f64> {
    *local_queries += 1;
    let probs = q.probs(features).map_err(|e| CoreError::QueryFailure {
        point_id,
        reason: e.to_string(),
    })?;
    loss_from_probs(&probs, label, point_id)
}

/// Symmetric difference quotient `(ℓ₊ − ℓ₋) / 2h`; exact for quadratics.
pub(crate) fn central_difference(loss_plus: f64, loss_minus: f64, h: f64) -> f64 {
    (loss_plus - loss_minus) / (2.0 * h)
}

/// Per-point record of what an attack did, for downstream reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub point_id: u64,
    /// Queries spent on this point (gradient probes plus the two
    /// bookkeeping evaluations for the loss fields, where applicable).
    pub queries: u64,
    /// Queried loss at the original features, when the budget allowed
    /// measuring it.
    pub loss_before: Option<f64>,
    /// Queried loss at the returned features.
    pub loss_after: Option<f64>,
    /// Largest absolute per-coordinate displacement actually applied.
    pub realized_linf: f64,
}

/// Gradient-estimation attack settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZooConfig {
    /// Per-iteration step magnitude along the estimated gradient sign.
    pub eps: f64,
    /// Finite-difference probe half-width.
    pub fd_step: f64,
    /// Coordinates probed per iteration; inputs with at most this many
    /// dimensions are probed exhaustively, larger ones get a random subset
    /// redrawn each iteration (deterministic per point id).
    pub coord_budget: usize,
    /// Number of estimate-then-step rounds.
    pub iterations: usize,
}

impl Default for ZooConfig {
    fn default() -> Self {
        ZooConfig {
            eps: 0.03,
            fd_step: 1e-4,
            coord_budget: 128,
            iterations: 10,
        }
    }
}

impl ZooConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(CoreError::Param(format!(
                "step magnitude must be non-negative and finite, got {}",
                self.eps
            )));
        }
        if !self.fd_step.is_finite() || self.fd_step <= 0.0 {
            return Err(CoreError::Param(format!(
                "finite-difference step must be positive, got {}",
                self.fd_step
            )));
        }
        if self.coord_budget == 0 || self.iterations == 0 {
            return Err(CoreError::Param(
                "coordinate budget and iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Estimates the loss gradient at `features` over the given coordinates by
/// symmetric difference quotients of queried losses; unprobed coordinates
/// stay zero. This is the estimator the gradient-estimation attack steps
/// on, exposed so its accuracy can be measured against analytic gradients.
/// `local_queries` is incremented once per issued query.
pub fn estimate_gradient<Q: ProbQuery + ?Sized>(
    q: &Q,
    features: &[f64],
    label: usize,
    point_id: u64,
    coords: &[usize],
    fd_step: f64,
    local_queries: &mut u64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; features.len()];
    let mut probe = features.to_vec();
    for &c in coords {
        let x = features[c];
        probe[c] = x + fd_step;
        let lp = query_loss(q, &probe, label, point_id, local_queries)?;
        probe[c] = x - fd_step;
        let lm = query_loss(q, &probe, label, point_id, local_queries)?;
        probe[c] = x;
        grad[c] = central_difference(lp, lm, fd_step);
    }
    Ok(grad)
}

/// Query-only gradient-sign ascent: per iteration, estimate the gradient on
/// a coordinate set and move every probed coordinate by `eps` along its
/// sign, clipping to `[0,1]`. Spends `2·|coords|·iterations` gradient
/// queries plus two loss evaluations per point.
pub fn zoo_attack<Q: ProbQuery + ?Sized>(
    q: &Q,
    z: &Dataset,
    cfg: &ZooConfig,
) -> Result<(Dataset, Vec<AttackTrace>)> {
    cfg.validate()?;
    let dim = z.dim();
    let outcomes: Vec<Result<(Vec<f64>, AttackTrace)>> = z
        .points()
        .par_iter()
        .map(|p| {
            let mut local = 0u64;
            let loss_before = query_loss(q, &p.features, p.label, p.id, &mut local)?;
            let mut x = p.features.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(p.id);
            for _ in 0..cfg.iterations {
                let coords: Vec<usize> = if dim <= cfg.coord_budget {
                    (0..dim).collect()
                } else {
                    let mut picked =
                        index_sample(&mut rng, dim, cfg.coord_budget).into_vec();
                    picked.sort_unstable();
                    picked
                };
                let grad =
                    estimate_gradient(q, &x, p.label, p.id, &coords, cfg.fd_step, &mut local)?;
                for c in coords {
                    x[c] = (x[c] + cfg.eps * sign0(grad[c])).clamp(0.0, 1.0);
                }
            }
            let loss_after = query_loss(q, &x, p.label, p.id, &mut local)?;
            let trace = AttackTrace {
                point_id: p.id,
                queries: local,
                loss_before: Some(loss_before),
                loss_after: Some(loss_after),
                realized_linf: linf_dist(&p.features, &x),
            };
            Ok((x, trace))
        })
        .collect();
    assemble(z, outcomes)
}

/// Coordinate-walk attack settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimbaConfig {
    /// Displacement tried per coordinate, in both directions.
    pub eps: f64,
    /// Per-point cap on queries; `0` forbids even the baseline evaluation,
    /// returning the input unchanged.
    pub max_queries: u64,
    /// Seed for the per-point coordinate visiting order.
    pub seed: u64,
}

impl Default for SimbaConfig {
    fn default() -> Self {
        SimbaConfig {
            eps: 0.1,
            max_queries: u64::MAX,
            seed: 0,
        }
    }
}

impl SimbaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(CoreError::Param(format!(
                "per-coordinate displacement must be non-negative and finite, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Sequential coordinate walk: visit every coordinate once in a seeded
/// random order, try `+eps` then `−eps` (clipped), and keep the first
/// candidate whose queried loss strictly exceeds the current loss. The
/// accepted-loss sequence is therefore strictly increasing by construction.
pub fn simba_attack<Q: ProbQuery + ?Sized>(
    q: &Q,
    z: &Dataset,
    cfg: &SimbaConfig,
) -> Result<(Dataset, Vec<AttackTrace>)> {
    cfg.validate()?;
    let dim = z.dim();
    let outcomes: Vec<Result<(Vec<f64>, AttackTrace)>> = z
        .points()
        .par_iter()
        .map(|p| {
            let mut local = 0u64;
            let mut x = p.features.clone();
            if cfg.max_queries == 0 {
                return Ok((
                    x,
                    AttackTrace {
                        point_id: p.id,
                        queries: 0,
                        loss_before: None,
                        loss_after: None,
                        realized_linf: 0.0,
                    },
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(p.id);
            let mut order: Vec<usize> = (0..dim).collect();
            order.shuffle(&mut rng);
            let loss_before = query_loss(q, &x, p.label, p.id, &mut local)?;
            let mut current = loss_before;
            'walk: for c in order {
                for dir in [cfg.eps, -cfg.eps] {
                    if local >= cfg.max_queries {
                        break 'walk;
                    }
                    let candidate = (x[c] + dir).clamp(0.0, 1.0);
                    if candidate == x[c] {
                        continue;
                    }
                    let old = x[c];
                    x[c] = candidate;
                    let loss = query_loss(q, &x, p.label, p.id, &mut local)?;
                    if loss > current {
                        current = loss;
                        continue 'walk;
                    }
                    x[c] = old;
                }
            }
            let trace = AttackTrace {
                point_id: p.id,
                queries: local,
                loss_before: Some(loss_before),
                loss_after: Some(current),
                realized_linf: linf_dist(&p.features, &x),
            };
            Ok((x, trace))
        })
        .collect();
    assemble(z, outcomes)
}

fn assemble(
    z: &Dataset,
    outcomes: Vec<Result<(Vec<f64>, AttackTrace)>>,
) -> Result<(Dataset, Vec<AttackTrace>)> {
    let mut features = Vec::with_capacity(outcomes.len());
    let mut traces = Vec::with_capacity(outcomes.len());
    for r in outcomes {
        let (f, t) = r?;
        features.push(f);
        traces.push(t);
    }
    Ok((z.with_features(features)?, traces))
}

/// Budget-matched noise control: every coordinate moves by an independent
/// uniform draw from `[−eps, eps]`, clipped to `[0,1]`. Deterministic per
/// seed and point id regardless of thread scheduling.
pub fn random_perturb(z: &Dataset, eps: f64, seed: u64) -> Result<Dataset> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(CoreError::Param(format!(
            "perturbation budget must be non-negative and finite, got {eps}"
        )));
    }
    let features: Vec<Vec<f64>> = z
        .points()
        .par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p.id);
            p.features
                .iter()
                .map(|&x| {
                    let delta = if eps == 0.0 {
                        0.0
                    } else {
                        rng.gen_range(-eps..=eps)
                    };
                    (x + delta).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    z.with_features(features)
}

fn validate_whitebox(m: &ModelParams, z: &Dataset, eps: f64) -> Result<()> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(CoreError::Param(format!(
            "perturbation budget must be non-negative and finite, got {eps}"
        )));
    }
    if z.dim() != m.arch.dim() {
        return Err(CoreError::DimMismatch(format!(
            "{}-feature points against a {}-feature model",
            z.dim(),
            m.arch.dim()
        )));
    }
    Ok(())
}

/// One full-budget step along the sign of the analytic loss gradient.
pub fn fgsm_attack(m: &ModelParams, z: &Dataset, eps: f64) -> Result<Dataset> {
    pgd_attack(m, z, eps, 1, eps)
}

/// Iterated sign-gradient ascent with re-projection onto the `eps` box
/// around the starting features and onto `[0,1]`.
pub fn pgd_attack(
    m: &ModelParams,
    z: &Dataset,
    eps: f64,
    steps: usize,
    step_size: f64,
) -> Result<Dataset> {
    validate_whitebox(m, z, eps)?;
    if steps == 0 {
        return Err(CoreError::Param("ascent needs at least one step".into()));
    }
    if !step_size.is_finite() || step_size < 0.0 {
        return Err(CoreError::Param(format!(
            "step size must be non-negative and finite, got {step_size}"
        )));
    }
    let features: Vec<Vec<f64>> = z
        .points()
        .par_iter()
        .map(|p| {
            let mut moved = p.clone();
            for _ in 0..steps {
                let grad = m.grad_x(&moved);
                for d in 0..moved.features.len() {
                    let stepped = moved.features[d] + step_size * sign0(grad[d]);
                    let lo = (p.features[d] - eps).max(0.0);
                    let hi = (p.features[d] + eps).min(1.0);
                    moved.features[d] = stepped.clamp(lo, hi);
                }
            }
            moved.features
        })
        .collect();
    z.with_features(features)
}
