//! Differentiable classifiers over a flat parameter vector.
//!
//! Three architectures share one interface: multinomial logistic regression,
//! a ReLU multilayer perceptron, and a small two-block convolutional network.
//! All are trained on the ridge-regularized cross-entropy objective
//! `ℓ(θ, z) = CE(f_θ(x), y) + (λ/2)‖θ‖²`, averaged over the training set.
//!
//! Besides training, the module exposes the first- and second-order
//! quantities the attribution mechanisms consume: per-point parameter
//! gradients, input gradients, class-margin gradients, and matrix-free
//! Gauss–Newton curvature products (exact Hessian products in the logistic
//! regression case, where the objective is convex).

mod cnn;
mod lr;
mod mlp;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{DataPoint, Dataset};
use crate::error::{CoreError, Result};
use crate::snapshot;

/// Above this parameter count the curvature operator stays matrix-free.
const DENSE_PARAM_LIMIT: usize = 1500;

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Cross-entropy of the true label given raw logits.
pub(crate) fn ce_from_logits(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Gradient of the class-margin objective `logit_y − logsumexp_{c≠y} logit_c`
/// with respect to the logits: +1 at the label, minus the softmax restricted
/// to the competing classes elsewhere.
pub(crate) fn margin_dlogits(logits: &[f64], label: usize) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for (c, &l) in logits.iter().enumerate() {
        if c != label && l > m {
            m = l;
        }
    }
    let mut out = vec![0.0; logits.len()];
    let mut denom = 0.0;
    for (c, &l) in logits.iter().enumerate() {
        if c != label {
            let e = (l - m).exp();
            out[c] = e;
            denom += e;
        }
    }
    for (c, v) in out.iter_mut().enumerate() {
        *v = if c == label { 1.0 } else { -*v / denom };
    }
    out
}

/// Classifier family plus its structural hyperparameters.
///
/// `l2_reg` is part of the architecture rather than the trainer because the
/// regularizer enters the per-point loss, and therefore every gradient and
/// curvature quantity, not just the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Lr {
        dim: usize,
        classes: usize,
        l2_reg: f64,
    },
    Mlp {
        dim: usize,
        classes: usize,
        hidden: Vec<usize>,
        l2_reg: f64,
    },
    /// Single-channel image classifier; `height` and `width` must be
    /// divisible by 4 so both 2×2 max-pools tile exactly.
    Cnn {
        height: usize,
        width: usize,
        conv1: usize,
        conv2: usize,
        fc_width: usize,
        classes: usize,
        l2_reg: f64,
    },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let (classes, l2) = (self.classes(), self.l2_reg());
        if classes < 2 {
            return Err(CoreError::Param(format!(
                "architecture needs at least 2 classes, got {classes}"
            )));
        }
        if !l2.is_finite() || l2 < 0.0 {
            return Err(CoreError::Param(format!(
                "l2_reg must be finite and non-negative, got {l2}"
            )));
        }
        match self {
            Architecture::Lr { dim, .. } => {
                if *dim == 0 {
                    return Err(CoreError::Param("input dim must be positive".into()));
                }
            }
            Architecture::Mlp { dim, hidden, .. } => {
                if *dim == 0 {
                    return Err(CoreError::Param("input dim must be positive".into()));
                }
                if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
                    return Err(CoreError::Param(
                        "hidden widths must be a non-empty list of positive sizes".into(),
                    ));
                }
            }
            Architecture::Cnn {
                height,
                width,
                conv1,
                conv2,
                fc_width,
                ..
            } => {
                if *height == 0 || *width == 0 || height % 4 != 0 || width % 4 != 0 {
                    return Err(CoreError::Param(format!(
                        "image height and width must be positive multiples of 4 \
                         (two 2×2 pools), got {height}×{width}"
                    )));
                }
                if *conv1 == 0 || *conv2 == 0 || *fc_width == 0 {
                    return Err(CoreError::Param(
                        "conv channel counts and fc width must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Flattened input dimension (pixels for the CNN).
    pub fn dim(&self) -> usize {
        match self {
            Architecture::Lr { dim, .. } | Architecture::Mlp { dim, .. } => *dim,
            Architecture::Cnn { height, width, .. } => height * width,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Architecture::Lr { classes, .. }
            | Architecture::Mlp { classes, .. }
            | Architecture::Cnn { classes, .. } => *classes,
        }
    }

    pub fn l2_reg(&self) -> f64 {
        match self {
            Architecture::Lr { l2_reg, .. }
            | Architecture::Mlp { l2_reg, .. }
            | Architecture::Cnn { l2_reg, .. } => *l2_reg,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Lr { dim, classes, .. } => lr::param_count(*dim, *classes),
            Architecture::Mlp {
                dim,
                classes,
                hidden,
                ..
            } => mlp::param_count(&mlp::layer_dims(*dim, hidden, *classes)),
            Architecture::Cnn { .. } => self.cnn_spec().param_count(),
        }
    }

    fn cnn_spec(&self) -> cnn::Spec {
        match self {
            Architecture::Cnn {
                height,
                width,
                conv1,
                conv2,
                fc_width,
                classes,
                ..
            } => cnn::Spec {
                h: *height,
                w: *width,
                c1: *conv1,
                c2: *conv2,
                fc: *fc_width,
                classes: *classes,
            },
            _ => unreachable!("cnn_spec called on non-CNN architecture"),
        }
    }

    fn mlp_dims(&self) -> Vec<(usize, usize)> {
        match self {
            Architecture::Mlp {
                dim,
                classes,
                hidden,
                ..
            } => mlp::layer_dims(*dim, hidden, *classes),
            _ => unreachable!("mlp_dims called on non-MLP architecture"),
        }
    }

    pub(crate) fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            Architecture::Lr { dim, classes, .. } => lr::forward(*dim, *classes, theta, x),
            _ => self.forward_cached(theta, x).0,
        }
    }

    pub(crate) fn forward_cached(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, Cache) {
        match self {
            Architecture::Lr { dim, classes, .. } => {
                (lr::forward(*dim, *classes, theta, x), Cache::Lr)
            }
            Architecture::Mlp { .. } => {
                let (logits, c) = mlp::forward(&self.mlp_dims(), theta, x);
                (logits, Cache::Mlp(c))
            }
            Architecture::Cnn { .. } => {
                let (logits, c) = cnn::forward(&self.cnn_spec(), theta, x);
                (logits, Cache::Cnn(c))
            }
        }
    }

    /// Accumulate the data-term parameter gradient `Jᵀ·dlogits` into `grad`
    /// and optionally return the input gradient. The ridge term is *not*
    /// included here.
    pub(crate) fn backward(
        &self,
        theta: &[f64],
        x: &[f64],
        cache: &Cache,
        dlogits: &[f64],
        grad: &mut [f64],
        want_x: bool,
    ) -> Option<Vec<f64>> {
        match (self, cache) {
            (Architecture::Lr { dim, classes, .. }, Cache::Lr) => {
                lr::backward_theta(*dim, *classes, x, dlogits, grad);
                if want_x {
                    Some(lr::backward_x(*dim, *classes, theta, dlogits))
                } else {
                    None
                }
            }
            (Architecture::Mlp { .. }, Cache::Mlp(c)) => {
                mlp::backward(&self.mlp_dims(), theta, c, dlogits, grad, want_x)
            }
            (Architecture::Cnn { .. }, Cache::Cnn(c)) => {
                cnn::backward(&self.cnn_spec(), theta, x, c, dlogits, grad, want_x)
            }
            _ => unreachable!("activation cache does not match architecture"),
        }
    }

    /// Tangent of the logits along parameter direction `v` (input held fixed),
    /// reusing the activation pattern of the cached forward pass.
    pub(crate) fn jvp(&self, theta: &[f64], x: &[f64], cache: &Cache, v: &[f64]) -> Vec<f64> {
        match (self, cache) {
            (Architecture::Lr { dim, classes, .. }, Cache::Lr) => {
                lr::jvp(*dim, *classes, v, x)
            }
            (Architecture::Mlp { .. }, Cache::Mlp(c)) => {
                mlp::jvp(&self.mlp_dims(), theta, c, v)
            }
            (Architecture::Cnn { .. }, Cache::Cnn(c)) => {
                cnn::jvp(&self.cnn_spec(), theta, x, c, v)
            }
            _ => unreachable!("activation cache does not match architecture"),
        }
    }
}

/// Per-input activation record consumed by `backward` and `jvp`.
pub(crate) enum Cache {
    Lr,
    Mlp(mlp::Cache),
    Cnn(cnn::Cache),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    /// Adam with the conventional β₁=0.9, β₂=0.999, ε=1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch; `Some(b)` shuffles each epoch and steps on
    /// minibatches of size `b`.
    pub batch_size: Option<usize>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            learning_rate: 0.5,
            batch_size: None,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::Param("epochs must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(CoreError::Param(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(CoreError::Param("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) model: architecture plus flat weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
    /// Seed the training run used; kept so artifacts are self-describing.
    pub train_seed: u64,
}

impl ModelParams {
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        snapshot::save_versioned(path, self)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let m: ModelParams = snapshot::load_versioned(path)?;
        m.arch.validate()?;
        if m.theta.len() != m.arch.param_count() {
            return Err(CoreError::DimMismatch(format!(
                "snapshot has {} parameters but the architecture needs {}",
                m.theta.len(),
                m.arch.param_count()
            )));
        }
        if m.theta.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::NonFinite("model snapshot".into()));
        }
        Ok(m)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.arch.logits(&self.theta, x)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn loss(&self, point: &DataPoint) -> f64 {
        loss_at(&self.arch, &self.theta, &point.features, point.label)
    }

    pub fn mean_loss(&self, data: &Dataset) -> f64 {
        mean_loss_at(&self.arch, &self.theta, data)
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .points()
            .iter()
            .filter(|p| {
                let logits = self.logits(&p.features);
                let best = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(c, _)| c)
                    .unwrap_or(0);
                best == p.label
            })
            .count();
        correct as f64 / data.len() as f64
    }

    /// Gradient of the per-point loss with respect to the parameters,
    /// including the ridge term `λθ`.
    pub fn grad_theta(&self, point: &DataPoint) -> Vec<f64> {
        grad_theta_at(&self.arch, &self.theta, &point.features, point.label)
    }

    /// Gradient of the per-point loss with respect to the input features.
    pub fn grad_x(&self, point: &DataPoint) -> Vec<f64> {
        grad_x_at(&self.arch, &self.theta, &point.features, point.label)
    }

    /// Parameter gradient of the class-margin objective
    /// `logit_y − logsumexp_{c≠y} logit_c` (no ridge term); this is the
    /// feature map used by the projected-gradient attribution method.
    pub fn margin_grad_theta(&self, point: &DataPoint) -> Vec<f64> {
        let (logits, cache) = self.arch.forward_cached(&self.theta, &point.features);
        let dl = margin_dlogits(&logits, point.label);
        let mut grad = vec![0.0; self.theta.len()];
        self.arch
            .backward(&self.theta, &point.features, &cache, &dl, &mut grad, false);
        grad
    }
}

/// Initialize parameters: weights uniform in ±1/√fan_in, biases zero.
pub fn init_theta(arch: &Architecture, seed: u64) -> Result<Vec<f64>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match arch {
        Architecture::Lr { dim, classes, .. } => lr::init(*dim, *classes, &mut rng),
        Architecture::Mlp { .. } => mlp::init(&arch.mlp_dims(), &mut rng),
        Architecture::Cnn { .. } => cnn::init(&arch.cnn_spec(), &mut rng),
    })
}

pub fn loss_at(arch: &Architecture, theta: &[f64], x: &[f64], label: usize) -> f64 {
    let ce = ce_from_logits(&arch.logits(theta, x), label);
    let l2 = arch.l2_reg();
    if l2 == 0.0 {
        ce
    } else {
        ce + 0.5 * l2 * theta.iter().map(|t| t * t).sum::<f64>()
    }
}

pub fn mean_loss_at(arch: &Architecture, theta: &[f64], data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let ce: f64 = data
        .points()
        .iter()
        .map(|p| ce_from_logits(&arch.logits(theta, &p.features), p.label))
        .sum();
    ce / data.len() as f64 + 0.5 * arch.l2_reg() * theta.iter().map(|t| t * t).sum::<f64>()
}

pub fn grad_theta_at(arch: &Architecture, theta: &[f64], x: &[f64], label: usize) -> Vec<f64> {
    let (logits, cache) = arch.forward_cached(theta, x);
    let mut dl = softmax(&logits);
    dl[label] -= 1.0;
    let mut grad = vec![0.0; theta.len()];
    arch.backward(theta, x, &cache, &dl, &mut grad, false);
    let l2 = arch.l2_reg();
    if l2 != 0.0 {
        for (g, t) in grad.iter_mut().zip(theta) {
            *g += l2 * t;
        }
    }
    grad
}

pub fn grad_x_at(arch: &Architecture, theta: &[f64], x: &[f64], label: usize) -> Vec<f64> {
    let (logits, cache) = arch.forward_cached(theta, x);
    let mut dl = softmax(&logits);
    dl[label] -= 1.0;
    let mut grad = vec![0.0; theta.len()];
    arch.backward(theta, x, &cache, &dl, &mut grad, true)
        .expect("input gradient requested")
}

/// Mean loss and mean parameter gradient over a set of points (sequential
/// accumulation, so repeated calls are bitwise deterministic).
pub fn mean_loss_and_grad(
    arch: &Architecture,
    theta: &[f64],
    points: &[DataPoint],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; theta.len()];
    let mut ce_sum = 0.0;
    for p in points {
        let (logits, cache) = arch.forward_cached(theta, &p.features);
        ce_sum += ce_from_logits(&logits, p.label);
        let mut dl = softmax(&logits);
        dl[p.label] -= 1.0;
        arch.backward(theta, &p.features, &cache, &dl, &mut grad, false);
    }
    let n = points.len().max(1) as f64;
    let l2 = arch.l2_reg();
    let mut theta_sq = 0.0;
    for (g, t) in grad.iter_mut().zip(theta) {
        *g = *g / n + l2 * t;
        theta_sq += t * t;
    }
    (ce_sum / n + 0.5 * l2 * theta_sq, grad)
}

fn validate_training_inputs(arch: &Architecture, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    arch.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(CoreError::Param("cannot train on an empty dataset".into()));
    }
    if data.dim() != arch.dim() {
        return Err(CoreError::DimMismatch(format!(
            "dataset dim {} vs architecture dim {}",
            data.dim(),
            arch.dim()
        )));
    }
    if data.classes() > arch.classes() {
        return Err(CoreError::Param(format!(
            "dataset has {} classes but the architecture only outputs {}",
            data.classes(),
            arch.classes()
        )));
    }
    Ok(())
}

/// Train by (mini)batch gradient descent from a seeded initialization.
/// Identical inputs produce bitwise-identical parameters.
pub fn train(arch: &Architecture, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    validate_training_inputs(arch, data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta = match arch {
        Architecture::Lr { dim, classes, .. } => lr::init(*dim, *classes, &mut rng),
        Architecture::Mlp { .. } => mlp::init(&arch.mlp_dims(), &mut rng),
        Architecture::Cnn { .. } => cnn::init(&arch.cnn_spec(), &mut rng),
    };
    train_loop(arch, data, cfg, theta, rng)
}

/// Continue training from an already-fitted model (warm start) instead of a
/// fresh seeded initialization. The epoch shuffle stream is still derived
/// from `cfg.seed`, so warm runs are as reproducible as cold ones.
pub fn train_warm(start: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    validate_training_inputs(&start.arch, data, cfg)?;
    if start.theta.len() != start.arch.param_count() {
        return Err(CoreError::DimMismatch(format!(
            "starting parameters have length {} but the architecture needs {}",
            start.theta.len(),
            start.arch.param_count()
        )));
    }
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_loop(&start.arch, data, cfg, start.theta.clone(), rng)
}

fn train_loop(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    mut theta: Vec<f64>,
    mut rng: ChaCha8Rng,
) -> Result<ModelParams> {
    let p = theta.len();
    let mut opt = Optimizer::new(cfg.optimizer, p);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<DataPoint> = Vec::new();

    for epoch in 0..cfg.epochs {
        let epoch_loss = match cfg.batch_size {
            None => {
                let (loss, grad) = mean_loss_and_grad(arch, &theta, data.points());
                opt.step(&mut theta, &grad, cfg.learning_rate);
                loss
            }
            Some(b) => {
                order.shuffle(&mut rng);
                let mut weighted = 0.0;
                for chunk in order.chunks(b) {
                    batch.clear();
                    batch.extend(chunk.iter().map(|&i| data.point(i).clone()));
                    let (loss, grad) = mean_loss_and_grad(arch, &theta, &batch);
                    weighted += loss * chunk.len() as f64;
                    opt.step(&mut theta, &grad, cfg.learning_rate);
                }
                weighted / data.len() as f64
            }
        };
        if !epoch_loss.is_finite() {
            return Err(CoreError::Diverged { epoch });
        }
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(CoreError::NonFinite("trained parameters".into()));
    }
    Ok(ModelParams {
        arch: arch.clone(),
        theta,
        train_seed: cfg.seed,
    })
}

enum Optimizer {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u32,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, p: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; p],
                v: vec![0.0; p],
                t: 0,
            },
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * g;
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let bc1 = 1.0 - B1.powi(*t as i32);
                let bc2 = 1.0 - B2.powi(*t as i32);
                for i in 0..theta.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    theta[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Exact dense Hessian of the mean regularized loss for logistic regression.
pub fn lr_dense_hessian(model: &ModelParams, data: &Dataset) -> Result<DMatrix<f64>> {
    match &model.arch {
        Architecture::Lr {
            dim,
            classes,
            l2_reg,
        } => {
            if data.dim() != *dim {
                return Err(CoreError::DimMismatch(format!(
                    "dataset dim {} vs architecture dim {dim}",
                    data.dim()
                )));
            }
            lr::dense_hessian(*dim, *classes, *l2_reg, &model.theta, data)
        }
        _ => Err(CoreError::Param(
            "dense Hessian is only available for logistic regression".into(),
        )),
    }
}

struct PointCurvature {
    probs: Vec<f64>,
    cache: Cache,
}

/// Curvature (Hessian-vector) operator for the mean training loss.
///
/// Products use the Gauss–Newton form `(1/n)Σ JᵀS J v + λv` with
/// `S = diag(p) − ppᵀ`, which equals the exact Hessian for logistic
/// regression and is a positive-semidefinite surrogate for the piecewise
///-linear networks. Logistic models small enough to afford it precompute the
/// dense matrix; everything else streams over cached activations.
pub struct CurvatureOp<'a> {
    arch: &'a Architecture,
    theta: &'a [f64],
    kind: CurvatureKind<'a>,
}

enum CurvatureKind<'a> {
    Dense(DMatrix<f64>),
    Streaming {
        data: &'a Dataset,
        points: Vec<PointCurvature>,
    },
}

impl<'a> CurvatureOp<'a> {
    pub fn new(model: &'a ModelParams, data: &'a Dataset) -> Result<Self> {
        if matches!(model.arch, Architecture::Lr { .. })
            && model.arch.param_count() <= DENSE_PARAM_LIMIT
        {
            let h = lr_dense_hessian(model, data)?;
            return Ok(CurvatureOp {
                arch: &model.arch,
                theta: &model.theta,
                kind: CurvatureKind::Dense(h),
            });
        }
        Self::new_matrix_free(model, data)
    }

    /// Always use the streaming path, regardless of size. Useful for testing
    /// the two paths against each other and for memory-constrained callers.
    pub fn new_matrix_free(model: &'a ModelParams, data: &'a Dataset) -> Result<Self> {
        if data.dim() != model.arch.dim() {
            return Err(CoreError::DimMismatch(format!(
                "dataset dim {} vs architecture dim {}",
                data.dim(),
                model.arch.dim()
            )));
        }
        if data.is_empty() {
            return Err(CoreError::Param(
                "curvature operator needs a non-empty dataset".into(),
            ));
        }
        let points = data
            .points()
            .iter()
            .map(|p| {
                let (logits, cache) = model.arch.forward_cached(&model.theta, &p.features);
                PointCurvature {
                    probs: softmax(&logits),
                    cache,
                }
            })
            .collect();
        Ok(CurvatureOp {
            arch: &model.arch,
            theta: &model.theta,
            kind: CurvatureKind::Streaming { data, points },
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn hvp(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.theta.len(), "curvature product dimension");
        match &self.kind {
            CurvatureKind::Dense(h) => {
                let mut out = vec![0.0; v.len()];
                for (r, o) in out.iter_mut().enumerate() {
                    let row = h.row(r);
                    *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
                }
                out
            }
            CurvatureKind::Streaming { data, points } => {
                let mut out = vec![0.0; v.len()];
                for (p, pc) in data.points().iter().zip(points) {
                    let t = self.arch.jvp(self.theta, &p.features, &pc.cache, v);
                    let pt: f64 = pc.probs.iter().zip(&t).map(|(a, b)| a * b).sum();
                    let dl: Vec<f64> = pc
                        .probs
                        .iter()
                        .zip(&t)
                        .map(|(&pr, &tc)| pr * (tc - pt))
                        .collect();
                    self.arch
                        .backward(self.theta, &p.features, &pc.cache, &dl, &mut out, false);
                }
                let n = data.len() as f64;
                let l2 = self.arch.l2_reg();
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = *o / n + l2 * vi;
                }
                out
            }
        }
    }
}
