//! Multinomial logistic regression: logits = W x + b.
//!
//! Parameter layout: `[W row-major (classes × dim), b (classes)]`. The model
//! is linear in its parameters, so the Gauss-Newton curvature assembled in
//! the parent module is the exact Hessian of the ridge-regularized
//! cross-entropy objective — which is what the stability theory relies on.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::Result;
use rand::Rng;

pub(super) fn param_count(dim: usize, classes: usize) -> usize {
    classes * (dim + 1)
}

pub(super) fn init(dim: usize, classes: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut theta = vec![0.0; param_count(dim, classes)];
    for w in theta.iter_mut().take(classes * dim) {
        *w = rng.gen_range(-bound..bound);
    }
    theta
}

pub(super) fn forward(dim: usize, classes: usize, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let bias = classes * dim;
    (0..classes)
        .map(|c| {
            let row = &theta[c * dim..(c + 1) * dim];
            theta[bias + c] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        })
        .collect()
}

/// Accumulate `dlogits ⊗ [x,1]` into `out` (the pure data-term gradient).
pub(super) fn backward_theta(
    dim: usize,
    classes: usize,
    x: &[f64],
    dlogits: &[f64],
    out: &mut [f64],
) {
    let bias = classes * dim;
    for c in 0..classes {
        let d = dlogits[c];
        if d == 0.0 {
            continue;
        }
        let row = &mut out[c * dim..(c + 1) * dim];
        for (o, xi) in row.iter_mut().zip(x) {
            *o += d * xi;
        }
        out[bias + c] += d;
    }
}

pub(super) fn backward_x(dim: usize, classes: usize, theta: &[f64], dlogits: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; dim];
    for c in 0..classes {
        let d = dlogits[c];
        let row = &theta[c * dim..(c + 1) * dim];
        for (dxj, w) in dx.iter_mut().zip(row) {
            *dxj += d * w;
        }
    }
    dx
}

/// Tangent of the logits along a parameter direction `v`.
pub(super) fn jvp(dim: usize, classes: usize, v: &[f64], x: &[f64]) -> Vec<f64> {
    forward(dim, classes, v, x)
}

/// Exact dense Hessian of the mean ridge-regularized cross-entropy loss.
///
/// Block structure: H[(c1,j1),(c2,j2)] = mean_z S_z[c1,c2]·x̃[j1]·x̃[j2] + λδ,
/// with S_z = diag(p) − p pᵀ and x̃ = [x, 1]. Index mapping matches the flat
/// parameter layout.
pub(super) fn dense_hessian(
    dim: usize,
    classes: usize,
    l2_reg: f64,
    theta: &[f64],
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    let p = param_count(dim, classes);
    let n = data.len() as f64;
    let mut h = DMatrix::<f64>::zeros(p, p);
    let idx = |c: usize, j: usize| -> usize {
        if j < dim {
            c * dim + j
        } else {
            classes * dim + c
        }
    };
    for point in data.points() {
        let logits = forward(dim, classes, theta, &point.features);
        let probs = super::softmax(&logits);
        for c1 in 0..classes {
            for c2 in 0..classes {
                let s_cc = if c1 == c2 {
                    probs[c1] * (1.0 - probs[c1])
                } else {
                    -probs[c1] * probs[c2]
                };
                let s = s_cc / n;
                if s == 0.0 {
                    continue;
                }
                for j1 in 0..=dim {
                    let x1 = if j1 < dim { point.features[j1] } else { 1.0 };
                    if x1 == 0.0 {
                        continue;
                    }
                    let r = idx(c1, j1);
                    for j2 in 0..=dim {
                        let x2 = if j2 < dim { point.features[j2] } else { 1.0 };
                        h[(r, idx(c2, j2))] += s * x1 * x2;
                    }
                }
            }
        }
    }
    for i in 0..p {
        h[(i, i)] += l2_reg;
    }
    Ok(h)
}
