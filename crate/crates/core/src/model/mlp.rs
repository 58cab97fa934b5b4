//! Fully connected ReLU network.
//!
//! Layer ℓ maps `acts[ℓ]` through `W_ℓ · a + b_ℓ`; every layer but the last
//! is followed by ReLU. Parameter layout is `[W_0, b_0, W_1, b_1, ...]` with
//! each `W` stored row-major `(out × in)`.

use rand::Rng;

/// (out, in) shape of every affine layer.
pub(super) fn layer_dims(dim: usize, hidden: &[usize], classes: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(hidden.len() + 1);
    let mut prev = dim;
    for &h in hidden {
        dims.push((h, prev));
        prev = h;
    }
    dims.push((classes, prev));
    dims
}

pub(super) fn param_count(dims: &[(usize, usize)]) -> usize {
    dims.iter().map(|&(o, i)| o * (i + 1)).sum()
}

pub(super) fn init(dims: &[(usize, usize)], rng: &mut impl Rng) -> Vec<f64> {
    let mut theta = Vec::with_capacity(param_count(dims));
    for &(out, inp) in dims {
        let bound = 1.0 / (inp as f64).sqrt();
        for _ in 0..out * inp {
            theta.push(rng.gen_range(-bound..bound));
        }
        theta.extend(std::iter::repeat(0.0).take(out));
    }
    theta
}

pub(crate) struct Cache {
    /// Pre-activations per layer (the last one is the logits).
    zs: Vec<Vec<f64>>,
    /// Layer inputs: `acts[0]` is x, `acts[ℓ]` is relu(zs[ℓ-1]).
    acts: Vec<Vec<f64>>,
}

fn affine(theta: &[f64], offset: usize, out: usize, inp: usize, a: &[f64]) -> Vec<f64> {
    let w = &theta[offset..offset + out * inp];
    let b = &theta[offset + out * inp..offset + out * (inp + 1)];
    (0..out)
        .map(|o| {
            b[o] + w[o * inp..(o + 1) * inp]
                .iter()
                .zip(a)
                .map(|(wi, ai)| wi * ai)
                .sum::<f64>()
        })
        .collect()
}

pub(super) fn forward(dims: &[(usize, usize)], theta: &[f64], x: &[f64]) -> (Vec<f64>, Cache) {
    let mut cache = Cache {
        zs: Vec::with_capacity(dims.len()),
        acts: Vec::with_capacity(dims.len()),
    };
    let mut a = x.to_vec();
    let mut offset = 0;
    for (ell, &(out, inp)) in dims.iter().enumerate() {
        let z = affine(theta, offset, out, inp, &a);
        offset += out * (inp + 1);
        cache.acts.push(a);
        if ell + 1 < dims.len() {
            a = z.iter().map(|&v| v.max(0.0)).collect();
        } else {
            a = z.clone();
        }
        cache.zs.push(z);
    }
    (a, cache)
}

/// Backpropagate `dlogits`; accumulates the data-term parameter gradient
/// into `grad` and optionally returns the input gradient.
pub(super) fn backward(
    dims: &[(usize, usize)],
    theta: &[f64],
    cache: &Cache,
    dlogits: &[f64],
    grad: &mut [f64],
    want_x: bool,
) -> Option<Vec<f64>> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(out, inp) in dims {
        offsets.push(off);
        off += out * (inp + 1);
    }

    let mut delta = dlogits.to_vec();
    for ell in (0..dims.len()).rev() {
        let (out, inp) = dims[ell];
        let offset = offsets[ell];
        let a = &cache.acts[ell];
        for o in 0..out {
            let d = delta[o];
            if d != 0.0 {
                let row = &mut grad[offset + o * inp..offset + (o + 1) * inp];
                for (g, ai) in row.iter_mut().zip(a) {
                    *g += d * ai;
                }
            }
            grad[offset + out * inp + o] += d;
        }
        if ell == 0 && !want_x {
            return None;
        }
        // u = Wᵀ delta, gated by the previous layer's ReLU mask (none at x).
        let w = &theta[offset..offset + out * inp];
        let mut u = vec![0.0; inp];
        for o in 0..out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            for (ui, wi) in u.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                *ui += d * wi;
            }
        }
        if ell == 0 {
            return Some(u);
        }
        let z_prev = &cache.zs[ell - 1];
        for (ui, zi) in u.iter_mut().zip(z_prev) {
            if *zi <= 0.0 {
                *ui = 0.0;
            }
        }
        delta = u;
    }
    None
}

/// Tangent of the logits along a parameter direction `v` (input tangent 0).
pub(super) fn jvp(dims: &[(usize, usize)], theta: &[f64], cache: &Cache, v: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = vec![0.0; cache.acts[0].len()];
    let mut offset = 0;
    for (ell, &(out, inp)) in dims.iter().enumerate() {
        let a = &cache.acts[ell];
        // t_z = V a + v_b + W t
        let mut tz = affine(v, offset, out, inp, a);
        let w = &theta[offset..offset + out * inp];
        for o in 0..out {
            tz[o] += w[o * inp..(o + 1) * inp]
                .iter()
                .zip(&t)
                .map(|(wi, ti)| wi * ti)
                .sum::<f64>();
        }
        offset += out * (inp + 1);
        if ell + 1 < dims.len() {
            let z = &cache.zs[ell];
            t = tz
                .iter()
                .zip(z)
                .map(|(&ti, &zi)| if zi > 0.0 { ti } else { 0.0 })
                .collect();
        } else {
            return tz;
        }
    }
    unreachable!("mlp has at least one layer")
}
