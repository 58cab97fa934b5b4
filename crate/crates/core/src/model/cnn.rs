//! Small convolutional network for single-channel images:
//! conv3×3(pad 1) → ReLU → maxpool2 → conv3×3(pad 1) → ReLU → maxpool2 →
//! dense(fc_width) → ReLU → dense(classes).
//!
//! Height and width must be divisible by 4 so both pools tile exactly.
//! Parameter layout: `[w_conv1, b_conv1, w_conv2, b_conv2, w_fc1, b_fc1,
//! w_fc2, b_fc2]`, convolution weights stored `(out, in, ky, kx)` row-major.

use rand::Rng;

#[derive(Clone, Copy)]
pub(super) struct Spec {
    pub h: usize,
    pub w: usize,
    pub c1: usize,
    pub c2: usize,
    pub fc: usize,
    pub classes: usize,
}

impl Spec {
    fn h2(&self) -> usize {
        self.h / 2
    }
    fn w2(&self) -> usize {
        self.w / 2
    }
    fn flat(&self) -> usize {
        self.c2 * (self.h / 4) * (self.w / 4)
    }
    /// Offsets of each parameter block in the flat vector.
    fn offsets(&self) -> [usize; 8] {
        let w1 = self.c1 * 9;
        let w2 = self.c2 * self.c1 * 9;
        let wf1 = self.fc * self.flat();
        let wf2 = self.classes * self.fc;
        let mut out = [0; 8];
        let sizes = [w1, self.c1, w2, self.c2, wf1, self.fc, wf2, self.classes];
        let mut acc = 0;
        for (o, s) in out.iter_mut().zip(sizes) {
            *o = acc;
            acc += s;
        }
        out
    }
    pub(super) fn param_count(&self) -> usize {
        self.c1 * 9
            + self.c1
            + self.c2 * self.c1 * 9
            + self.c2
            + self.fc * self.flat()
            + self.fc
            + self.classes * self.fc
            + self.classes
    }
}

pub(super) fn init(spec: &Spec, rng: &mut impl Rng) -> Vec<f64> {
    let mut theta = vec![0.0; spec.param_count()];
    let off = spec.offsets();
    let blocks = [
        (off[0], spec.c1 * 9, 9.0),
        (off[2], spec.c2 * spec.c1 * 9, (spec.c1 * 9) as f64),
        (off[4], spec.fc * spec.flat(), spec.flat() as f64),
        (off[6], spec.classes * spec.fc, spec.fc as f64),
    ];
    for (start, len, fan_in) in blocks {
        let bound = 1.0 / fan_in.sqrt();
        for w in &mut theta[start..start + len] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    theta
}

/// 3×3 convolution with zero padding 1 and stride 1.
/// `inp` is `(ci, h, w)` row-major; returns `(co, h, w)`.
fn conv_forward(
    inp: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    bias: Option<&[f64]>,
    co: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        let base_o = o * h * w;
        for i in 0..ci {
            let base_i = i * h * w;
            let k = &wgt[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let yy = y + ky;
                        if yy < 1 || yy > h {
                            continue;
                        }
                        let yy = yy - 1;
                        for kx in 0..3 {
                            let xx = x + kx;
                            if xx < 1 || xx > w {
                                continue;
                            }
                            acc += k[ky * 3 + kx] * inp[base_i + yy * w + (xx - 1)];
                        }
                    }
                    out[base_o + y * w + x] += acc;
                }
            }
        }
        if let Some(b) = bias {
            for v in &mut out[base_o..base_o + h * w] {
                *v += b[o];
            }
        }
    }
    out
}

/// Gradient of the convolution inputs given `dout` (same spatial size).
fn conv_backward_input(
    dout: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    co: usize,
) -> Vec<f64> {
    let mut dinp = vec![0.0; ci * h * w];
    for o in 0..co {
        let base_o = o * h * w;
        for i in 0..ci {
            let base_i = i * h * w;
            let k = &wgt[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
            for y in 0..h {
                for x in 0..w {
                    let d = dout[base_o + y * w + x];
                    if d == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let yy = y + ky;
                        if yy < 1 || yy > h {
                            continue;
                        }
                        for kx in 0..3 {
                            let xx = x + kx;
                            if xx < 1 || xx > w {
                                continue;
                            }
                            dinp[base_i + (yy - 1) * w + (xx - 1)] += d * k[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    dinp
}

/// Accumulate weight/bias gradients of the convolution into `dw`/`db`.
fn conv_backward_params(
    dout: &[f64],
    inp: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for o in 0..co {
        let base_o = o * h * w;
        for i in 0..ci {
            let base_i = i * h * w;
            let dk = &mut dw[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
            for y in 0..h {
                for x in 0..w {
                    let d = dout[base_o + y * w + x];
                    if d == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let yy = y + ky;
                        if yy < 1 || yy > h {
                            continue;
                        }
                        for kx in 0..3 {
                            let xx = x + kx;
                            if xx < 1 || xx > w {
                                continue;
                            }
                            dk[ky * 3 + kx] += d * inp[base_i + (yy - 1) * w + (xx - 1)];
                        }
                    }
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                db[o] += dout[base_o + y * w + x];
            }
        }
    }
}

/// 2×2 max pooling with stride 2; also returns the flat argmax per cell.
fn pool_forward(inp: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    let mut arg = vec![0usize; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ch * h * w + (2 * y + dy) * w + (2 * x + dx);
                        if inp[idx] > best {
                            best = inp[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[ch * ho * wo + y * wo + x] = best;
                arg[ch * ho * wo + y * wo + x] = best_idx;
            }
        }
    }
    (out, arg)
}

fn pool_backward(dout: &[f64], arg: &[usize], in_len: usize) -> Vec<f64> {
    let mut dinp = vec![0.0; in_len];
    for (d, &idx) in dout.iter().zip(arg) {
        dinp[idx] += d;
    }
    dinp
}

/// Pool tangent: select the same winners as the primal pass.
fn pool_jvp(tin: &[f64], arg: &[usize]) -> Vec<f64> {
    arg.iter().map(|&idx| tin[idx]).collect()
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn relu_gate(values: &mut [f64], pre: &[f64]) {
    for (v, &z) in values.iter_mut().zip(pre) {
        if z <= 0.0 {
            *v = 0.0;
        }
    }
}

fn dense_forward(theta: &[f64], w_off: usize, b_off: usize, out: usize, inp: usize, a: &[f64]) -> Vec<f64> {
    (0..out)
        .map(|o| {
            theta[b_off + o]
                + theta[w_off + o * inp..w_off + (o + 1) * inp]
                    .iter()
                    .zip(a)
                    .map(|(wi, ai)| wi * ai)
                    .sum::<f64>()
        })
        .collect()
}

pub(crate) struct Cache {
    a1: Vec<f64>,
    arg1: Vec<usize>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    arg2: Vec<usize>,
    p2: Vec<f64>,
    f1: Vec<f64>,
    r1: Vec<f64>,
}

pub(super) fn forward(spec: &Spec, theta: &[f64], x: &[f64]) -> (Vec<f64>, Cache) {
    let off = spec.offsets();
    let (h, w) = (spec.h, spec.w);
    let a1 = conv_forward(x, 1, h, w, &theta[off[0]..], Some(&theta[off[1]..off[1] + spec.c1]), spec.c1);
    let (p1, arg1) = pool_forward(&relu(&a1), spec.c1, h, w);
    let (h2, w2) = (spec.h2(), spec.w2());
    let a2 = conv_forward(&p1, spec.c1, h2, w2, &theta[off[2]..], Some(&theta[off[3]..off[3] + spec.c2]), spec.c2);
    let (p2, arg2) = pool_forward(&relu(&a2), spec.c2, h2, w2);
    let f1 = dense_forward(theta, off[4], off[5], spec.fc, spec.flat(), &p2);
    let r1 = relu(&f1);
    let logits = dense_forward(theta, off[6], off[7], spec.classes, spec.fc, &r1);
    (
        logits,
        Cache {
            a1,
            arg1,
            p1,
            a2,
            arg2,
            p2,
            f1,
            r1,
        },
    )
}

pub(super) fn backward(
    spec: &Spec,
    theta: &[f64],
    x: &[f64],
    cache: &Cache,
    dlogits: &[f64],
    grad: &mut [f64],
    want_x: bool,
) -> Option<Vec<f64>> {
    let off = spec.offsets();
    let (h, w) = (spec.h, spec.w);
    let (h2, w2) = (spec.h2(), spec.w2());
    let flat = spec.flat();

    // fc2
    for o in 0..spec.classes {
        let d = dlogits[o];
        for (g, ai) in grad[off[6] + o * spec.fc..off[6] + (o + 1) * spec.fc]
            .iter_mut()
            .zip(&cache.r1)
        {
            *g += d * ai;
        }
        grad[off[7] + o] += d;
    }
    let mut df1 = vec![0.0; spec.fc];
    for o in 0..spec.classes {
        let d = dlogits[o];
        if d == 0.0 {
            continue;
        }
        for (u, wi) in df1
            .iter_mut()
            .zip(&theta[off[6] + o * spec.fc..off[6] + (o + 1) * spec.fc])
        {
            *u += d * wi;
        }
    }
    relu_gate(&mut df1, &cache.f1);

    // fc1
    for o in 0..spec.fc {
        let d = df1[o];
        if d != 0.0 {
            for (g, ai) in grad[off[4] + o * flat..off[4] + (o + 1) * flat]
                .iter_mut()
                .zip(&cache.p2)
            {
                *g += d * ai;
            }
        }
        grad[off[5] + o] += d;
    }
    let mut dp2 = vec![0.0; flat];
    for o in 0..spec.fc {
        let d = df1[o];
        if d == 0.0 {
            continue;
        }
        for (u, wi) in dp2
            .iter_mut()
            .zip(&theta[off[4] + o * flat..off[4] + (o + 1) * flat])
        {
            *u += d * wi;
        }
    }

    // pool2 + relu2 + conv2
    let mut da2 = pool_backward(&dp2, &cache.arg2, spec.c2 * h2 * w2);
    relu_gate(&mut da2, &cache.a2);
    {
        let (dw2, db2) = {
            let (left, right) = grad.split_at_mut(off[3]);
            (&mut left[off[2]..], &mut right[..spec.c2])
        };
        conv_backward_params(&da2, &cache.p1, spec.c1, h2, w2, spec.c2, dw2, db2);
    }
    let dp1 = conv_backward_input(&da2, spec.c1, h2, w2, &theta[off[2]..], spec.c2);

    // pool1 + relu1 + conv1
    let mut da1 = pool_backward(&dp1, &cache.arg1, spec.c1 * h * w);
    relu_gate(&mut da1, &cache.a1);
    {
        let (dw1, db1) = {
            let (left, right) = grad.split_at_mut(off[1]);
            (&mut left[off[0]..], &mut right[..spec.c1])
        };
        conv_backward_params(&da1, x, 1, h, w, spec.c1, dw1, db1);
    }
    if want_x {
        Some(conv_backward_input(&da1, 1, h, w, &theta[off[0]..], spec.c1))
    } else {
        None
    }
}

/// Tangent of the logits along a parameter direction `v` (input tangent 0).
pub(super) fn jvp(spec: &Spec, theta: &[f64], x: &[f64], cache: &Cache, v: &[f64]) -> Vec<f64> {
    let off = spec.offsets();
    let (h, w) = (spec.h, spec.w);
    let (h2, w2) = (spec.h2(), spec.w2());

    // t_a1 = dW1 * x + db1 (input tangent is zero)
    let mut t1 = conv_forward(x, 1, h, w, &v[off[0]..], Some(&v[off[1]..off[1] + spec.c1]), spec.c1);
    relu_gate(&mut t1, &cache.a1);
    let tp1 = pool_jvp(&t1, &cache.arg1);

    // t_a2 = dW2 * p1 + db2 + W2 * t_p1
    let mut t2 = conv_forward(&tp1, spec.c1, h2, w2, &theta[off[2]..], None, spec.c2);
    let t2b = conv_forward(&cache.p1, spec.c1, h2, w2, &v[off[2]..], Some(&v[off[3]..off[3] + spec.c2]), spec.c2);
    for (a, b) in t2.iter_mut().zip(t2b) {
        *a += b;
    }
    relu_gate(&mut t2, &cache.a2);
    let tp2 = pool_jvp(&t2, &cache.arg2);

    // t_f1 = dWf1 * p2 + dbf1 + Wf1 * t_p2
    let flat = spec.flat();
    let mut tf1 = dense_forward(v, off[4], off[5], spec.fc, flat, &cache.p2);
    for o in 0..spec.fc {
        tf1[o] += theta[off[4] + o * flat..off[4] + (o + 1) * flat]
            .iter()
            .zip(&tp2)
            .map(|(wi, ti)| wi * ti)
            .sum::<f64>();
    }
    relu_gate(&mut tf1, &cache.f1);

    // t_logits = dWf2 * r1 + dbf2 + Wf2 * t_rf1
    let mut tl = dense_forward(v, off[6], off[7], spec.classes, spec.fc, &cache.r1);
    for o in 0..spec.classes {
        tl[o] += theta[off[6] + o * spec.fc..off[6] + (o + 1) * spec.fc]
            .iter()
            .zip(&tf1)
            .map(|(wi, ti)| wi * ti)
            .sum::<f64>();
    }
    tl
}
