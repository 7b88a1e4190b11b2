//! Forward pass with cached activations and the matching reverse pass.

use super::layout::{Dense, EncoderOffsets, ParamLayout};
use super::AnsatzConfig;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// `out (m x n) = a (m x k) * b (k x n)`, all row-major.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `grad (k x n) += a^T (k x m) * d (m x n)`.
fn accumulate_at_b(grad: &mut [f64], a: &[f64], d: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let grow = &mut grad[p * n..(p + 1) * n];
            for (g, &dv) in grow.iter_mut().zip(drow) {
                *g += aip * dv;
            }
        }
    }
}

/// `out (m x k) += d (m x n) * w^T (n x k)` with `w` stored `k x n`.
fn accumulate_a_bt(out: &mut [f64], d: &[f64], w: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let wrow = &w[p * n..(p + 1) * n];
            out[i * k + p] += drow.iter().zip(wrow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, d: usize) -> (Vec<f64>, LayerNormCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gain[c] * h + bias[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `dx`; accumulates gain and bias gradients.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    gain: &[f64],
    d_gain: &mut [f64],
    d_bias: &mut [f64],
    rows: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        for c in 0..d {
            d_gain[c] += dyr[c] * xh[c];
            d_bias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.inv_std[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

struct EncoderCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]` attention weights.
    probs: Vec<f64>,
    ln1: LayerNormCache,
    hidden: Vec<f64>,
    ffn_pre: Vec<f64>,
    ln2: LayerNormCache,
}

struct MlpCache {
    /// Input to each dense layer, including the head; `acts[0]` is the
    /// token feature vector.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

/// Everything the reverse pass needs from one evaluation.
pub(crate) struct ForwardPass {
    tokens: Vec<usize>,
    encoder: Vec<EncoderCache>,
    mlps: Vec<MlpCache>,
    pub features: Vec<f64>,
    /// `D` orbital matrices, each `N_so x N_e` row-major.
    pub orbitals: Vec<Vec<f64>>,
}

pub(crate) struct Shapes {
    pub n_tokens: usize,
    pub n_so: usize,
    pub n_e: usize,
}

fn dense_forward(params: &[f64], layer: &Dense, x: &[f64]) -> Vec<f64> {
    let w = &params[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
    let mut y = params[layer.bias..layer.bias + layer.fan_out].to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (yj, &wij) in y.iter_mut().zip(&w[i * layer.fan_out..(i + 1) * layer.fan_out]) {
            *yj += xi * wij;
        }
    }
    y
}

/// Accumulates weight and bias gradients, returns the input gradient.
fn dense_backward(params: &[f64], grad: &mut [f64], layer: &Dense, x: &[f64], dy: &[f64]) -> Vec<f64> {
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    for (j, &g) in dy.iter().enumerate() {
        grad[layer.bias + j] += g;
    }
    let mut dx = vec![0.0; fi];
    let w = &params[layer.weight..layer.weight + fi * fo];
    for i in 0..fi {
        let wrow = &w[i * fo..(i + 1) * fo];
        let grow = &mut grad[layer.weight + i * fo..layer.weight + (i + 1) * fo];
        let xi = x[i];
        let mut acc = 0.0;
        for j in 0..fo {
            grow[j] += xi * dy[j];
            acc += wrow[j] * dy[j];
        }
        dx[i] = acc;
    }
    dx
}

fn encoder_forward(
    cfg: &AnsatzConfig,
    params: &[f64],
    off: &EncoderOffsets,
    x: &[f64],
    n_t: usize,
) -> (Vec<f64>, EncoderCache) {
    let d = cfg.d_f;
    let da = cfg.d_atten;
    let dh = da / cfg.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = matmul(x, &params[off.w_q..off.w_q + d * da], n_t, d, da);
    let k = matmul(x, &params[off.w_k..off.w_k + d * da], n_t, d, da);
    let v = matmul(x, &params[off.w_v..off.w_v + d * da], n_t, d, da);
    let mut probs = vec![0.0; cfg.n_heads * n_t * n_t];
    // Heads write disjoint column blocks; columns at or beyond d_atten stay zero.
    let mut residual = x.to_vec();
    for h in 0..cfg.n_heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n_t {
            let p = &mut probs[(h * n_t + i) * n_t..(h * n_t + i + 1) * n_t];
            for j in 0..n_t {
                p[j] = scale
                    * cols
                        .clone()
                        .map(|c| q[i * da + c] * k[j * da + c])
                        .sum::<f64>();
            }
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in p.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in p.iter_mut() {
                *s /= z;
            }
            for c in cols.clone() {
                residual[i * d + c] += (0..n_t).map(|j| p[j] * v[j * da + c]).sum::<f64>();
            }
        }
    }
    let (hidden, ln1) = layer_norm(
        &residual,
        &params[off.ln1_gain..off.ln1_gain + d],
        &params[off.ln1_bias..off.ln1_bias + d],
        n_t,
        d,
    );
    let mut ffn_pre = matmul(&hidden, &params[off.ffn.weight..off.ffn.weight + d * d], n_t, d, d);
    for i in 0..n_t {
        for c in 0..d {
            ffn_pre[i * d + c] += params[off.ffn.bias + c];
        }
    }
    let mut residual2 = hidden.clone();
    for (r, &p) in residual2.iter_mut().zip(&ffn_pre) {
        *r += p.max(0.0);
    }
    let (out, ln2) = layer_norm(
        &residual2,
        &params[off.ln2_gain..off.ln2_gain + d],
        &params[off.ln2_bias..off.ln2_bias + d],
        n_t,
        d,
    );
    (
        out,
        EncoderCache {
            input: x.to_vec(),
            q,
            k,
            v,
            probs,
            ln1,
            hidden,
            ffn_pre,
            ln2,
        },
    )
}

fn encoder_backward(
    cfg: &AnsatzConfig,
    params: &[f64],
    grad: &mut [f64],
    off: &EncoderOffsets,
    cache: &EncoderCache,
    d_out: &[f64],
    n_t: usize,
) -> Vec<f64> {
    let d = cfg.d_f;
    let da = cfg.d_atten;
    let dh = da / cfg.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (g2, b2) = (off.ln2_gain, off.ln2_bias);
    let mut d_ln2_gain = vec![0.0; d];
    let mut d_ln2_bias = vec![0.0; d];
    let d_res2 = layer_norm_backward(
        d_out,
        &cache.ln2,
        &params[g2..g2 + d],
        &mut d_ln2_gain,
        &mut d_ln2_bias,
        n_t,
        d,
    );
    add_into(&mut grad[g2..g2 + d], &d_ln2_gain);
    add_into(&mut grad[b2..b2 + d], &d_ln2_bias);

    let mut d_hidden = d_res2.clone();
    let d_pre: Vec<f64> = d_res2
        .iter()
        .zip(&cache.ffn_pre)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();
    let fw = off.ffn.weight;
    accumulate_at_b(&mut grad[fw..fw + d * d], &cache.hidden, &d_pre, n_t, d, d);
    for i in 0..n_t {
        for c in 0..d {
            grad[off.ffn.bias + c] += d_pre[i * d + c];
        }
    }
    accumulate_a_bt(&mut d_hidden, &d_pre, &params[fw..fw + d * d], n_t, d, d);

    let (g1, b1) = (off.ln1_gain, off.ln1_bias);
    let mut d_ln1_gain = vec![0.0; d];
    let mut d_ln1_bias = vec![0.0; d];
    let d_res1 = layer_norm_backward(
        &d_hidden,
        &cache.ln1,
        &params[g1..g1 + d],
        &mut d_ln1_gain,
        &mut d_ln1_bias,
        n_t,
        d,
    );
    add_into(&mut grad[g1..g1 + d], &d_ln1_gain);
    add_into(&mut grad[b1..b1 + d], &d_ln1_bias);

    let mut dx = d_res1.clone();
    let mut dq = vec![0.0; n_t * da];
    let mut dk = vec![0.0; n_t * da];
    let mut dv = vec![0.0; n_t * da];
    let mut dp = vec![0.0; n_t];
    for h in 0..cfg.n_heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n_t {
            let p = &cache.probs[(h * n_t + i) * n_t..(h * n_t + i + 1) * n_t];
            for j in 0..n_t {
                dp[j] = cols
                    .clone()
                    .map(|c| d_res1[i * d + c] * cache.v[j * da + c])
                    .sum::<f64>();
                for c in cols.clone() {
                    dv[j * da + c] += p[j] * d_res1[i * d + c];
                }
            }
            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..n_t {
                let ds = p[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in cols.clone() {
                    dq[i * da + c] += ds * cache.k[j * da + c];
                    dk[j * da + c] += ds * cache.q[i * da + c];
                }
            }
        }
    }
    for (w, dw) in [(off.w_q, &dq), (off.w_k, &dk), (off.w_v, &dv)] {
        accumulate_at_b(&mut grad[w..w + d * da], &cache.input, dw, n_t, d, da);
        accumulate_a_bt(&mut dx, dw, &params[w..w + d * da], n_t, d, da);
    }
    dx
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub(crate) fn forward(
    cfg: &AnsatzConfig,
    layout: &ParamLayout,
    shapes: &Shapes,
    params: &[f64],
    tokens: &[usize],
) -> ForwardPass {
    let d = cfg.d_f;
    let n_t = shapes.n_tokens;
    let width = 1usize << cfg.t;
    let mut x = vec![0.0; n_t * d];
    for (n, &code) in tokens.iter().enumerate() {
        let start = layout.embedding + (n * width + code) * d;
        x[n * d..(n + 1) * d].copy_from_slice(&params[start..start + d]);
    }
    let mut encoder = Vec::with_capacity(layout.encoder.len());
    for off in &layout.encoder {
        let (next, cache) = encoder_forward(cfg, params, off, &x, n_t);
        encoder.push(cache);
        x = next;
    }

    let per_det = cfg.t * shapes.n_e;
    let mut orbitals = vec![vec![0.0; shapes.n_so * shapes.n_e]; cfg.n_dets];
    let mut mlps = Vec::with_capacity(n_t);
    for (n, mlp) in layout.mlps.iter().enumerate() {
        let mut acts = vec![x[n * d..(n + 1) * d].to_vec()];
        let mut pre = Vec::with_capacity(mlp.hidden.len());
        for layer in &mlp.hidden {
            let z = dense_forward(params, layer, acts.last().unwrap());
            acts.push(z.iter().map(|v| v.max(0.0)).collect());
            pre.push(z);
        }
        let out = dense_forward(params, &mlp.head, acts.last().unwrap());
        for (det, orb) in orbitals.iter_mut().enumerate() {
            for r in 0..cfg.t {
                let row = n * cfg.t + r;
                if row >= shapes.n_so {
                    break;
                }
                let src = &out[det * per_det + r * shapes.n_e..det * per_det + (r + 1) * shapes.n_e];
                orb[row * shapes.n_e..(row + 1) * shapes.n_e].copy_from_slice(src);
            }
        }
        mlps.push(MlpCache { acts, pre });
    }
    ForwardPass {
        tokens: tokens.to_vec(),
        encoder,
        mlps,
        features: x,
        orbitals,
    }
}

/// Reverse pass from `d ln|psi| / d orbitals[det]` to the flat gradient.
pub(crate) fn backward(
    cfg: &AnsatzConfig,
    layout: &ParamLayout,
    shapes: &Shapes,
    params: &[f64],
    pass: &ForwardPass,
    d_orbitals: &[Vec<f64>],
) -> Vec<f64> {
    let d = cfg.d_f;
    let n_t = shapes.n_tokens;
    let per_det = cfg.t * shapes.n_e;
    let mut grad = vec![0.0; layout.total];
    let mut d_x = vec![0.0; n_t * d];
    for (n, mlp) in layout.mlps.iter().enumerate() {
        let mut d_out = vec![0.0; cfg.n_dets * per_det];
        for (det, d_orb) in d_orbitals.iter().enumerate() {
            for r in 0..cfg.t {
                let row = n * cfg.t + r;
                if row >= shapes.n_so {
                    break;
                }
                d_out[det * per_det + r * shapes.n_e..det * per_det + (r + 1) * shapes.n_e]
                    .copy_from_slice(&d_orb[row * shapes.n_e..(row + 1) * shapes.n_e]);
            }
        }
        if d_out.iter().all(|&v| v == 0.0) {
            continue;
        }
        let cache = &pass.mlps[n];
        let mut delta = dense_backward(params, &mut grad, &mlp.head, cache.acts.last().unwrap(), &d_out);
        for (l, layer) in mlp.hidden.iter().enumerate().rev() {
            for (g, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = dense_backward(params, &mut grad, layer, &cache.acts[l], &delta);
        }
        d_x[n * d..(n + 1) * d].copy_from_slice(&delta);
    }
    for (off, cache) in layout.encoder.iter().zip(&pass.encoder).rev() {
        d_x = encoder_backward(cfg, params, &mut grad, off, cache, &d_x, n_t);
    }
    let width = 1usize << cfg.t;
    for (n, &code) in pass.tokens.iter().enumerate() {
        let start = layout.embedding + (n * width + code) * d;
        add_into(&mut grad[start..start + d], &d_x[n * d..(n + 1) * d]);
    }
    grad
}
