//! Row-major sequence kernels. A sequence of `n` vectors of width `d` is a
//! flat slice of length `n * d`.

use photon_dfa_core::Tensor;

pub(crate) const LN_EPS: f64 = 1e-5;

/// `y[i] = W x[i] + b` with `W` stored `[out, in]`.
pub(crate) fn linear(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (dout, din) = (w.rows(), w.cols());
    let n = x.len() / din;
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let xi = &x[i * din..(i + 1) * din];
        for o in 0..dout {
            let wr = w.row(o);
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for k in 0..din {
                acc += wr[k] * xi[k];
            }
            y[i * dout + o] = acc;
        }
    }
    y
}

/// Accumulates `dW += dy^T x`, `db += sum dy` and returns `dx = dy W`.
pub(crate) fn linear_backward(dy: &[f64], x: &[f64], w: &Tensor, gw: &mut Tensor, gb: Option<&mut Tensor>) -> Vec<f64> {
    let (dout, din) = (w.rows(), w.cols());
    let n = x.len() / din;
    let mut dx = vec![0.0; n * din];
    for i in 0..n {
        let xi = &x[i * din..(i + 1) * din];
        let dxi = &mut dx[i * din..(i + 1) * din];
        for o in 0..dout {
            let g = dy[i * dout + o];
            if g == 0.0 {
                continue;
            }
            let wr = w.row(o);
            let gr = gw.row_mut(o);
            for k in 0..din {
                dxi[k] += g * wr[k];
                gr[k] += g * xi[k];
            }
        }
    }
    if let Some(gb) = gb {
        let gbd = gb.data_mut();
        for i in 0..n {
            for o in 0..dout {
                gbd[o] += dy[i * dout + o];
            }
        }
    }
    dx
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], gain: &Tensor, shift: &Tensor) -> (Vec<f64>, LayerNormCache) {
    let d = gain.len();
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for k in 0..d {
            let h = (row[k] - mean) * r;
            xhat[i * d + k] = h;
            y[i * d + k] = gain.data()[k] * h + shift.data()[k];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    gain: &Tensor,
    g_gain: &mut Tensor,
    g_shift: &mut Tensor,
) -> Vec<f64> {
    let d = gain.len();
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for k in 0..d {
            g_gain.data_mut()[k] += dyi[k] * xh[k];
            g_shift.data_mut()[k] += dyi[k];
            let g = dyi[k] * gain.data()[k];
            mean_g += g;
            mean_gx += g * xh[k];
        }
        mean_g /= d as f64;
        mean_gx /= d as f64;
        for k in 0..d {
            let g = dyi[k] * gain.data()[k];
            dx[i * d + k] = cache.rstd[i] * (g - mean_g - xh[k] * mean_gx);
        }
    }
    dx
}

/// Causal multi-head attention over already projected `q`, `k`, `v`.
/// Returns the concatenated head outputs and the attention weights
/// `[head][i][j]` (zero for `j > i`).
pub(crate) fn causal_attention(q: &[f64], k: &[f64], v: &[f64], n: usize, heads: usize, e: usize) -> (Vec<f64>, Vec<f64>) {
    let hd = e / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; n * e];
    let mut probs = vec![0.0; heads * n * n];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let qi = &q[i * e + off..i * e + off + hd];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k[j * e + off..j * e + off + hd];
                let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                p[j] = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for pj in p.iter_mut().take(i + 1) {
                *pj = (*pj - max).exp();
                z += *pj;
            }
            for j in 0..=i {
                p[j] /= z;
                let vj = &v[j * e + off..j * e + off + hd];
                let oi = &mut out[i * e + off..i * e + off + hd];
                for t in 0..hd {
                    oi[t] += p[j] * vj[t];
                }
            }
        }
    }
    (out, probs)
}

/// Gradients of [`causal_attention`] with respect to `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn causal_attention_backward(
    d_out: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    n: usize,
    heads: usize,
    e: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = e / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (vec![0.0; n * e], vec![0.0; n * e], vec![0.0; n * e]);
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let doi = &d_out[i * e + off..i * e + off + hd];
            let mut dot_pd = 0.0;
            for j in 0..=i {
                let vj = &v[j * e + off..j * e + off + hd];
                dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                dot_pd += p[j] * dp[j];
                for t in 0..hd {
                    dv[j * e + off + t] += p[j] * doi[t];
                }
            }
            for j in 0..=i {
                let ds = p[j] * (dp[j] - dot_pd) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..hd {
                    dq[i * e + off + t] += ds * k[j * e + off + t];
                    dk[j * e + off + t] += ds * q[i * e + off + t];
                }
            }
        }
    }
    (dq, dk, dv)
}
