//! Pre-norm decoder-only transformer with learned positions, GELU MLP and an
//! untied output head. Forward caches every activation the backward pass
//! needs; gradients are accumulated into one flat buffer mirroring the
//! parameter layout.

use super::params::{LayerSlots, Slots};
use super::real::{gemm, Mat, Real};
use super::ModelConfig;
use crate::corpus::TokenId;

pub(crate) const LN_EPS: f64 = 1e-5;
/// Target marker for positions excluded from the loss.
pub(crate) const IGNORE: TokenId = TokenId::MAX;

/// `seqs` rows of `len` tokens each, row-major.
pub(crate) struct Batch<'a> {
    pub inputs: &'a [TokenId],
    pub targets: &'a [TokenId],
    pub seqs: usize,
    pub len: usize,
}

struct LayerCache<T> {
    x_in: Vec<T>,
    ln1: Vec<T>,
    mean1: Vec<T>,
    rstd1: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    y: Vec<T>,
    x_mid: Vec<T>,
    ln2: Vec<T>,
    mean2: Vec<T>,
    rstd2: Vec<T>,
    hpre: Vec<T>,
    hact: Vec<T>,
}

pub(crate) struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    x_out: Vec<T>,
    lnf: Vec<T>,
    meanf: Vec<T>,
    rstdf: Vec<T>,
    /// Softmax probabilities, `[seqs * len, vocab]`.
    pub probs: Vec<T>,
}

pub(crate) struct Transformer<'a, T> {
    pub cfg: &'a ModelConfig,
    pub slots: &'a Slots,
    pub p: &'a [T],
}

pub(crate) fn layernorm<T: Real>(
    x: &[T],
    g: &[T],
    b: &[T],
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    d: usize,
) {
    let eps = T::of(LN_EPS);
    let inv_d = T::of(1.0 / d as f64);
    for (r, (xr, or)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mu = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for i in 0..d {
            or[i] = (xr[i] - mu) * rs * g[i] + b[i];
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

/// Adds the input gradient to `dx` and parameter gradients to `dg`/`db`.
#[allow(clippy::too_many_arguments)]
fn layernorm_backward<T: Real>(
    dout: &[T],
    x: &[T],
    mean: &[T],
    rstd: &[T],
    g: &[T],
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    d: usize,
) {
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..mean.len() {
        let xr = &x[r * d..(r + 1) * d];
        let dr = &dout[r * d..(r + 1) * d];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            let dxhat = dr[i] * g[i];
            sum_dxhat = sum_dxhat + dxhat;
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
            dg[i] = dg[i] + dr[i] * xhat;
            db[i] = db[i] + dr[i];
        }
        let m1 = sum_dxhat * inv_d;
        let m2 = sum_dxhat_xhat * inv_d;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            dxr[i] = dxr[i] + rs * (dr[i] * g[i] - m1 - xhat * m2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// `out[n, o] = inp[n, i] @ w[i, o] + bias`.
pub(crate) fn linear<T: Real>(inp: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T], n: usize, i: usize, o: usize) {
    gemm(inp, Mat::dense(n, i), w, Mat::dense(i, o), out, Mat::dense(n, o), false);
    if let Some(bias) = bias {
        for row in out.chunks_exact_mut(o) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
    }
}

/// Gradients of `out = inp @ w + b`: accumulates `dw`, `db`, and writes or
/// accumulates `dinp`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Real>(
    dout: &[T],
    inp: &[T],
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    dinp: &mut [T],
    n: usize,
    i: usize,
    o: usize,
    accumulate_dinp: bool,
) {
    gemm(inp, Mat::dense(n, i).t(), dout, Mat::dense(n, o), dw, Mat::dense(i, o), true);
    if let Some(db) = db {
        for row in dout.chunks_exact(o) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
    }
    gemm(dout, Mat::dense(n, o), w, Mat::dense(i, o).t(), dinp, Mat::dense(n, i), accumulate_dinp);
}

/// Row-wise softmax in place; normalizers accumulate in f64.
pub(crate) fn softmax_rows<T: Real>(x: &mut [T], width: usize) {
    for row in x.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += v.to_f64().unwrap_or(0.0);
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v = T::of(v.to_f64().unwrap_or(0.0) * inv);
        }
    }
}

impl<'a, T: Real> Transformer<'a, T> {
    fn w(&self, r: &std::ops::Range<usize>) -> &'a [T] {
        &self.p[r.clone()]
    }

    fn embed(&self, batch: &Batch<'_>, x: &mut [T]) {
        let d = self.cfg.model_width;
        let tok = self.w(&self.slots.tok_emb);
        let pos = self.w(&self.slots.pos_emb);
        for (n, row) in x.chunks_exact_mut(d).enumerate() {
            let t = batch.inputs[n] as usize;
            let p = n % batch.len;
            for i in 0..d {
                row[i] = tok[t * d + i] + pos[p * d + i];
            }
        }
    }

    fn attention(&self, qkv: &[T], att: &mut [T], y: &mut [T], seqs: usize, len: usize) {
        let d = self.cfg.model_width;
        let heads = self.cfg.head_count;
        let hd = self.cfg.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());
        for b in 0..seqs {
            for h in 0..heads {
                let base = b * len * 3 * d;
                let q = &qkv[base + h * hd..];
                let k = &qkv[base + d + h * hd..];
                let v = &qkv[base + 2 * d + h * hd..];
                let a = &mut att[(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
                gemm(q, Mat::strided(len, hd, 3 * d), k, Mat::strided(len, hd, 3 * d).t(), a, Mat::dense(len, len), false);
                for t in 0..len {
                    let row = &mut a[t * len..(t + 1) * len];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = if j <= t { *s * scale } else { T::neg_infinity() };
                    }
                }
                softmax_rows(a, len);
                let out = &mut y[b * len * d + h * hd..];
                gemm(a, Mat::dense(len, len), v, Mat::strided(len, hd, 3 * d), out, Mat::strided(len, hd, d), false);
            }
        }
    }

    fn layer_forward(&self, ls: &LayerSlots, x: &mut Vec<T>, seqs: usize, len: usize) -> LayerCache<T> {
        let d = self.cfg.model_width;
        let hd4 = self.cfg.hidden_width();
        let n = seqs * len;
        let x_in = x.clone();
        let mut ln1 = vec![T::zero(); n * d];
        let mut mean1 = vec![T::zero(); n];
        let mut rstd1 = vec![T::zero(); n];
        layernorm(&x_in, self.w(&ls.ln1_g), self.w(&ls.ln1_b), &mut ln1, &mut mean1, &mut rstd1, d);
        let mut qkv = vec![T::zero(); n * 3 * d];
        linear(&ln1, self.w(&ls.qkv_w), Some(self.w(&ls.qkv_b)), &mut qkv, n, d, 3 * d);
        let mut att = vec![T::zero(); seqs * self.cfg.head_count * len * len];
        let mut y = vec![T::zero(); n * d];
        self.attention(&qkv, &mut att, &mut y, seqs, len);
        let mut proj = vec![T::zero(); n * d];
        linear(&y, self.w(&ls.proj_w), Some(self.w(&ls.proj_b)), &mut proj, n, d, d);
        let x_mid: Vec<T> = x_in.iter().zip(&proj).map(|(&a, &b)| a + b).collect();
        let mut ln2 = vec![T::zero(); n * d];
        let mut mean2 = vec![T::zero(); n];
        let mut rstd2 = vec![T::zero(); n];
        layernorm(&x_mid, self.w(&ls.ln2_g), self.w(&ls.ln2_b), &mut ln2, &mut mean2, &mut rstd2, d);
        let mut hpre = vec![T::zero(); n * hd4];
        linear(&ln2, self.w(&ls.fc_w), Some(self.w(&ls.fc_b)), &mut hpre, n, d, hd4);
        let hact: Vec<T> = hpre.iter().map(|&v| gelu(v)).collect();
        let mut mlp = vec![T::zero(); n * d];
        linear(&hact, self.w(&ls.mproj_w), Some(self.w(&ls.mproj_b)), &mut mlp, n, hd4, d);
        for ((o, &a), &b) in x.iter_mut().zip(&x_mid).zip(&mlp) {
            *o = a + b;
        }
        LayerCache {
            x_in,
            ln1,
            mean1,
            rstd1,
            qkv,
            att,
            y,
            x_mid,
            ln2,
            mean2,
            rstd2,
            hpre,
            hact,
        }
    }

    pub fn forward(&self, batch: &Batch<'_>) -> ForwardCache<T> {
        let d = self.cfg.model_width;
        let v = self.cfg.vocab_size;
        let n = batch.seqs * batch.len;
        let mut x = vec![T::zero(); n * d];
        self.embed(batch, &mut x);
        let layers = self
            .slots
            .layers
            .iter()
            .map(|ls| self.layer_forward(ls, &mut x, batch.seqs, batch.len))
            .collect();
        let mut lnf = vec![T::zero(); n * d];
        let mut meanf = vec![T::zero(); n];
        let mut rstdf = vec![T::zero(); n];
        layernorm(&x, self.w(&self.slots.lnf_g), self.w(&self.slots.lnf_b), &mut lnf, &mut meanf, &mut rstdf, d);
        let mut probs = vec![T::zero(); n * v];
        linear(&lnf, self.w(&self.slots.head_w), None, &mut probs, n, d, v);
        softmax_rows(&mut probs, v);
        ForwardCache {
            layers,
            x_out: x,
            lnf,
            meanf,
            rstdf,
            probs,
        }
    }

    /// Summed negative log-likelihood and the count of scored positions.
    pub fn nll(&self, cache: &ForwardCache<T>, targets: &[TokenId]) -> (f64, usize) {
        self.nll_rows(cache, targets, 0..targets.len())
    }

    pub fn nll_rows(&self, cache: &ForwardCache<T>, targets: &[TokenId], rows: std::ops::Range<usize>) -> (f64, usize) {
        let v = self.cfg.vocab_size;
        let mut total = 0.0;
        let mut count = 0;
        for r in rows {
            let t = targets[r];
            if t != IGNORE {
                let p = cache.probs[r * v + t as usize].to_f64().unwrap_or(0.0);
                total -= p.max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        (total, count)
    }

    /// Mean cross-entropy over scored positions and its gradient.
    pub fn loss_and_grad(&self, batch: &Batch<'_>) -> (f64, Vec<T>) {
        let cache = self.forward(batch);
        let (total, count) = self.nll(&cache, batch.targets);
        let grads = self.backward(batch, cache, count);
        (total / count.max(1) as f64, grads)
    }

    fn backward(&self, batch: &Batch<'_>, cache: ForwardCache<T>, count: usize) -> Vec<T> {
        let cfg = self.cfg;
        let d = cfg.model_width;
        let v = cfg.vocab_size;
        let hd4 = cfg.hidden_width();
        let (seqs, len) = (batch.seqs, batch.len);
        let n = seqs * len;
        let mut grads = vec![T::zero(); self.p.len()];

        let inv = T::of(1.0 / count.max(1) as f64);
        let mut dlogits = cache.probs;
        for (row, &t) in dlogits.chunks_exact_mut(v).zip(batch.targets) {
            if t == IGNORE {
                row.iter_mut().for_each(|x| *x = T::zero());
            } else {
                row[t as usize] = row[t as usize] - T::one();
                row.iter_mut().for_each(|x| *x = *x * inv);
            }
        }
        let mut dlnf = vec![T::zero(); n * d];
        linear_backward(
            &dlogits,
            &cache.lnf,
            self.w(&self.slots.head_w),
            &mut grads[self.slots.head_w.clone()],
            None,
            &mut dlnf,
            n,
            d,
            v,
            false,
        );
        drop(dlogits);
        let mut dx = vec![T::zero(); n * d];
        {
            let (dg, db) = split_pair(&mut grads, &self.slots.lnf_g, &self.slots.lnf_b);
            layernorm_backward(&dlnf, &cache.x_out, &cache.meanf, &cache.rstdf, self.w(&self.slots.lnf_g), &mut dx, dg, db, d);
        }

        for (ls, lc) in self.slots.layers.iter().zip(cache.layers).rev() {
            // MLP branch
            let mut dhact = vec![T::zero(); n * hd4];
            {
                let (dw, db) = split_pair(&mut grads, &ls.mproj_w, &ls.mproj_b);
                linear_backward(&dx, &lc.hact, self.w(&ls.mproj_w), dw, Some(db), &mut dhact, n, hd4, d, false);
            }
            for (g, &h) in dhact.iter_mut().zip(&lc.hpre) {
                *g = *g * gelu_grad(h);
            }
            let mut dln2 = vec![T::zero(); n * d];
            {
                let (dw, db) = split_pair(&mut grads, &ls.fc_w, &ls.fc_b);
                linear_backward(&dhact, &lc.ln2, self.w(&ls.fc_w), dw, Some(db), &mut dln2, n, d, hd4, false);
            }
            drop(dhact);
            {
                let (dg, db) = split_pair(&mut grads, &ls.ln2_g, &ls.ln2_b);
                layernorm_backward(&dln2, &lc.x_mid, &lc.mean2, &lc.rstd2, self.w(&ls.ln2_g), &mut dx, dg, db, d);
            }
            // attention branch; dx now holds d(x_mid)
            let mut dy = vec![T::zero(); n * d];
            {
                let (dw, db) = split_pair(&mut grads, &ls.proj_w, &ls.proj_b);
                linear_backward(&dx, &lc.y, self.w(&ls.proj_w), dw, Some(db), &mut dy, n, d, d, false);
            }
            let dqkv = self.attention_backward(&dy, &lc.qkv, &lc.att, seqs, len);
            let mut dln1 = vec![T::zero(); n * d];
            {
                let (dw, db) = split_pair(&mut grads, &ls.qkv_w, &ls.qkv_b);
                linear_backward(&dqkv, &lc.ln1, self.w(&ls.qkv_w), dw, Some(db), &mut dln1, n, d, 3 * d, false);
            }
            {
                let (dg, db) = split_pair(&mut grads, &ls.ln1_g, &ls.ln1_b);
                layernorm_backward(&dln1, &lc.x_in, &lc.mean1, &lc.rstd1, self.w(&ls.ln1_g), &mut dx, dg, db, d);
            }
        }

        // embeddings
        let (tok, pos) = (self.slots.tok_emb.start, self.slots.pos_emb.start);
        for (row_i, row) in dx.chunks_exact(d).enumerate() {
            let t = batch.inputs[row_i] as usize;
            let p = row_i % len;
            for i in 0..d {
                grads[tok + t * d + i] = grads[tok + t * d + i] + row[i];
                grads[pos + p * d + i] = grads[pos + p * d + i] + row[i];
            }
        }
        grads
    }

    fn attention_backward(&self, dy: &[T], qkv: &[T], att: &[T], seqs: usize, len: usize) -> Vec<T> {
        let d = self.cfg.model_width;
        let heads = self.cfg.head_count;
        let hd = self.cfg.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut dqkv = vec![T::zero(); seqs * len * 3 * d];
        let mut datt = vec![T::zero(); len * len];
        for b in 0..seqs {
            for h in 0..heads {
                let base = b * len * 3 * d;
                let a = &att[(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
                let dyh = &dy[b * len * d + h * hd..];
                let dym = Mat::strided(len, hd, d);
                let head = Mat::strided(len, hd, 3 * d);
                // dA = dY V^T
                gemm(dyh, dym, &qkv[base + 2 * d + h * hd..], head.t(), &mut datt, Mat::dense(len, len), false);
                // dV = A^T dY
                gemm(a, Mat::dense(len, len).t(), dyh, dym, &mut dqkv[base + 2 * d + h * hd..], head, false);
                // softmax backward, then the score scale
                for t in 0..len {
                    let ar = &a[t * len..(t + 1) * len];
                    let dr = &mut datt[t * len..(t + 1) * len];
                    let dot: T = ar.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
                    for j in 0..len {
                        dr[j] = ar[j] * (dr[j] - dot) * scale;
                    }
                }
                // dQ = dS K, dK = dS^T Q
                gemm(&datt, Mat::dense(len, len), &qkv[base + d + h * hd..], head, &mut dqkv[base + h * hd..], head, false);
                gemm(&datt, Mat::dense(len, len).t(), &qkv[base + h * hd..], head, &mut dqkv[base + d + h * hd..], head, false);
            }
        }
        dqkv
    }
}

/// Disjoint mutable views of two tensors in one gradient buffer.
fn split_pair<'g, T>(
    grads: &'g mut [T],
    first: &std::ops::Range<usize>,
    second: &std::ops::Range<usize>,
) -> (&'g mut [T], &'g mut [T]) {
    assert!(first.end <= second.start, "tensors must be ordered");
    let (lo, hi) = grads.split_at_mut(second.start);
    (&mut lo[first.clone()], &mut hi[..second.len()])
}
