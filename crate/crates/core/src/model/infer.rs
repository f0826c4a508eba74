//! Incremental decoding with a key/value cache. Every sequence in a batch
//! advances one position per call.

use super::real::Real;
use super::transformer::{gelu, layernorm, linear, Transformer};
use crate::corpus::TokenId;

pub(crate) struct KvCache<T> {
    seqs: usize,
    capacity: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

impl<T: Real> KvCache<T> {
    pub fn new(layers: usize, seqs: usize, capacity: usize, width: usize) -> Self {
        let buf = || vec![T::zero(); seqs * capacity * width];
        KvCache {
            seqs,
            capacity,
            keys: (0..layers).map(|_| buf()).collect(),
            values: (0..layers).map(|_| buf()).collect(),
        }
    }
}

impl<'a, T: Real> Transformer<'a, T> {
    /// Feeds `tokens[b]` at position `pos` for every sequence and returns the
    /// next-token logits, `[seqs, vocab]`.
    pub fn step(&self, cache: &mut KvCache<T>, tokens: &[TokenId], pos: usize) -> Vec<T> {
        let cfg = self.cfg;
        let d = cfg.model_width;
        let hd4 = cfg.hidden_width();
        let heads = cfg.head_count;
        let hd = cfg.head_dim();
        let n = cache.seqs;
        assert_eq!(tokens.len(), n);
        assert!(pos < cache.capacity && pos < cfg.context_window);
        let w = |r: &std::ops::Range<usize>| &self.p[r.clone()];
        let scale = 1.0 / (hd as f64).sqrt();

        let tok = w(&self.slots.tok_emb);
        let pemb = &w(&self.slots.pos_emb)[pos * d..(pos + 1) * d];
        let mut x = vec![T::zero(); n * d];
        for (row, &t) in x.chunks_exact_mut(d).zip(tokens) {
            let e = &tok[t as usize * d..(t as usize + 1) * d];
            for i in 0..d {
                row[i] = e[i] + pemb[i];
            }
        }

        let mut a = vec![T::zero(); n * d];
        let mut mean = vec![T::zero(); n];
        let mut rstd = vec![T::zero(); n];
        let mut qkv = vec![T::zero(); n * 3 * d];
        let mut y = vec![T::zero(); n * d];
        let mut tmp = vec![T::zero(); n * d];
        let mut hidden = vec![T::zero(); n * hd4];
        let mut scores = vec![0.0f64; pos + 1];

        for (li, ls) in self.slots.layers.iter().enumerate() {
            layernorm(&x, w(&ls.ln1_g), w(&ls.ln1_b), &mut a, &mut mean, &mut rstd, d);
            linear(&a, w(&ls.qkv_w), Some(w(&ls.qkv_b)), &mut qkv, n, d, 3 * d);
            let keys = &mut cache.keys[li];
            let values = &mut cache.values[li];
            for b in 0..n {
                let at = (b * cache.capacity + pos) * d;
                let row = &qkv[b * 3 * d..(b + 1) * 3 * d];
                keys[at..at + d].copy_from_slice(&row[d..2 * d]);
                values[at..at + d].copy_from_slice(&row[2 * d..]);
            }
            for b in 0..n {
                let base = b * cache.capacity * d;
                for h in 0..heads {
                    let q = &qkv[b * 3 * d + h * hd..b * 3 * d + (h + 1) * hd];
                    let mut max = f64::NEG_INFINITY;
                    for (t, s) in scores.iter_mut().enumerate() {
                        let k = &keys[base + t * d + h * hd..base + t * d + (h + 1) * hd];
                        let dot: T = q.iter().zip(k).map(|(&u, &v)| u * v).sum();
                        *s = dot.to_f64().unwrap_or(f64::NEG_INFINITY) * scale;
                        max = max.max(*s);
                    }
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let out = &mut y[b * d + h * hd..b * d + (h + 1) * hd];
                    out.iter_mut().for_each(|o| *o = T::zero());
                    for (t, &s) in scores.iter().enumerate() {
                        let p = T::of(s / total);
                        let v = &values[base + t * d + h * hd..base + t * d + (h + 1) * hd];
                        for (o, &vv) in out.iter_mut().zip(v) {
                            *o = *o + p * vv;
                        }
                    }
                }
            }
            linear(&y, w(&ls.proj_w), Some(w(&ls.proj_b)), &mut tmp, n, d, d);
            x.iter_mut().zip(&tmp).for_each(|(x, &t)| *x = *x + t);
            layernorm(&x, w(&ls.ln2_g), w(&ls.ln2_b), &mut a, &mut mean, &mut rstd, d);
            linear(&a, w(&ls.fc_w), Some(w(&ls.fc_b)), &mut hidden, n, d, hd4);
            hidden.iter_mut().for_each(|h| *h = gelu(*h));
            linear(&hidden, w(&ls.mproj_w), Some(w(&ls.mproj_b)), &mut tmp, n, hd4, d);
            x.iter_mut().zip(&tmp).for_each(|(x, &t)| *x = *x + t);
        }

        layernorm(&x, w(&self.slots.lnf_g), w(&self.slots.lnf_b), &mut a, &mut mean, &mut rstd, d);
        let mut logits = vec![T::zero(); n * cfg.vocab_size];
        linear(&a, w(&self.slots.head_w), None, &mut logits, n, d, cfg.vocab_size);
        logits
    }

    /// Greedy continuation of equal-length contexts.
    pub fn greedy(&self, contexts: &[&[TokenId]], l: usize) -> Vec<Vec<TokenId>> {
        let n = contexts.len();
        if n == 0 || l == 0 {
            return vec![Vec::new(); n];
        }
        let k = contexts[0].len();
        debug_assert!(contexts.iter().all(|c| c.len() == k));
        let capacity = k + l - 1;
        let mut cache = KvCache::new(self.cfg.layer_count, n, capacity.max(1), self.cfg.model_width);
        let mut out = vec![Vec::with_capacity(l); n];
        let mut fed: Vec<TokenId> = Vec::with_capacity(n);
        let mut logits = Vec::new();
        for pos in 0..k {
            fed.clear();
            fed.extend(contexts.iter().map(|c| c[pos]));
            logits = self.step(&mut cache, &fed, pos);
        }
        let v = self.cfg.vocab_size;
        for i in 0..l {
            fed.clear();
            for (b, row) in logits.chunks_exact(v).enumerate() {
                let t = argmax(row);
                out[b].push(t);
                fed.push(t);
            }
            if i + 1 < l {
                logits = self.step(&mut cache, &fed, k + i);
            }
        }
        out
    }
}

/// Index of the largest logit; ties go to the lowest id and NaN never wins.
pub(crate) fn argmax<T: Real>(row: &[T]) -> TokenId {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best as TokenId
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_id() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[f32::NAN, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }
}
