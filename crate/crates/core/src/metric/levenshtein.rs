//! Token-level Levenshtein distance with unit costs.
//!
//! Two kernels: Hyyrö's bit-parallel recurrence when the shorter operand fits
//! in one machine word, and an Ukkonen band of half-width `cap` otherwise.
//! Without a cap the band doubles until the distance fits inside it.

use crate::corpus::TokenId;

/// Exact distance when `cap` is `None`. With `Some(cap)` the result is exact
/// up to `cap`; larger distances come back as `cap + 1`.
pub fn levenshtein(a: &[TokenId], b: &[TokenId], cap: Option<usize>) -> usize {
    let (a, b) = strip_affixes(a, b);
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return match cap {
            Some(c) => long.len().min(c + 1),
            None => long.len(),
        };
    }
    match cap {
        Some(cap) => banded(short, long, cap),
        None if short.len() <= 64 => bit_parallel(short, long),
        None => {
            let mut band = (long.len() - short.len()).max(16);
            loop {
                let d = banded(short, long, band);
                if d <= band {
                    return d;
                }
                band *= 2;
            }
        }
    }
}

fn strip_affixes<'a>(a: &'a [TokenId], b: &'a [TokenId]) -> (&'a [TokenId], &'a [TokenId]) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    (&a[..a.len() - suffix], &b[..b.len() - suffix])
}

/// Distance clamped to `cap + 1`, evaluating only cells within `cap` of the
/// main diagonal.
fn banded(a: &[TokenId], b: &[TokenId], cap: usize) -> usize {
    let (m, n) = (a.len(), b.len());
    let inf = cap + 1;
    if m.abs_diff(n) > cap {
        return inf;
    }
    let mut prev = vec![inf; n + 1];
    let mut cur = vec![inf; n + 1];
    for (j, cell) in prev.iter_mut().enumerate().take(cap.min(n) + 1) {
        *cell = j;
    }
    for i in 1..=m {
        let lo = i.saturating_sub(cap);
        let hi = n.min(i + cap);
        if lo > 0 {
            cur[lo - 1] = inf;
        }
        let mut row_min = inf;
        let ai = a[i - 1];
        for j in lo..=hi {
            let v = if j == 0 {
                i
            } else {
                let sub = prev[j - 1] + usize::from(ai != b[j - 1]);
                let del = prev[j] + 1;
                let ins = cur[j - 1] + 1;
                sub.min(del).min(ins)
            }
            .min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min >= inf {
            return inf;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n].min(inf)
}

/// Hyyrö (2001) bit-vector distance; `pattern.len()` must be in `1..=64`.
fn bit_parallel(pattern: &[TokenId], text: &[TokenId]) -> usize {
    let m = pattern.len();
    debug_assert!((1..=64).contains(&m));
    let peq = PatternMasks::new(pattern);
    let high = 1u64 << (m - 1);
    let mut pv: u64 = if m == 64 { !0 } else { (1u64 << m) - 1 };
    let mut mv: u64 = 0;
    let mut score = m;
    for &c in text {
        let eq = peq.get(c);
        let xv = eq | mv;
        let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
        let mut ph = mv | !(xh | pv);
        let mut mh = pv & xh;
        if ph & high != 0 {
            score += 1;
        } else if mh & high != 0 {
            score -= 1;
        }
        ph = (ph << 1) | 1;
        mh <<= 1;
        pv = mh | !(xv | ph);
        mv = ph & xv;
    }
    score
}

enum PatternMasks {
    Dense(Vec<u64>),
    Sparse(Vec<(TokenId, u64)>),
}

impl PatternMasks {
    fn new(pattern: &[TokenId]) -> Self {
        let max = pattern.iter().copied().max().unwrap_or(0) as usize;
        if max < 4096 {
            let mut table = vec![0u64; max + 1];
            for (i, &t) in pattern.iter().enumerate() {
                table[t as usize] |= 1 << i;
            }
            PatternMasks::Dense(table)
        } else {
            let mut pairs: Vec<(TokenId, u64)> = Vec::new();
            for (i, &t) in pattern.iter().enumerate() {
                match pairs.iter_mut().find(|(k, _)| *k == t) {
                    Some((_, mask)) => *mask |= 1 << i,
                    None => pairs.push((t, 1 << i)),
                }
            }
            pairs.sort_unstable_by_key(|p| p.0);
            PatternMasks::Sparse(pairs)
        }
    }

    #[inline]
    fn get(&self, t: TokenId) -> u64 {
        match self {
            PatternMasks::Dense(table) => table.get(t as usize).copied().unwrap_or(0),
            PatternMasks::Sparse(pairs) => pairs
                .binary_search_by_key(&t, |p| p.0)
                .map(|i| pairs[i].1)
                .unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full_matrix(a: &[TokenId], b: &[TokenId]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn identity_is_zero() {
        let a = [5, 6, 7, 8];
        assert_eq!(levenshtein(&a, &a, None), 0);
        assert_eq!(levenshtein(&a, &a, Some(0)), 0);
    }

    #[test]
    fn empty_vs_n_is_n() {
        let b: Vec<TokenId> = (0..70).collect();
        assert_eq!(levenshtein(&[], &b, None), 70);
        assert_eq!(levenshtein(&b, &[], None), 70);
        assert_eq!(levenshtein(&[], &b, Some(10)), 11);
    }

    #[test]
    fn two_substitutions() {
        assert_eq!(levenshtein(&[1, 2, 3, 4], &[1, 3, 3, 5], None), 2);
    }

    #[test]
    fn cap_clamps_large_distances() {
        let a: Vec<TokenId> = (0..64).collect();
        let b: Vec<TokenId> = (100..164).collect();
        assert_eq!(levenshtein(&a, &b, None), 64);
        assert_eq!(levenshtein(&a, &b, Some(10)), 11);
        assert_eq!(levenshtein(&a, &b, Some(64)), 64);
        assert_eq!(levenshtein(&a, &b, Some(65)), 64);
    }

    #[test]
    fn sparse_tokens_use_fallback_table() {
        let a = [1_000_000, 2, 3];
        let b = [1_000_000, 3, 3];
        assert_eq!(levenshtein(&a, &b, None), 1);
    }

    #[test]
    fn long_operands_use_doubling_band() {
        let a: Vec<TokenId> = (0..300).map(|i| (i * 7 % 13) as TokenId).collect();
        let b: Vec<TokenId> = (0..280).map(|i| (i * 5 % 11) as TokenId).collect();
        assert_eq!(levenshtein(&a, &b, None), full_matrix(&a, &b));
    }

    proptest! {
        #[test]
        fn matches_full_matrix(
            a in proptest::collection::vec(0u32..6, 0..80),
            b in proptest::collection::vec(0u32..6, 0..80),
        ) {
            prop_assert_eq!(levenshtein(&a, &b, None), full_matrix(&a, &b));
        }

        #[test]
        fn capped_is_clamped_exact(
            a in proptest::collection::vec(0u32..4, 0..40),
            b in proptest::collection::vec(0u32..4, 0..40),
            cap in 0usize..20,
        ) {
            let exact = full_matrix(&a, &b);
            prop_assert_eq!(levenshtein(&a, &b, Some(cap)), exact.min(cap + 1));
        }

        #[test]
        fn metric_axioms(
            a in proptest::collection::vec(0u32..5, 0..32),
            b in proptest::collection::vec(0u32..5, 0..32),
            c in proptest::collection::vec(0u32..5, 0..32),
        ) {
            let ab = levenshtein(&a, &b, None);
            prop_assert_eq!(ab == 0, a == b);
            prop_assert_eq!(ab, levenshtein(&b, &a, None));
            prop_assert!(levenshtein(&a, &c, None) <= ab + levenshtein(&b, &c, None));
        }
    }
}
