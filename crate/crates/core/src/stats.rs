//! Rank statistics, moments, least squares and goodness-of-fit helpers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = mean(x)?;
    Some(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64)
}

/// Population variance (divides by `n`).
pub fn population_variance(x: &[f64]) -> Option<f64> {
    let m = mean(x)?;
    Some(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64)
}

pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Moment skewness `m3 / m2^1.5`; `None` for constant or empty input.
pub fn skewness(x: &[f64]) -> Option<f64> {
    let m = mean(x)?;
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    (m2 > 0.0).then(|| m3 / m2.powf(1.5))
}

/// 1-based ranks, ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x)?, mean(y)?);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "first sample tends to be lower".
    pub p_less: f64,
    /// One-sided p-value for "first sample tends to be higher".
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Mann-Whitney U test, normal approximation with tie and continuity
/// corrections.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney needs two non-empty samples"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let r = ranks(&pooled);
    let ra: f64 = r[..a.len()].iter().sum();
    let u = ra - na * (na + 1.0) / 2.0;
    let n = na + nb;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let tie_term: f64 = sorted
        .chunk_by(|x, y| x == y)
        .map(|g| {
            let t = g.len() as f64;
            t * t * t - t
        })
        .sum();
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)).max(1.0));
    let mu = na * nb / 2.0;
    if var <= 0.0 {
        return Ok(MannWhitney {
            u,
            z: 0.0,
            p_less: 1.0,
            p_greater: 1.0,
            p_two_sided: 1.0,
        });
    }
    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_less = normal.cdf((u - mu + 0.5) / sd);
    let p_greater = 1.0 - normal.cdf((u - mu - 0.5) / sd);
    Ok(MannWhitney {
        u,
        z: (u - mu) / sd,
        p_less,
        p_greater,
        p_two_sided: (2.0 * p_less.min(p_greater)).min(1.0),
    })
}

/// Probability that a random `low` value is below a random `high` value,
/// ties counting one half.
pub fn auc_lower(low: &[f64], high: &[f64]) -> Option<f64> {
    if low.is_empty() || high.is_empty() {
        return None;
    }
    let pooled: Vec<f64> = low.iter().chain(high).copied().collect();
    let r = ranks(&pooled);
    let nh = high.len() as f64;
    let rh: f64 = r[low.len()..].iter().sum();
    Some((rh - nh * (nh + 1.0) / 2.0) / (low.len() as f64 * nh))
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `x` and `cdf`.
pub fn ks_statistic(x: &[f64], cdf: impl Fn(f64) -> f64) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Some(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// One coefficient per feature column, then the intercept.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub fitted: Vec<f64>,
}

/// Ordinary least squares of `y` on the feature rows plus an intercept.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len()) + 1;
    if n != y.len() || rows.iter().any(|r| r.len() + 1 != p) {
        return Err(Error::ShapeMismatch("feature rows and targets disagree".into()));
    }
    if n < p {
        return Err(Error::RankDeficient(format!("{n} observations for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j + 1 == p { 1.0 } else { rows[i][j] });
    let yv = DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * n.max(p) as f64 * f64::EPSILON * 16.0;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::RankDeficient("design matrix columns are linearly dependent".into()));
    }
    let beta = svd
        .solve(&yv, tol)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let fitted = &x * &beta;
    let ybar = yv.mean();
    let ss_res: f64 = (&yv - &fitted).iter().map(|r| r * r).sum();
    let ss_tot: f64 = yv.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    let std_errors = if n > p {
        let sigma2 = ss_res / (n - p) as f64;
        let xtx = x.transpose() * &x;
        match xtx.try_inverse() {
            Some(inv) => (0..p).map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; p],
        }
    } else {
        vec![f64::NAN; p]
    };
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        r_squared,
        fitted: fitted.iter().copied().collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
    /// Two-sided 95% t interval of the slope.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SlopeFit {
    pub fn ci_contains_zero(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

/// Simple linear regression of `y` on `x` with a 95% slope interval.
pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Degenerate("slope fit needs at least 3 paired points".into()));
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x).unwrap_or(0.0), mean(y).unwrap_or(0.0));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("slope fit needs varying x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let std_error = (ss_res / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::Degenerate(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        std_error,
        ci_low: slope - t * std_error,
        ci_high: slope + t * std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_of_monotone_data() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 4.0, 9.0, 16.0, 25.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let z: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((spearman(&x, &z).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 5]).is_none());
    }

    #[test]
    fn mann_whitney_reference_values() {
        // scipy.stats.mannwhitneyu([1,2,3,4,5],[6,7,8,9,10], alternative='less',
        // method='asymptotic') gives U=0, p=0.006093
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [6.0, 7.0, 8.0, 9.0, 10.0];
        let mw = mann_whitney(&a, &b).unwrap();
        assert_eq!(mw.u, 0.0);
        assert!((mw.p_less - 0.006093).abs() < 1e-5, "{}", mw.p_less);
        assert!(mw.p_greater > 0.99);
        // with ties: scipy gives U=6, p=0.0569516
        let ties = mann_whitney(&[1.0, 2.0, 2.0, 3.0, 5.0], &[2.0, 3.0, 7.0, 9.0, 10.0, 3.0]).unwrap();
        assert_eq!(ties.u, 6.0);
        assert!((ties.p_less - 0.0569516).abs() < 1e-6, "{}", ties.p_less);
        let tied = mann_whitney(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tied.p_less, 1.0);
    }

    #[test]
    fn auc_counts_ties_half() {
        assert_eq!(auc_lower(&[1.0, 2.0], &[3.0, 4.0]), Some(1.0));
        assert_eq!(auc_lower(&[3.0, 4.0], &[1.0, 2.0]), Some(0.0));
        assert_eq!(auc_lower(&[1.0], &[1.0]), Some(0.5));
        assert_eq!(auc_lower(&[1.0, 2.0], &[2.0, 3.0]), Some(0.875));
    }

    #[test]
    fn ols_exact_and_constant() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 - 2.0 * r[0] + 0.5 * r[1]).collect();
        let fit = ols(&rows, &y).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
        assert!((fit.coefficients[0] + 2.0).abs() < 1e-9);
        assert!((fit.coefficients[1] - 0.5).abs() < 1e-9);
        assert!((fit.coefficients[2] - 3.0).abs() < 1e-9);

        let flat = ols(&rows, &[7.0; 12]).unwrap();
        assert_eq!(flat.r_squared, 0.0);
        assert!(flat.coefficients[0].abs() < 1e-9 && flat.coefficients[1].abs() < 1e-9);
        assert!((flat.coefficients[2] - 7.0).abs() < 1e-9);

        let collinear: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(ols(&collinear, &y), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn slope_interval() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + if (*v as i32) % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let fit = slope_fit(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.05);
        assert!(!fit.ci_contains_zero());
    }

    #[test]
    fn ks_of_uniform_grid() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_statistic(&x, |v| v.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.005).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_is_invariant_under_monotone_maps(
            a in prop::collection::vec(-50i32..50, 1..30),
            b in prop::collection::vec(-50i32..50, 1..30),
        ) {
            let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let auc = auc_lower(&fa, &fb).unwrap();
            let ga: Vec<f64> = fa.iter().map(|v| (v / 10.0).exp()).collect();
            let gb: Vec<f64> = fb.iter().map(|v| (v / 10.0).exp()).collect();
            prop_assert!((auc_lower(&ga, &gb).unwrap() - auc).abs() < 1e-12);
            prop_assert!((auc_lower(&fb, &fa).unwrap() - (1.0 - auc)).abs() < 1e-12);
            let brute = fa.iter().flat_map(|x| fb.iter().map(move |y| {
                if x < y { 1.0 } else if x == y { 0.5 } else { 0.0 }
            })).sum::<f64>() / (fa.len() * fb.len()) as f64;
            prop_assert!((brute - auc).abs() < 1e-12);
        }
    }
}
