use serde::{Deserialize, Serialize};

use crate::complexity::bin_index;
use crate::corpus::ProbeId;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationRecord {
    pub probe_id: ProbeId,
    /// Other training documents containing the target (self excluded).
    pub repeats: usize,
    pub z_complexity: f64,
    pub kl_ld: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationFit {
    pub repeats_coef: f64,
    pub complexity_coef: f64,
    pub intercept: f64,
    /// Standard errors in the same order as the three coefficients.
    pub std_errors: [f64; 3],
    pub r_squared: f64,
    pub log_complexity: bool,
    /// `(predicted, actual)` per record.
    pub predicted_vs_actual: Vec<(f64, f64)>,
}

/// OLS of kl-LD on `ln(1 + repeats)` and z-complexity (or its log).
pub fn fit_memorization_model(records: &[MemorizationRecord], log_complexity: bool) -> Result<MemorizationFit> {
    if records.len() < 10 {
        return Err(Error::invalid(format!("regression needs at least 10 records, got {}", records.len())));
    }
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let z = if log_complexity { r.z_complexity.ln() } else { r.z_complexity };
            vec![(1.0 + r.repeats as f64).ln(), z]
        })
        .collect();
    let y: Vec<f64> = records.iter().map(|r| r.kl_ld).collect();
    let fit = stats::ols(&rows, &y)?;
    Ok(MemorizationFit {
        repeats_coef: fit.coefficients[0],
        complexity_coef: fit.coefficients[1],
        intercept: fit.coefficients[2],
        std_errors: [fit.std_errors[0], fit.std_errors[1], fit.std_errors[2]],
        r_squared: fit.r_squared,
        log_complexity,
        predicted_vs_actual: fit.fitted.into_iter().zip(y).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCell {
    pub repeat_bin: usize,
    pub complexity_bin: usize,
    pub count: usize,
    pub mean: f64,
    /// Population variance of the kl-LD values in the cell.
    pub variance: f64,
}

/// Mean and variance of kl-LD per (repeat bin, complexity bin). Bins are
/// half-open over the given edges (see [`bin_index`]), and fewer than two
/// edges means a single bin; only non-empty cells
/// are returned, ordered by (repeat bin, complexity bin).
pub fn binned_means(records: &[MemorizationRecord], repeat_edges: &[f64], complexity_edges: &[f64]) -> Vec<BinCell> {
    let mut cells: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for r in records {
        let key = (
            bin_of(r.repeats as f64, repeat_edges),
            bin_of(r.z_complexity, complexity_edges),
        );
        cells.entry(key).or_default().push(r.kl_ld);
    }
    cells
        .into_iter()
        .map(|((rb, cb), v)| BinCell {
            repeat_bin: rb,
            complexity_bin: cb,
            count: v.len(),
            mean: stats::mean(&v).expect("non-empty cell"),
            variance: stats::population_variance(&v).expect("non-empty cell"),
        })
        .collect()
}

fn bin_of(value: f64, edges: &[f64]) -> usize {
    if edges.len() < 2 {
        0
    } else {
        bin_index(value, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u32, repeats: usize, z: f64, kl: f64) -> MemorizationRecord {
        MemorizationRecord {
            probe_id: ProbeId(i),
            repeats,
            z_complexity: z,
            kl_ld: kl,
        }
    }

    #[test]
    fn exact_linear_data() {
        let records: Vec<_> = (0..20)
            .map(|i| {
                let repeats = (i * 3) % 17;
                let z = 0.3 + 0.04 * ((i * 7) % 11) as f64;
                let kl = 40.0 - 6.0 * (1.0 + repeats as f64).ln() + 25.0 * z;
                rec(i as u32, repeats, z, kl)
            })
            .collect();
        let fit = fit_memorization_model(&records, false).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-6);
        assert!((fit.repeats_coef + 6.0).abs() < 1e-9);
        assert!((fit.complexity_coef - 25.0).abs() < 1e-9);
        assert!((fit.intercept - 40.0).abs() < 1e-9);
        assert_eq!(fit.predicted_vs_actual.len(), 20);
    }

    #[test]
    fn constant_target() {
        let records: Vec<_> = (0..12).map(|i| rec(i, i as usize % 5, 0.4 + 0.01 * i as f64, 33.0)).collect();
        let fit = fit_memorization_model(&records, false).unwrap();
        assert_eq!(fit.r_squared, 0.0);
        assert!(fit.repeats_coef.abs() < 1e-9 && fit.complexity_coef.abs() < 1e-9);
        assert!((fit.intercept - 33.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_and_small_inputs() {
        let same: Vec<_> = (0..12).map(|i| rec(i, 3, 0.5, i as f64)).collect();
        assert!(matches!(fit_memorization_model(&same, false), Err(Error::RankDeficient(_))));
        assert!(fit_memorization_model(&same[..5], false).is_err());
    }

    #[test]
    fn grid_conserves_counts() {
        let single = binned_means(&[rec(0, 2, 0.5, 17.0)], &[0.0, 1.0, 4.0, 1e9], &[0.0, 0.4, 0.6, 9.0]);
        assert_eq!(single.len(), 1);
        assert_eq!((single[0].mean, single[0].variance), (17.0, 0.0));
        let records: Vec<_> = (0..50).map(|i| rec(i, (i % 9) as usize, 0.2 + 0.015 * i as f64, i as f64)).collect();
        let grid = binned_means(&records, &[0.0, 1.0, 4.0, 1e9], &[0.0, 0.4, 0.6, 9.0]);
        assert!(grid.len() > 3);
        assert_eq!(grid.iter().map(|c| c.count).sum::<usize>(), 50);
    }
}
