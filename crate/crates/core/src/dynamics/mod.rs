//! Per-probe kl-LD across checkpoints and the statistics computed over those
//! trajectories.

mod classify;
mod regression;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use classify::{classify_probes, AnalysisWindow, ClassLabel, DEFAULT_MEMORIZED_FRAC, DEFAULT_UNMEMORIZED_FRAC};
pub use regression::{binned_means, fit_memorization_model, BinCell, MemorizationFit, MemorizationRecord};

use crate::corpus::{Probe, ProbeId};
use crate::error::{Error, Result};
use crate::metric::kl_ld_batch;
use crate::model::{CheckpointRecord, TrainingSchedule};
use crate::stats::{self, SlopeFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub probe_id: ProbeId,
    /// `(checkpoint step, kl-LD)` in increasing step order.
    pub series: Vec<(u64, usize)>,
    pub first_encounter_step: Option<u64>,
}

impl Trajectory {
    pub fn values(&self) -> impl Iterator<Item = usize> + '_ {
        self.series.iter().map(|&(_, v)| v)
    }

    pub fn at(&self, step: u64) -> Option<usize> {
        self.series.iter().find(|&&(s, _)| s == step).map(|&(_, v)| v)
    }

    pub fn is_constant(&self) -> bool {
        self.series.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

/// Evaluates every probe at every checkpoint. Checkpoints must be ordered by
/// step.
pub fn compute_trajectories(
    probes: &[Probe],
    checkpoints: &[CheckpointRecord],
    schedule: Option<&TrainingSchedule>,
) -> Result<Vec<Trajectory>> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid("trajectories need at least 2 checkpoints"));
    }
    if checkpoints.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::invalid("checkpoint steps must be strictly increasing"));
    }
    let mut out: Vec<Trajectory> = probes
        .iter()
        .map(|p| Trajectory {
            probe_id: p.probe_id,
            series: Vec::with_capacity(checkpoints.len()),
            first_encounter_step: schedule.and_then(|s| s.probe_first_encounter(p)),
        })
        .collect();
    for ckpt in checkpoints {
        for (t, ld) in out.iter_mut().zip(kl_ld_batch(ckpt, probes)?) {
            t.series.push((ckpt.step, ld.value()));
        }
    }
    Ok(out)
}

/// Consecutive-checkpoint changes pooled over all trajectories.
pub fn deltas(trajectories: &[Trajectory]) -> Vec<i64> {
    trajectories
        .iter()
        .flat_map(|t| t.series.windows(2).map(|w| w[1].1 as i64 - w[0].1 as i64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaHistogram {
    /// Integer bin centers `-m..=m`.
    pub values: Vec<i64>,
    pub counts: Vec<u64>,
}

impl DeltaHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of consecutive-checkpoint deltas over bins symmetric around 0.
pub fn delta_histogram(trajectories: &[Trajectory]) -> DeltaHistogram {
    let d = deltas(trajectories);
    let m = d.iter().map(|v| v.abs()).max().unwrap_or(0);
    let mut counts = vec![0u64; (2 * m + 1) as usize];
    for v in d {
        counts[(v + m) as usize] += 1;
    }
    DeltaHistogram {
        values: (-m..=m).collect(),
        counts,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceFit {
    pub location: f64,
    pub scale: f64,
    /// Kolmogorov-Smirnov distance to the fitted distribution.
    pub ks_statistic: f64,
    pub samples: usize,
}

impl LaplaceFit {
    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }
}

/// Maximum-likelihood Laplace fit: median location, mean absolute deviation
/// scale.
pub fn fit_laplace(samples: &[f64]) -> Result<LaplaceFit> {
    if samples.len() < 30 {
        return Err(Error::invalid(format!("Laplace fit needs at least 30 samples, got {}", samples.len())));
    }
    let location = stats::median(samples).expect("non-empty");
    let scale = samples.iter().map(|v| (v - location).abs()).sum::<f64>() / samples.len() as f64;
    if scale <= 0.0 {
        return Err(Error::Degenerate("all samples are equal; Laplace scale is 0".into()));
    }
    let mut fit = LaplaceFit {
        location,
        scale,
        ks_statistic: 0.0,
        samples: samples.len(),
    };
    fit.ks_statistic = stats::ks_statistic(samples, |x| fit.cdf(x)).expect("non-empty");
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMoments {
    pub step: u64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    /// Cross-sectional moments of the per-trajectory standardized values.
    pub normalized: Vec<CheckpointMoments>,
    /// Cross-sectional moments of the raw kl-LD values.
    pub raw: Vec<CheckpointMoments>,
    /// Variance of normalized values regressed on checkpoint index.
    pub variance_slope: SlopeFit,
    pub raw_variance_slope: SlopeFit,
    pub included: usize,
    /// Constant trajectories, left out of the normalization.
    pub constant_excluded: usize,
}

/// Standardizes each non-constant trajectory over its own series and tracks
/// the cross-sectional mean and variance per checkpoint.
pub fn stationarity_stats(trajectories: &[Trajectory]) -> Result<Stationarity> {
    let steps: Vec<u64> = trajectories
        .first()
        .map(|t| t.series.iter().map(|&(s, _)| s).collect())
        .unwrap_or_default();
    if steps.len() < 3 {
        return Err(Error::invalid("stationarity needs at least 3 checkpoints"));
    }
    if trajectories.iter().any(|t| t.series.iter().map(|&(s, _)| s).ne(steps.iter().copied())) {
        return Err(Error::invalid("trajectories must share one checkpoint grid"));
    }
    let (constant, varying): (Vec<&Trajectory>, Vec<&Trajectory>) = trajectories.iter().partition(|t| t.is_constant());
    let raw_series: Vec<Vec<f64>> = trajectories.iter().map(|t| t.values().map(|v| v as f64).collect()).collect();
    let normalized: Vec<Vec<f64>> = varying
        .iter()
        .map(|t| {
            let v: Vec<f64> = t.values().map(|v| v as f64).collect();
            let m = stats::mean(&v).expect("non-empty");
            let sd = stats::population_variance(&v).expect("non-empty").sqrt();
            v.iter().map(|x| (x - m) / sd).collect()
        })
        .collect();
    let norm_moments = cross_sectional(&steps, &normalized);
    let raw_moments = cross_sectional(&steps, &raw_series);
    Ok(Stationarity {
        variance_slope: variance_trend(&norm_moments)?,
        raw_variance_slope: variance_trend(&raw_moments)?,
        normalized: norm_moments,
        raw: raw_moments,
        included: varying.len(),
        constant_excluded: constant.len(),
    })
}

fn cross_sectional(steps: &[u64], series: &[Vec<f64>]) -> Vec<CheckpointMoments> {
    steps
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let col: Vec<f64> = series.iter().map(|s| s[i]).collect();
            CheckpointMoments {
                step,
                mean: stats::mean(&col).unwrap_or(f64::NAN),
                variance: stats::variance(&col).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

fn variance_trend(moments: &[CheckpointMoments]) -> Result<SlopeFit> {
    let x: Vec<f64> = (0..moments.len()).map(|i| i as f64).collect();
    let y: Vec<f64> = moments.iter().map(|m| m.variance).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("cross-sectional variance needs at least 2 trajectories".into()));
    }
    stats::slope_fit(&x, &y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkControl {
    pub repetitions: usize,
    /// Repetitions whose raw-variance slope interval lies above 0.
    pub positive_significant: usize,
    pub mean_slope: f64,
}

/// Simulates Gaussian random walks on a `walks x checkpoints` grid and tests
/// the slope of raw cross-sectional variance in each repetition.
pub fn random_walk_control(
    walks: usize,
    checkpoints: usize,
    step_sd: f64,
    repetitions: usize,
    seed: u64,
) -> Result<RandomWalkControl> {
    if walks < 2 || checkpoints < 3 || !(step_sd > 0.0) {
        return Err(Error::invalid("random-walk control needs >= 2 walks, >= 3 checkpoints and step_sd > 0"));
    }
    let normal = Normal::new(0.0, step_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let steps: Vec<u64> = (0..checkpoints as u64).collect();
    let mut positive = 0;
    let mut slope_sum = 0.0;
    for rep in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, rep as u64));
        let series: Vec<Vec<f64>> = (0..walks)
            .map(|_| {
                let mut x = 0.0;
                (0..checkpoints)
                    .map(|_| {
                        x += normal.sample(&mut rng);
                        x
                    })
                    .collect()
            })
            .collect();
        let fit = variance_trend(&cross_sectional(&steps, &series))?;
        slope_sum += fit.slope;
        if fit.ci_low > 0.0 {
            positive += 1;
        }
    }
    Ok(RandomWalkControl {
        repetitions,
        positive_significant: positive,
        mean_slope: slope_sum / repetitions.max(1) as f64,
    })
}

/// Simulates i.i.d. Gaussian series (a stationary null) and returns the
/// normalized-variance slope fit.
pub fn iid_control(series: usize, checkpoints: usize, seed: u64) -> Result<SlopeFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(32.0f64, 8.0).expect("valid normal");
    let trajectories: Vec<Trajectory> = (0..series)
        .map(|i| Trajectory {
            probe_id: ProbeId(i as u32),
            series: (0..checkpoints as u64)
                .map(|s| (s, normal.sample(&mut rng).round().clamp(0.0, 64.0) as usize))
                .collect(),
            first_encounter_step: None,
        })
        .collect();
    Ok(stationarity_stats(&trajectories)?.variance_slope)
}

/// Trajectories keyed by probe id.
pub fn by_probe(trajectories: &[Trajectory]) -> BTreeMap<ProbeId, &Trajectory> {
    trajectories.iter().map(|t| (t.probe_id, t)).collect()
}
