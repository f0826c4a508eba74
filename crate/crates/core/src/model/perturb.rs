use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{CheckpointRecord, PerturbationTag};
use crate::corpus::{Probe, ProbeId};
use crate::error::{Error, Result};
use crate::metric::kl_ld_batch;

pub const DEFAULT_SIGMA: f64 = 2e-3;
pub const DEFAULT_TRIALS: usize = 200;

/// Copy of `ckpt` with i.i.d. N(0, sigma) noise added to every parameter.
pub fn perturb(ckpt: &CheckpointRecord, sigma: f64, seed: u64) -> Result<CheckpointRecord> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ckpt.clone();
    for p in out.params.data_mut() {
        *p = (*p as f64 + normal.sample(&mut rng)) as f32;
    }
    out.perturbation = Some(PerturbationTag {
        base_step: ckpt.step,
        seed,
        sigma,
    });
    Ok(out)
}

/// Euclidean norm of the flattened parameter difference.
pub fn weight_delta(a: &CheckpointRecord, b: &CheckpointRecord) -> Result<f64> {
    if a.params.layout() != b.params.layout() {
        return Err(Error::ShapeMismatch("checkpoints have different parameter layouts".into()));
    }
    let sum: f64 = a
        .params
        .data()
        .iter()
        .zip(b.params.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of `|param|` over `bins` equal-width bins spanning `[0, max]`.
pub fn weight_histogram(ckpt: &CheckpointRecord, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let max = ckpt.params.data().iter().fold(0.0f64, |m, &p| m.max((p as f64).abs()));
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for &p in ckpt.params.data() {
        let i = (((p as f64).abs() / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    Histogram { edges, counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTrial {
    pub trial_seed: u64,
    pub sigma: f64,
    pub resulting_kl_ld: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationOutcome {
    pub probe_id: ProbeId,
    pub min_kl_ld: usize,
    pub best_seed: u64,
    pub trials: Vec<PerturbationTrial>,
}

/// Seed of trial `index` under a run seed.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    crate::mix_seed(seed, index as u64)
}

pub fn best_of_perturbations(
    ckpt: &CheckpointRecord,
    probe: &Probe,
    trials: usize,
    sigma: f64,
    seed: u64,
) -> Result<PerturbationOutcome> {
    let mut out = best_of_perturbations_batch(ckpt, std::slice::from_ref(probe), trials, sigma, seed)?;
    Ok(out.remove(0))
}

/// Runs every trial once and scores all probes against each perturbed copy;
/// trial seeds match [`best_of_perturbations`] so results agree per probe.
/// Ties keep the earliest trial.
pub fn best_of_perturbations_batch(
    ckpt: &CheckpointRecord,
    probes: &[Probe],
    trials: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<PerturbationOutcome>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = trial_seed(seed, i);
            let model = perturb(ckpt, sigma, s)?;
            Ok((s, kl_ld_batch(&model, probes)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(probes
        .iter()
        .enumerate()
        .map(|(pi, probe)| {
            let trials: Vec<PerturbationTrial> = per_trial
                .iter()
                .map(|(s, lds)| PerturbationTrial {
                    trial_seed: *s,
                    sigma,
                    resulting_kl_ld: lds[pi].value(),
                })
                .collect();
            let (min_kl_ld, best_seed) = trials
                .iter()
                .min_by_key(|t| t.resulting_kl_ld)
                .map(|t| (t.resulting_kl_ld, t.trial_seed))
                .expect("at least one trial");
            PerturbationOutcome {
                probe_id: probe.probe_id,
                min_kl_ld,
                best_seed,
                trials,
            }
        })
        .collect())
}
