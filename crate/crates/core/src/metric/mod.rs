//! Continuation-based memorization metrics.
//!
//! A probe is memorized when greedy decoding from its context reproduces its
//! target; the kl-LD is the token edit distance between the two.

mod levenshtein;

use serde::{Deserialize, Serialize};

pub use levenshtein::levenshtein;

use crate::corpus::{Probe, TokenId};
use crate::error::{Error, Result};
use crate::model::CheckpointRecord;

/// Edit distance between a greedy continuation and the true target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KlLd(pub usize);

impl KlLd {
    pub fn value(self) -> usize {
        self.0
    }

    pub fn is_exact(self) -> bool {
        self.0 == 0
    }
}

/// kl-LD of an already decoded continuation.
pub fn continuation_distance(target: &[TokenId], continuation: &[TokenId]) -> KlLd {
    KlLd(levenshtein(target, continuation, None))
}

pub fn kl_ld(model: &CheckpointRecord, probe: &Probe, l: usize) -> Result<KlLd> {
    if l != probe.l() {
        return Err(Error::invalid(format!(
            "probe {} has a {}-token target, asked for l = {l}",
            probe.probe_id,
            probe.l()
        )));
    }
    Ok(kl_ld_batch(model, std::slice::from_ref(probe))?[0])
}

/// kl-LD of every probe against its own target length.
pub fn kl_ld_batch(model: &CheckpointRecord, probes: &[Probe]) -> Result<Vec<KlLd>> {
    let mut out = vec![KlLd(0); probes.len()];
    let mut lengths: Vec<usize> = probes.iter().map(|p| p.l()).collect();
    lengths.sort_unstable();
    lengths.dedup();
    for l in lengths {
        let idx: Vec<usize> = (0..probes.len()).filter(|&i| probes[i].l() == l).collect();
        let contexts: Vec<&[TokenId]> = idx.iter().map(|&i| probes[i].context.as_slice()).collect();
        let continuations = model.greedy_continue_batch(&contexts, l)?;
        for (&i, c) in idx.iter().zip(&continuations) {
            out[i] = continuation_distance(&probes[i].target, c);
        }
    }
    Ok(out)
}

/// Exact-match memorization: the continuation equals the target.
pub fn kl_memorized(model: &CheckpointRecord, probe: &Probe) -> Result<bool> {
    Ok(kl_ld(model, probe, probe.l())?.is_exact())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_substitution_is_distance_one() {
        let target = [10, 11, 12, 13, 14];
        let near = [10, 11, 99, 13, 14];
        assert_eq!(continuation_distance(&target, &near), KlLd(1));
        assert!(!continuation_distance(&target, &near).is_exact());
        assert!(continuation_distance(&target, &target).is_exact());
    }
}
