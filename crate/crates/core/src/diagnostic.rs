//! Cross-entropy detector for latent memorization.
//!
//! Probes whose target is assigned an unusually low loss are flagged as
//! latent; the threshold is calibrated on labeled latent and unseen-control
//! probes by maximizing Youden's J.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Probe, ProbeId};
use crate::dynamics::ClassLabel;
use crate::error::{Error, Result};
use crate::model::CheckpointRecord;
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticScore {
    pub probe_id: ProbeId,
    /// Mean cross entropy of the target, nats per token.
    pub ce_loss: f64,
    pub predicted: bool,
    pub true_label: Option<ClassLabel>,
}

/// Teacher-forced loss of every probe; nothing is flagged yet.
pub fn score_probes(ckpt: &CheckpointRecord, probes: &[Probe]) -> Result<Vec<DiagnosticScore>> {
    let losses = ckpt.sequence_losses(probes)?;
    Ok(probes
        .iter()
        .zip(losses)
        .map(|(p, ce_loss)| DiagnosticScore {
            probe_id: p.probe_id,
            ce_loss,
            predicted: false,
            true_label: None,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores strictly below this are flagged.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub auc: f64,
    pub youden_j: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub roc: Vec<RocPoint>,
}

/// Chooses the threshold maximizing `tpr - fpr`, lowest threshold on ties.
///
/// Candidates are every distinct pooled score (flagging everything strictly
/// below it) plus one value above the maximum that flags everything.
pub fn calibrate(latent: &[f64], control: &[f64]) -> Result<Calibration> {
    if latent.is_empty() || control.is_empty() {
        return Err(Error::invalid("calibration needs latent and control scores"));
    }
    if latent.iter().chain(control).any(|v| !v.is_finite()) {
        return Err(Error::invalid("calibration scores must be finite"));
    }
    let mut candidates: Vec<f64> = latent.iter().chain(control).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let top = *candidates.last().expect("non-empty");
    candidates.push(top + 1.0);

    let (np, nn) = (latent.len() as f64, control.len() as f64);
    let mut roc = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, RocPoint, usize, usize)> = None;
    for &threshold in &candidates {
        let tp = latent.iter().filter(|&&v| v < threshold).count();
        let fp = control.iter().filter(|&&v| v < threshold).count();
        let point = RocPoint {
            threshold,
            tpr: tp as f64 / np,
            fpr: fp as f64 / nn,
        };
        let j = point.tpr - point.fpr;
        if best.as_ref().map_or(true, |b| j > b.0) {
            best = Some((j, point, tp, fp));
        }
        roc.push(point);
    }
    let (youden_j, point, tp, fp) = best.expect("at least one candidate");
    Ok(Calibration {
        threshold: point.threshold,
        auc: stats::auc_lower(latent, control).expect("non-empty"),
        youden_j,
        true_positives: tp,
        false_positives: fp,
        roc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub threshold: f64,
    pub scores: Vec<DiagnosticScore>,
    pub positives: usize,
    /// Latent probes are the positive class, unseen-control probes the
    /// negative class; other labels do not enter the matrix.
    pub confusion: Option<Confusion>,
}

/// Flags scores below `threshold` and, given labels, tallies the confusion
/// matrix.
pub fn apply_threshold(
    mut scores: Vec<DiagnosticScore>,
    threshold: f64,
    labels: Option<&BTreeMap<ProbeId, ClassLabel>>,
) -> DiagnosticReport {
    for s in &mut scores {
        s.predicted = s.ce_loss < threshold;
        if let Some(labels) = labels {
            s.true_label = labels.get(&s.probe_id).copied();
        }
    }
    let positives = scores.iter().filter(|s| s.predicted).count();
    let confusion = labels.map(|_| {
        let count = |label: ClassLabel, predicted: bool| {
            scores
                .iter()
                .filter(|s| s.true_label == Some(label) && s.predicted == predicted)
                .count()
        };
        let tp = count(ClassLabel::Latent, true);
        let fp = count(ClassLabel::UnseenControl, true);
        let tn = count(ClassLabel::UnseenControl, false);
        let fn_ = count(ClassLabel::Latent, false);
        Confusion {
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
            precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
            recall: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
        }
    });
    DiagnosticReport {
        threshold,
        scores,
        positives,
        confusion,
    }
}

pub fn diagnose(
    ckpt: &CheckpointRecord,
    probes: &[Probe],
    threshold: f64,
    labels: Option<&BTreeMap<ProbeId, ClassLabel>>,
) -> Result<DiagnosticReport> {
    Ok(apply_threshold(score_probes(ckpt, probes)?, threshold, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(values: &[(f64, ClassLabel)]) -> (Vec<DiagnosticScore>, BTreeMap<ProbeId, ClassLabel>) {
        let scores = values
            .iter()
            .enumerate()
            .map(|(i, &(ce_loss, _))| DiagnosticScore {
                probe_id: ProbeId(i as u32),
                ce_loss,
                predicted: false,
                true_label: None,
            })
            .collect();
        let labels = values.iter().enumerate().map(|(i, &(_, l))| (ProbeId(i as u32), l)).collect();
        (scores, labels)
    }

    #[test]
    fn two_point_calibration() {
        let c = calibrate(&[1.0], &[2.0]).unwrap();
        assert!(c.threshold > 1.0 && c.threshold <= 2.0);
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.youden_j, 1.0);
    }

    #[test]
    fn separated_and_identical_classes() {
        let c = calibrate(&[0.1, 0.2, 0.3], &[1.0, 1.5, 2.0, 2.5]).unwrap();
        assert_eq!(c.auc, 1.0);
        let same = calibrate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.auc, 0.5);
        assert_eq!(same.youden_j, 0.0);
        assert!(calibrate(&[], &[1.0]).is_err());
    }

    #[test]
    fn extreme_thresholds() {
        let (scores, labels) = scored(&[(1.0, ClassLabel::Latent), (2.0, ClassLabel::UnseenControl)]);
        assert_eq!(apply_threshold(scores.clone(), 0.5, Some(&labels)).positives, 0);
        let all = apply_threshold(scores, 9.0, Some(&labels));
        assert_eq!(all.positives, 2);
        let c = all.confusion.unwrap();
        assert_eq!((c.true_positives, c.false_positives), (1, 1));
    }

    proptest! {
        #[test]
        fn diagnose_reproduces_calibration_point(
            latent in prop::collection::vec(0u32..40, 1..25),
            control in prop::collection::vec(0u32..40, 1..25),
        ) {
            let lat: Vec<f64> = latent.iter().map(|&v| v as f64 / 8.0).collect();
            let con: Vec<f64> = control.iter().map(|&v| v as f64 / 8.0).collect();
            let cal = calibrate(&lat, &con).unwrap();
            let pairs: Vec<(f64, ClassLabel)> = lat.iter().map(|&v| (v, ClassLabel::Latent))
                .chain(con.iter().map(|&v| (v, ClassLabel::UnseenControl)))
                .collect();
            let (scores, labels) = scored(&pairs);
            let report = apply_threshold(scores, cal.threshold, Some(&labels));
            let m = report.confusion.unwrap();
            prop_assert_eq!(m.true_positives, cal.true_positives);
            prop_assert_eq!(m.false_positives, cal.false_positives);
            let swapped = calibrate(&con, &lat).unwrap();
            prop_assert!((swapped.auc - (1.0 - cal.auc)).abs() < 1e-12);
        }
    }
}
