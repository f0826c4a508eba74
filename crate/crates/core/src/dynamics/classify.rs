use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::corpus::ProbeId;
use crate::error::{Error, Result};

/// 10 of 64 target tokens.
pub const DEFAULT_MEMORIZED_FRAC: f64 = 10.0 / 64.0;
/// 50 of 64 target tokens.
pub const DEFAULT_UNMEMORIZED_FRAC: f64 = 50.0 / 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Latent,
    NeverMemorized,
    UnseenControl,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Latent, ClassLabel::NeverMemorized, ClassLabel::UnseenControl];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Latent => "latent",
            ClassLabel::NeverMemorized => "never_memorized",
            ClassLabel::UnseenControl => "unseen_control",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive checkpoint step range of the analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: u64,
    pub end: u64,
}

/// Assigns at most one label per probe:
///
/// - latent: seen by the start of the window, above the unmemorized
///   threshold there, and below the memorized threshold at some later
///   checkpoint inside the window
/// - never_memorized: seen by the start, above the unmemorized threshold at
///   every checkpoint in the window
/// - unseen_control: first encountered after the window, or never
///
/// Thresholds are `memorized_frac * l` and `unmemorized_frac * l`; the
/// comparisons are strict. Probes matching none of the classes are omitted.
pub fn classify_probes(
    trajectories: &[Trajectory],
    memorized_frac: f64,
    unmemorized_frac: f64,
    window: AnalysisWindow,
    l: usize,
) -> Result<BTreeMap<ProbeId, ClassLabel>> {
    if !(0.0 < memorized_frac && memorized_frac < unmemorized_frac && unmemorized_frac < 1.0) {
        return Err(Error::invalid("need 0 < memorized_frac < unmemorized_frac < 1"));
    }
    if window.start >= window.end {
        return Err(Error::invalid("analysis window must span at least two checkpoints"));
    }
    let mem = memorized_frac * l as f64;
    let unmem = unmemorized_frac * l as f64;
    let mut labels = BTreeMap::new();
    for t in trajectories {
        let inside: Vec<(u64, usize)> = t
            .series
            .iter()
            .copied()
            .filter(|&(s, _)| window.start <= s && s <= window.end)
            .collect();
        let has_start = inside.first().is_some_and(|&(s, _)| s == window.start);
        let has_end = inside.last().is_some_and(|&(s, _)| s == window.end);
        if !has_start || !has_end {
            return Err(Error::invalid(format!(
                "window {}..={} is outside the checkpoints of probe {}",
                window.start, window.end, t.probe_id
            )));
        }
        let label = match t.first_encounter_step {
            None => Some(ClassLabel::UnseenControl),
            Some(s) if s > window.end => Some(ClassLabel::UnseenControl),
            Some(s) if s <= window.start => {
                let start_value = inside[0].1 as f64;
                if inside.iter().all(|&(_, v)| v as f64 > unmem) {
                    Some(ClassLabel::NeverMemorized)
                } else if start_value > unmem && inside[1..].iter().any(|&(_, v)| (v as f64) < mem) {
                    Some(ClassLabel::Latent)
                } else {
                    None
                }
            }
            Some(_) => None,
        };
        if let Some(label) = label {
            labels.insert(t.probe_id, label);
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::super::tests::traj;
    use super::*;

    fn window() -> AnalysisWindow {
        AnalysisWindow { start: 0, end: 30 }
    }

    #[test]
    fn default_thresholds_at_l64() {
        assert_eq!(DEFAULT_MEMORIZED_FRAC * 64.0, 10.0);
        assert_eq!(DEFAULT_UNMEMORIZED_FRAC * 64.0, 50.0);
    }

    #[test]
    fn labels_follow_thresholds() {
        let mut unseen = traj(2, &[62, 60, 61, 63]);
        unseen.first_encounter_step = Some(40);
        let mut mid = traj(3, &[60, 55, 8, 40]);
        mid.first_encounter_step = Some(10);
        let ts = vec![
            traj(0, &[60, 55, 8, 40]),
            traj(1, &[60, 58, 55, 61]),
            unseen,
            mid,
            traj(4, &[60, 50, 20, 51]),
            traj(5, &[30, 5, 2, 60]),
        ];
        let labels = classify_probes(&ts, DEFAULT_MEMORIZED_FRAC, DEFAULT_UNMEMORIZED_FRAC, window(), 64).unwrap();
        assert_eq!(labels.get(&ProbeId(0)), Some(&ClassLabel::Latent));
        assert_eq!(labels.get(&ProbeId(1)), Some(&ClassLabel::NeverMemorized));
        assert_eq!(labels.get(&ProbeId(2)), Some(&ClassLabel::UnseenControl));
        assert_eq!(labels.get(&ProbeId(3)), None);
        assert_eq!(labels.get(&ProbeId(4)), None);
        assert_eq!(labels.get(&ProbeId(5)), None);
    }

    #[test]
    fn bad_window_or_fractions() {
        let ts = vec![traj(0, &[60, 55, 8, 40])];
        let outside = AnalysisWindow { start: 0, end: 35 };
        assert!(classify_probes(&ts, 0.1, 0.8, outside, 64).is_err());
        assert!(classify_probes(&ts, 0.8, 0.1, window(), 64).is_err());
    }
}
