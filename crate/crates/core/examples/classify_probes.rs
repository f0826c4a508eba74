//! Label trajectories as latent, never memorized or unseen control.

use memaudit::corpus::ProbeId;
use memaudit::dynamics::{classify_probes, AnalysisWindow, Trajectory, DEFAULT_MEMORIZED_FRAC, DEFAULT_UNMEMORIZED_FRAC};

fn main() -> memaudit::Result<()> {
    let steps = [0u64, 100, 200, 300, 400];
    let make = |id: u32, values: [usize; 5], first: Option<u64>| Trajectory {
        probe_id: ProbeId(id),
        series: steps.iter().copied().zip(values).collect(),
        first_encounter_step: first,
    };
    let trajectories = vec![
        make(0, [63, 58, 55, 6, 40], Some(50)),   // recovers after being forgotten
        make(1, [63, 60, 57, 59, 61], Some(50)),  // stays far from the target
        make(2, [63, 61, 60, 58, 62], Some(390)), // seen only after the window
        make(3, [63, 61, 60, 58, 62], None),      // never trained on
        make(4, [63, 30, 20, 25, 30], Some(50)),  // in between: no label
    ];
    let window = AnalysisWindow { start: 100, end: 300 };
    let labels = classify_probes(&trajectories, DEFAULT_MEMORIZED_FRAC, DEFAULT_UNMEMORIZED_FRAC, window, 64)?;
    for t in &trajectories {
        let label = labels.get(&t.probe_id).map(|l| l.as_str()).unwrap_or("-");
        println!("probe {}: {label}", t.probe_id.0);
    }
    Ok(())
}
