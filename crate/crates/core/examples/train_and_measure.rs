//! Train a small transformer on a repetitive corpus, save checkpoints and
//! follow kl-LD of a few probes across training.

use memaudit::corpus::{extract_probes, Corpus};
use memaudit::dynamics::compute_trajectories;
use memaudit::model::{train_observed, CheckpointStore, ModelConfig};

fn main() -> memaudit::Result<()> {
    let texts: Vec<String> = (0..60)
        .map(|i| format!("Entry {i}: the tide at pier {} rose {} cm before the bell rang twice.", i % 7, 10 + i))
        .collect();
    let corpus = Corpus::from_texts(&texts);
    let cfg = ModelConfig {
        model_width: 48,
        layer_count: 1,
        head_count: 2,
        batch_size: 8,
        total_steps: 200,
        checkpoint_every: 50,
        warmup_steps: 20,
        seed: 1,
        ..ModelConfig::default()
    };

    let store = train_observed(&corpus, &cfg, &mut |step, loss| {
        if step % 50 == 0 {
            println!("step {step:>4}  loss {loss:.3}");
        }
    })?;
    println!("{} parameters, checkpoints at {:?}", store.latest().param_count(), store.steps());

    let dir = tempfile::tempdir().expect("temp dir");
    store.save(dir.path())?;
    let reloaded = CheckpointStore::load(dir.path(), &corpus)?;
    assert_eq!(reloaded.steps(), store.steps());

    let probes = extract_probes(&corpus, 16, 32, 5, 9, true)?;
    let trajectories = compute_trajectories(&probes, &reloaded.checkpoints, Some(&reloaded.schedule))?;
    for t in &trajectories {
        let values: Vec<usize> = t.values().collect();
        println!("probe {:>2} first seen at {:?}: kl-LD {values:?}", t.probe_id.0, t.first_encounter_step);
    }
    Ok(())
}
