//! Run every stage on a small synthetic configuration, then run again and
//! watch every stage get reused.

use memaudit::pipeline::{run_pipeline, PipelineConfig, RunOptions, StageStatus};
use memaudit::report::Summary;

const CONFIG: &str = r#"
seed = 7
[corpus.synthetic]
documents = 150
min_len = 200
max_len = 500
[canaries]
levels = [1, 4, 16]
per_level = 2
[probes]
count = 120
[model]
model_width = 32
layer_count = 1
head_count = 2
batch_size = 4
total_steps = 60
checkpoint_every = 10
warmup_steps = 10
[perturbation]
trials = 8
per_class = 10
[dynamics]
random_walk_repetitions = 20
"#;

fn main() -> memaudit::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().join("run");
    let cfg = PipelineConfig::from_toml(CONFIG)?;
    let say = |line: &str| println!("{line}");
    let opts = RunOptions {
        progress: Some(&say),
        ..RunOptions::default()
    };
    run_pipeline(cfg.clone(), &out, &opts)?;

    let summary: Summary = memaudit::report::read_json(&out.join("summary.json"))?;
    println!("manifest sha256 {}", summary.manifest_sha256);
    println!("final loss {:.3?}, classes {:?}", summary.final_training_loss, summary.class_counts);
    for level in &summary.canary_levels {
        println!("  {:>3} copies: mean final kl-LD {:.1}", level.planted_count, level.mean_final_kl_ld);
    }

    let again = run_pipeline(cfg, &out, &RunOptions::default())?;
    assert!(again.stages.iter().all(|(_, s)| *s == StageStatus::Reused));
    println!("second run reused all {} stages", again.stages.len());
    Ok(())
}
