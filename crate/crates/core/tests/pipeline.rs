use std::path::Path;

use memaudit::pipeline::{files, rerun_manifest, run_pipeline, PipelineConfig, RunOptions, Stage, StageStatus};
use memaudit::report::{read_json, RunManifest, Summary, CHART_FILES};

const TINY: &str = r#"
seed = 5
[corpus.synthetic]
documents = 100
min_len = 200
max_len = 400
[canaries]
levels = [1, 4]
per_level = 2
[probes]
count = 60
[model]
model_width = 16
layer_count = 1
head_count = 2
batch_size = 4
total_steps = 30
checkpoint_every = 10
warmup_steps = 5
[perturbation]
trials = 4
per_class = 5
[dynamics]
random_walk_repetitions = 10
"#;

fn tiny() -> PipelineConfig {
    PipelineConfig::from_toml(TINY).unwrap()
}

fn statuses(outcome: &memaudit::pipeline::RunOutcome) -> Vec<(Stage, StageStatus)> {
    outcome.stages.clone()
}

fn ran(outcome: &memaudit::pipeline::RunOutcome) -> Vec<Stage> {
    statuses(outcome).into_iter().filter(|(_, s)| *s == StageStatus::Ran).map(|(st, _)| st).collect()
}

#[test]
fn full_run_writes_every_listed_output() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(tiny(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(ran(&outcome), Stage::ALL.to_vec());
    let manifest = RunManifest::load(&dir.path().join(files::MANIFEST)).unwrap();
    for rel in &manifest.outputs {
        assert!(dir.path().join(rel).is_file(), "missing {rel}");
    }
    for chart in CHART_FILES {
        let svg = std::fs::read_to_string(dir.path().join(files::CHARTS).join(chart)).unwrap();
        assert!(svg.contains(&manifest.hash().unwrap()), "{chart} lacks the manifest hash");
    }
    let summary: Summary = read_json(&dir.path().join(files::SUMMARY)).unwrap();
    assert_eq!(summary.final_step, 30);
    assert_eq!(summary.canary_levels.len(), 2);
}

#[test]
fn resume_reuses_unchanged_stages() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(tiny(), dir.path(), &RunOptions::default()).unwrap();

    let again = run_pipeline(tiny(), dir.path(), &RunOptions::default()).unwrap();
    assert!(ran(&again).is_empty());

    let mut cfg = tiny();
    cfg.perturbation.trials = 5;
    let changed = run_pipeline(cfg.clone(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(ran(&changed), vec![Stage::Perturb, Stage::Diagnose, Stage::Report]);

    std::fs::write(dir.path().join(files::COMPLEXITY), "tampered").unwrap();
    let repaired = run_pipeline(cfg.clone(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(ran(&repaired)[0], Stage::Complexity);

    let forced = run_pipeline(
        cfg,
        dir.path(),
        &RunOptions {
            force: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(ran(&forced).len(), Stage::ALL.len());
}

#[test]
fn until_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(
        tiny(),
        dir.path(),
        &RunOptions {
            until: Some(Stage::Probes),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(ran(&outcome), vec![Stage::Ingest, Stage::Plant, Stage::Probes]);
    assert!(!dir.path().join(files::CHECKPOINTS).exists());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(tiny(), &a, &RunOptions::default()).unwrap();
    rerun_manifest(&a.join(files::MANIFEST), &b, RunOptions::default()).unwrap();
    let manifest = RunManifest::load(&a.join(files::MANIFEST)).unwrap();
    // run.log holds wall-clock timings; everything else must match
    for rel in manifest.outputs.iter().filter(|r| *r != files::LOG) {
        let same = std::fs::read(a.join(rel)).unwrap() == std::fs::read(b.join(rel)).unwrap();
        assert!(same, "{rel} differs");
    }
}

#[test]
fn ingests_a_text_corpus_and_records_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("docs.txt");
    let lines: Vec<String> = (0..120)
        .map(|i| format!("Line {i}: the archive of harbour {} lists {} crates of tin and {} of rope.", i % 9, i * 3, i * 7))
        .collect();
    std::fs::write(&input, lines.join("\n")).unwrap();
    let mut cfg = tiny();
    cfg.corpus.input = Some(input.clone());
    let out = dir.path().join("run");
    let outcome = run_pipeline(
        cfg,
        &out,
        &RunOptions {
            until: Some(Stage::Ingest),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let hash = &outcome.manifest.input_hashes["corpus"];
    assert_eq!(hash, &memaudit::report::sha256_file(&input).unwrap());

    std::fs::write(&input, "changed").unwrap();
    let err = rerun_manifest(&out.join(files::MANIFEST), &dir.path().join("again"), RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("ingest"), "{err}");
    assert!(Path::new(&out).join(files::INGEST_TOKENS).is_file());
}
