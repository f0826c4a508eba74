use std::path::Path;
use std::process::{Command, Output};

fn memaudit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memaudit")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = memaudit(args, cwd);
    assert!(
        out.status.success(),
        "memaudit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CONFIG: &str = r#"
seed = 9
[corpus.synthetic]
documents = 80
min_len = 200
max_len = 400
[canaries]
levels = [1, 4]
per_level = 2
[probes]
count = 40
[model]
model_width = 16
layer_count = 1
head_count = 2
batch_size = 4
total_steps = 20
checkpoint_every = 10
warmup_steps = 5
"#;

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&["--help"], dir.path());
    for sub in [
        "ingest", "plant", "train", "scan-repeats", "complexity", "measure", "trajectory", "perturb", "diagnose", "report", "run",
    ] {
        assert!(help.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn single_stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), CONFIG).unwrap();
    let c = ["--config", "c.toml"];
    let with = |extra: &[&str]| -> Vec<String> { c.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        ok(&refs, d)
    };
    assert!(run(&["ingest", "--out", "raw"]).contains("80 documents"));
    run(&["plant", "--corpus", "raw", "--out", "planted"]);
    assert!(d.join("planted/probes.jsonl").is_file());
    assert!(run(&["train", "--corpus", "planted", "--out", "ckpts"]).contains("3 checkpoints"));
    run(&["scan-repeats", "--corpus", "planted", "--probes", "planted/probes.jsonl", "--out", "repeats.jsonl"]);
    run(&["complexity", "--probes", "planted/probes.jsonl", "--out", "z.csv"]);
    run(&["measure", "--ckpt", "ckpts/ckpt-00000020.maud", "--probes", "planted/probes.jsonl", "--out", "m.csv"]);
    run(&["trajectory", "--corpus", "planted", "--checkpoints", "ckpts", "--probes", "planted/probes.jsonl", "--out", "t.csv"]);
    run(&[
        "perturb", "--ckpt", "ckpts/ckpt-00000010.maud", "--probes", "planted/probes.jsonl", "--trials", "3", "--out", "p.jsonl",
    ]);
    assert!(run(&[
        "diagnose", "--ckpt", "ckpts/ckpt-00000010.maud", "--probes", "planted/probes.jsonl", "--threshold", "3.0", "--out", "d.json",
    ])
    .contains("threshold 3"));

    let z = std::fs::read_to_string(d.join("z.csv")).unwrap();
    assert!(z.starts_with("probe_id,z_complexity"));
    let t = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(t.starts_with("probe_id,first_encounter_step,kl_ld_0,kl_ld_10,kl_ld_20"));
    assert_eq!(std::fs::read_to_string(d.join("p.jsonl")).unwrap().lines().count(), 44);
}

#[test]
fn run_and_report_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), CONFIG).unwrap();
    let out = ok(&["run", "--config", "c.toml", "--out", "r", "--until", "dynamics"], d);
    assert!(out.contains("run complete"));
    assert!(d.join("r/dynamics_report.json").is_file());
    assert!(!d.join("r/summary.json").exists());
    ok(&["run", "--config", "r/manifest.json", "--out", "r"], d);
    std::fs::remove_file(d.join("r/summary.json")).unwrap();
    ok(&["report", "--out", "r"], d);
    assert!(d.join("r/summary.json").is_file());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = memaudit(&["measure", "--ckpt", "missing.maud", "--probes", "none.jsonl", "--out", "x.csv"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("missing.maud"), "{err}");

    let out = memaudit(&["diagnose", "--ckpt", "a", "--probes", "b"], dir.path());
    assert!(!out.status.success());
}
