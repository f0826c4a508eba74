//! End-to-end audit runs: a fixed sequence of stages, each reading the files
//! of earlier stages and writing its own, with resume by input fingerprint.

pub mod commands;
mod config;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    CanaryConfig, ComplexityConfig, CorpusConfig, DiagnosticConfig, DynamicsConfig, PerturbationConfig,
    PipelineConfig, ProbeConfig, RepeatConfig, SyntheticConfig,
};
pub use stages::{analyze_dynamics, weight_report, DynamicsInputs};

use crate::complexity::{COMPRESSION_LEVEL, COMPRESSOR_ID};
use crate::error::{Error, Result};
use crate::model::CheckpointStore;
use crate::report::{self, Compressor, RunManifest, CHART_FILES, TOOLKIT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Plant,
    Probes,
    Train,
    ScanRepeats,
    Complexity,
    Trajectory,
    Dynamics,
    Perturb,
    Diagnose,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Ingest,
        Stage::Plant,
        Stage::Probes,
        Stage::Train,
        Stage::ScanRepeats,
        Stage::Complexity,
        Stage::Trajectory,
        Stage::Dynamics,
        Stage::Perturb,
        Stage::Diagnose,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Plant => "plant",
            Stage::Probes => "probes",
            Stage::Train => "train",
            Stage::ScanRepeats => "scan-repeats",
            Stage::Complexity => "complexity",
            Stage::Trajectory => "trajectory",
            Stage::Dynamics => "dynamics",
            Stage::Perturb => "perturb",
            Stage::Diagnose => "diagnose",
            Stage::Report => "report",
        }
    }

    fn deps(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Ingest => &[],
            Plant => &[Ingest],
            Probes | Train => &[Plant],
            ScanRepeats => &[Plant, Probes],
            Complexity => &[Probes],
            Trajectory => &[Probes, Train],
            Dynamics => &[Plant, Probes, ScanRepeats, Complexity, Trajectory],
            Perturb | Diagnose => &[Probes, Train, Dynamics],
            Report => &[Train, Trajectory, Dynamics, Perturb, Diagnose],
        }
    }

    /// Files written by the stage, relative to the output directory.
    pub fn outputs(self, cfg: &PipelineConfig) -> Vec<String> {
        let v = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match self {
            Stage::Ingest => v(&[files::INGEST_TOKENS, files::INGEST_MANIFEST]),
            Stage::Plant => v(&[files::CORPUS_TOKENS, files::CORPUS_MANIFEST, files::CANARIES]),
            Stage::Probes => v(&[files::PROBES]),
            Stage::Train => {
                let mut out = v(&[files::CHECKPOINT_INDEX, files::TRAINING_LOSS]);
                out.extend(
                    cfg.checkpoint_steps()
                        .into_iter()
                        .map(|s| format!("{}/{}", files::CHECKPOINTS, CheckpointStore::checkpoint_file(s))),
                );
                out
            }
            Stage::ScanRepeats => v(&[files::REPEATS]),
            Stage::Complexity => v(&[files::COMPLEXITY]),
            Stage::Trajectory => v(&[files::TRAJECTORIES]),
            Stage::Dynamics => v(&[files::DYNAMICS, files::LABELS, files::PROBE_STATS]),
            Stage::Perturb => v(&[files::PERTURBATION, files::PERTURBATION_REPORT]),
            Stage::Diagnose => v(&[files::DIAGNOSTIC]),
            Stage::Report => {
                let mut out = v(&[files::SUMMARY]);
                out.extend(CHART_FILES.iter().map(|c| format!("{}/{c}", files::CHARTS)));
                out
            }
        }
    }

    /// The slice of the configuration a stage's results depend on.
    fn config_slice(self, cfg: &PipelineConfig) -> serde_json::Value {
        use serde_json::json;
        match self {
            Stage::Ingest => json!({"seed": cfg.seed, "corpus": cfg.corpus}),
            Stage::Plant => json!({"seed": cfg.seed, "canaries": cfg.canaries, "window": cfg.probes.k + cfg.probes.l}),
            Stage::Probes => json!({"seed": cfg.seed, "probes": cfg.probes}),
            Stage::Train => json!({"model": cfg.model}),
            Stage::ScanRepeats => json!({"repeats": cfg.repeats}),
            Stage::Complexity => json!({"complexity": cfg.complexity}),
            Stage::Trajectory => json!({}),
            Stage::Dynamics => json!({"seed": cfg.seed, "dynamics": cfg.dynamics, "l": cfg.probes.l}),
            Stage::Perturb => json!({"seed": cfg.seed, "perturbation": cfg.perturbation}),
            Stage::Diagnose => json!({"diagnostic": cfg.diagnostic}),
            Stage::Report => json!({}),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

/// Output file names, relative to the run directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const STAGES: &str = "stages.json";
    pub const LOG: &str = "run.log";
    pub const INGEST_DIR: &str = "ingest";
    pub const INGEST_TOKENS: &str = "ingest/tokens.bin";
    pub const INGEST_MANIFEST: &str = "ingest/manifest.json";
    pub const CORPUS_DIR: &str = "corpus";
    pub const CORPUS_TOKENS: &str = "corpus/tokens.bin";
    pub const CORPUS_MANIFEST: &str = "corpus/manifest.json";
    pub const CANARIES: &str = "canaries.json";
    pub const PROBES: &str = "probes.jsonl";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const CHECKPOINT_INDEX: &str = "checkpoints/checkpoints.json";
    pub const TRAINING_LOSS: &str = "training_loss.csv";
    pub const REPEATS: &str = "repeats.jsonl";
    pub const COMPLEXITY: &str = "complexity.csv";
    pub const TRAJECTORIES: &str = "trajectories.csv";
    pub const DYNAMICS: &str = "dynamics_report.json";
    pub const LABELS: &str = "labels.json";
    pub const PROBE_STATS: &str = "probe_stats.csv";
    pub const PERTURBATION: &str = "perturbation.jsonl";
    pub const PERTURBATION_REPORT: &str = "perturbation_report.json";
    pub const DIAGNOSTIC: &str = "diagnostic_report.json";
    pub const SUMMARY: &str = "summary.json";
    pub const CHARTS: &str = "charts";
}

/// Named random streams, each derived from the run seed.
pub mod streams {
    pub const CORPUS: u64 = 0xC0;
    pub const CANARY_TEXT: u64 = 0xCA;
    pub const CANARY_PLACEMENT: u64 = 0xB1;
    pub const PROBES: u64 = 0x9B;
    pub const PERTURBATION: u64 = 0x9E;
    pub const RANDOM_WALK: u64 = 0x3A;
    pub const IID_CONTROL: u64 = 0x11D;
}

pub fn derived_seeds(seed: u64) -> BTreeMap<String, u64> {
    use streams::*;
    let mut m: BTreeMap<String, u64> = [
        ("corpus", CORPUS),
        ("canary_text", CANARY_TEXT),
        ("canary_placement", CANARY_PLACEMENT),
        ("probes", PROBES),
        ("perturbation", PERTURBATION),
        ("random_walk", RANDOM_WALK),
        ("iid_control", IID_CONTROL),
    ]
    .into_iter()
    .map(|(k, s)| (k.to_string(), crate::mix_seed(seed, s)))
    .collect();
    m.insert("training".into(), seed);
    m
}

/// Builds the manifest of a resolved configuration.
pub fn build_manifest(cfg: &PipelineConfig) -> Result<RunManifest> {
    let mut input_hashes = BTreeMap::new();
    if let Some(input) = &cfg.corpus.input {
        input_hashes.insert("corpus".to_string(), report::sha256_file(input).map_err(|e| stage_err(Stage::Ingest, e))?);
    }
    let mut outputs: Vec<String> = vec![files::MANIFEST.into(), files::STAGES.into(), files::LOG.into()];
    for s in Stage::ALL {
        outputs.extend(s.outputs(cfg));
    }
    Ok(RunManifest {
        toolkit: env!("CARGO_PKG_NAME").to_string(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config: cfg.clone(),
        seeds: derived_seeds(cfg.seed),
        compressor: Compressor {
            id: COMPRESSOR_ID.to_string(),
            level: COMPRESSION_LEVEL,
        },
        input_hashes,
        stages: Stage::ALL.iter().map(|s| s.name().to_string()).collect(),
        outputs,
    })
}

fn stage_err(stage: Stage, source: Error) -> Error {
    Error::Stage {
        stage: stage.name().to_string(),
        source: Box::new(source),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    fingerprint: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Fingerprint and outputs matched the previous run.
    Reused,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub stages: Vec<(Stage, StageStatus)>,
}

/// Options of [`run_pipeline`].
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop after this stage.
    pub until: Option<Stage>,
    /// Recompute every stage regardless of fingerprints.
    pub force: bool,
    /// Progress lines, e.g. for a terminal.
    pub progress: Option<&'a (dyn Fn(&str) + Sync)>,
    /// Input hashes the run must reproduce, from an earlier manifest.
    pub expect_inputs: Option<BTreeMap<String, String>>,
}

pub(crate) struct Ctx<'a> {
    pub out: &'a Path,
    pub cfg: &'a PipelineConfig,
    pub seeds: &'a BTreeMap<String, u64>,
    pub progress: &'a dyn Fn(&str),
}

impl Ctx<'_> {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn seed(&self, stream: &str) -> u64 {
        self.seeds[stream]
    }

    pub fn say(&self, msg: &str) {
        (self.progress)(msg)
    }
}

/// Runs the stages in order, writing `manifest.json` before anything else.
///
/// A stage is skipped when its fingerprint (its config slice, the toolkit
/// version, external input hashes and the fingerprints of the stages it
/// reads) matches `stages.json` and its recorded outputs are unchanged.
pub fn run_pipeline(config: PipelineConfig, out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = config.resolve()?;
    let manifest = build_manifest(&cfg)?;
    if let Some(expected) = &opts.expect_inputs {
        if expected != &manifest.input_hashes {
            return Err(stage_err(
                Stage::Ingest,
                Error::invalid("input files differ from the hashes recorded in the manifest"),
            ));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report::write_json(&out.join(files::MANIFEST), &manifest)?;

    let stages_path = out.join(files::STAGES);
    let mut records: BTreeMap<Stage, StageRecord> = if stages_path.exists() {
        report::read_json(&stages_path).unwrap_or_default()
    } else {
        BTreeMap::new()
    };
    let quiet = |_: &str| {};
    let progress: &dyn Fn(&str) = match opts.progress {
        Some(p) => p,
        None => &quiet,
    };
    let ctx = Ctx {
        out,
        cfg: &cfg,
        seeds: &manifest.seeds,
        progress,
    };

    let mut log = String::new();
    let mut fingerprints: BTreeMap<Stage, String> = BTreeMap::new();
    let mut statuses = Vec::new();
    let mut dirty = false;
    for stage in Stage::ALL {
        let fp = fingerprint(stage, &cfg, &manifest, &fingerprints)?;
        fingerprints.insert(stage, fp.clone());
        let reusable = !opts.force
            && !dirty
            && records.get(&stage).is_some_and(|r| r.fingerprint == fp && outputs_intact(out, r));
        if reusable {
            progress(&format!("[{stage}] up to date"));
            log.push_str(&format!("{stage}: reused\n"));
            statuses.push((stage, StageStatus::Reused));
        } else {
            dirty = true;
            records.remove(&stage);
            report::write_json(&stages_path, &records)?;
            progress(&format!("[{stage}] running"));
            let started = Instant::now();
            stages::run(stage, &ctx).map_err(|e| stage_err(stage, e))?;
            let secs = started.elapsed().as_secs_f64();
            log.push_str(&format!("{stage}: ran in {secs:.2}s\n"));
            progress(&format!("[{stage}] done in {secs:.1}s"));
            let mut hashes = BTreeMap::new();
            for rel in stage.outputs(&cfg) {
                hashes.insert(rel.clone(), report::sha256_file(&out.join(&rel)).map_err(|e| stage_err(stage, e))?);
            }
            records.insert(
                stage,
                StageRecord {
                    fingerprint: fp,
                    outputs: hashes,
                },
            );
            report::write_json(&stages_path, &records)?;
            statuses.push((stage, StageStatus::Ran));
        }
        if opts.until == Some(stage) {
            break;
        }
    }
    report::write_file(&out.join(files::LOG), log.as_bytes())?;
    Ok(RunOutcome {
        out_dir: out.to_path_buf(),
        manifest,
        stages: statuses,
    })
}

fn fingerprint(
    stage: Stage,
    cfg: &PipelineConfig,
    manifest: &RunManifest,
    done: &BTreeMap<Stage, String>,
) -> Result<String> {
    let deps: Vec<&String> = stage.deps().iter().map(|d| &done[d]).collect();
    let inputs = if stage == Stage::Ingest {
        serde_json::to_value(&manifest.input_hashes)?
    } else {
        serde_json::Value::Null
    };
    let value = serde_json::json!({
        "stage": stage.name(),
        "version": TOOLKIT_VERSION,
        "config": stage.config_slice(cfg),
        "inputs": inputs,
        "deps": deps,
    });
    Ok(report::sha256_hex(&serde_json::to_vec(&value)?))
}

fn outputs_intact(out: &Path, record: &StageRecord) -> bool {
    record
        .outputs
        .iter()
        .all(|(rel, hash)| report::sha256_file(&out.join(rel)).is_ok_and(|h| &h == hash))
}

/// Re-runs the configuration recorded in `manifest.json`, checking that
/// external inputs still hash to the recorded values.
pub fn rerun_manifest(manifest_path: &Path, out: &Path, opts: RunOptions) -> Result<RunOutcome> {
    let manifest = RunManifest::load(manifest_path)?;
    let opts = RunOptions {
        expect_inputs: Some(manifest.input_hashes.clone()),
        ..opts
    };
    run_pipeline(manifest.config, out, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn deps_precede_stage() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            for d in s.deps() {
                assert!(Stage::ALL[..i].contains(d), "{s} depends on later {d}");
            }
        }
    }

    #[test]
    fn manifest_lists_every_chart_and_checkpoint() {
        let mut cfg = PipelineConfig::default();
        cfg.model.total_steps = 30;
        cfg.model.checkpoint_every = 10;
        let m = build_manifest(&cfg.resolve().unwrap()).unwrap();
        assert_eq!(m.outputs.iter().filter(|o| o.starts_with("charts/")).count(), 14);
        assert!(m.outputs.contains(&"checkpoints/ckpt-00000030.maud".to_string()));
        assert_eq!(m.seeds.len(), 8);
    }

    #[test]
    fn missing_corpus_names_ingest() {
        let mut cfg = PipelineConfig::default();
        cfg.corpus.input = Some("/definitely/not/here.txt".into());
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(cfg, dir.path(), &RunOptions::default()).unwrap_err();
        assert!(matches!(&err, Error::Stage { stage, .. } if stage == "ingest"), "{err}");
    }
}
