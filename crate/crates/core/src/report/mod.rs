//! Run manifests and the CSV/JSON report files of a pipeline run.
//!
//! Every file written here is a pure function of its inputs: maps are
//! ordered, floats use Rust's shortest round-trip formatting and no wall-clock
//! data is embedded, so two runs of the same manifest agree byte for byte.

pub mod charts;

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DocId, ProbeId};
use crate::diagnostic::{Calibration, DiagnosticReport};
use crate::dynamics::{
    AnalysisWindow, BinCell, ClassLabel, DeltaHistogram, LaplaceFit, MemorizationFit, RandomWalkControl, Stationarity,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::model::Histogram;
use crate::pipeline::PipelineConfig;
use crate::stats::{MannWhitney, SlopeFit};

pub use charts::{emit_charts, CHART_FILES};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub toolkit_version: String,
    /// Fully resolved configuration, defaults filled in.
    pub config: PipelineConfig,
    /// Seed of every random stream, derived from `config.seed`.
    pub seeds: BTreeMap<String, u64>,
    pub compressor: Compressor,
    /// sha256 of external inputs, keyed by role.
    pub input_hashes: BTreeMap<String, String>,
    pub stages: Vec<String>,
    /// Every file the run writes, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compressor {
    pub id: String,
    pub level: u32,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// sha256 of the manifest file as written.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&json_bytes(self)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut bytes, r)?;
        bytes.push(b'\n');
    }
    write_file(path, &bytes)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// `probe_id, first_encounter_step, kl_ld_<step>...`; an empty cell means the
/// probe was never reached by training.
pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let steps: Vec<u64> = trajectories
        .first()
        .map(|t| t.series.iter().map(|&(s, _)| s).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["probe_id".to_string(), "first_encounter_step".to_string()];
    header.extend(steps.iter().map(|s| format!("kl_ld_{s}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in trajectories {
        let mut row = vec![
            t.probe_id.to_string(),
            t.first_encounter_step.map(|s| s.to_string()).unwrap_or_default(),
        ];
        row.extend(t.series.iter().map(|&(_, v)| v.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("probe_id") || header.get(1) != Some("first_encounter_step") {
        return Err(Error::Format(format!("{}: unexpected trajectory header", path.display())));
    }
    let steps = header
        .iter()
        .skip(2)
        .map(|h| {
            h.strip_prefix("kl_ld_")
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad column {h}", path.display())))
        })
        .collect::<Result<Vec<u64>>>()?;
    let bad = |line: usize, what: &str| Error::Parse {
        line,
        message: format!("{}: {what}", path.display()),
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let probe_id = rec[0].parse().map_err(|_| bad(line, "probe_id"))?;
        let first = match &rec[1] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(line, "first_encounter_step"))?),
        };
        let series = steps
            .iter()
            .zip(rec.iter().skip(2))
            .map(|(&s, v)| v.parse().map(|v| (s, v)).map_err(|_| bad(line, "kl_ld")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Trajectory {
            probe_id: ProbeId(probe_id),
            series,
            first_encounter_step: first,
        });
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// One row of `complexity.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub probe_id: ProbeId,
    /// Fixed six decimals.
    pub z_complexity: String,
    pub complexity_bin: usize,
}

/// One row of `probe_stats.csv`, joining every per-probe measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStat {
    pub probe_id: ProbeId,
    pub source_doc: DocId,
    pub canary: bool,
    /// Planted copies of the source document (1 for ordinary documents).
    pub planted_count: u32,
    /// Other documents sharing a long run with the target.
    pub repeats: usize,
    pub z_complexity: f64,
    pub complexity_bin: usize,
    pub first_encounter_step: Option<u64>,
    pub final_kl_ld: usize,
    pub label: Option<ClassLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanaryLevel {
    pub planted_count: u32,
    pub probes: usize,
    pub mean_final_kl_ld: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub checkpoints: Vec<u64>,
    pub final_step: u64,
    pub window: AnalysisWindow,
    pub memorized_threshold: f64,
    pub unmemorized_threshold: f64,
    /// Mean final kl-LD per planted repeat count.
    pub canary_levels: Vec<CanaryLevel>,
    /// Spearman correlation of log planted count and mean final kl-LD.
    pub canary_spearman: Option<f64>,
    /// Probes seen exactly once by training, no repeats elsewhere.
    pub single_occurrence: usize,
    pub complexity_spearman: Option<f64>,
    pub complexity_edges: Vec<f64>,
    pub regression: Option<MemorizationFit>,
    pub repeat_edges: Vec<f64>,
    pub binned: Vec<BinCell>,
    /// First checkpoint of the delta and stationarity analyses.
    pub stationarity_from: u64,
    pub delta_probes: usize,
    pub delta_histogram: DeltaHistogram,
    pub delta_skewness: Option<f64>,
    pub delta_median: Option<f64>,
    pub laplace: Option<LaplaceFit>,
    pub stationarity: Option<Stationarity>,
    pub random_walk: Option<RandomWalkControl>,
    pub iid_control: Option<SlopeFit>,
    pub class_counts: BTreeMap<ClassLabel, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPerturbation {
    pub label: ClassLabel,
    pub probes: Vec<ProbeId>,
    /// kl-LD of the unperturbed checkpoint.
    pub unperturbed: Vec<usize>,
    /// Minimum kl-LD over all trials.
    pub best: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    /// `(from_step, to_step, l2 distance)` of consecutive checkpoints.
    pub consecutive: Vec<(u64, u64, f64)>,
    /// l2 distance of one perturbation draw from its base.
    pub perturbation: f64,
    /// `sigma * sqrt(P)`.
    pub perturbation_expected: f64,
    /// Element-wise change between the last two checkpoints.
    pub step_delta_histogram: Histogram,
    /// Element-wise change of one perturbation draw.
    pub perturbation_delta_histogram: Histogram,
    /// `|param|` of the perturbation base checkpoint.
    pub magnitude_histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub checkpoint: u64,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub classes: Vec<ClassPerturbation>,
    /// One-sided: latent best kl-LD below unseen-control.
    pub latent_vs_control: Option<MannWhitney>,
    pub never_vs_control: Option<MannWhitney>,
    pub weights: WeightReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticOutput {
    pub checkpoint: u64,
    pub calibration: Option<Calibration>,
    pub report: DiagnosticReport,
}

/// Headline numbers of a finished run, one place to read them from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub manifest_sha256: String,
    pub parameters: usize,
    pub final_step: u64,
    pub final_training_loss: Option<f64>,
    pub canary_levels: Vec<CanaryLevel>,
    pub canary_spearman: Option<f64>,
    pub single_occurrence_probes: usize,
    pub complexity_spearman: Option<f64>,
    pub repeats_coef: Option<f64>,
    pub complexity_coef: Option<f64>,
    pub r_squared: Option<f64>,
    pub delta_skewness: Option<f64>,
    pub delta_median: Option<f64>,
    pub laplace: Option<LaplaceFit>,
    pub variance_slope: Option<SlopeFit>,
    pub random_walk: Option<RandomWalkControl>,
    pub class_counts: BTreeMap<ClassLabel, usize>,
    pub latent_vs_control_p: Option<f64>,
    pub never_vs_control_p: Option<f64>,
    pub diagnostic_auc: Option<f64>,
    pub diagnostic_threshold: Option<f64>,
}

#[derive(Deserialize)]
struct LossLine {
    loss: f64,
}

/// Collects the headline numbers from the report files in `dir`.
pub fn summarize(dir: &Path) -> Result<Summary> {
    use crate::pipeline::files;
    let manifest = RunManifest::load(&dir.join(files::MANIFEST))?;
    let dynamics: DynamicsReport = read_json(&dir.join(files::DYNAMICS))?;
    let perturbation: PerturbationReport = read_json(&dir.join(files::PERTURBATION_REPORT))?;
    let diagnostic: DiagnosticOutput = read_json(&dir.join(files::DIAGNOSTIC))?;
    let losses: Vec<LossLine> = read_csv(&dir.join(files::TRAINING_LOSS))?;
    let reg = dynamics.regression.as_ref();
    Ok(Summary {
        manifest_sha256: sha256_file(&dir.join(files::MANIFEST))?,
        parameters: crate::model::ParamLayout::for_config(&manifest.config.model).total(),
        final_step: dynamics.final_step,
        final_training_loss: losses.last().map(|l| l.loss),
        canary_levels: dynamics.canary_levels,
        canary_spearman: dynamics.canary_spearman,
        single_occurrence_probes: dynamics.single_occurrence,
        complexity_spearman: dynamics.complexity_spearman,
        repeats_coef: reg.map(|r| r.repeats_coef),
        complexity_coef: reg.map(|r| r.complexity_coef),
        r_squared: reg.map(|r| r.r_squared),
        delta_skewness: dynamics.delta_skewness,
        delta_median: dynamics.delta_median,
        laplace: dynamics.laplace,
        variance_slope: dynamics.stationarity.map(|s| s.variance_slope),
        random_walk: dynamics.random_walk,
        class_counts: dynamics.class_counts,
        latent_vs_control_p: perturbation.latent_vs_control.map(|m| m.p_less),
        never_vs_control_p: perturbation.never_vs_control.map(|m| m.p_two_sided),
        diagnostic_auc: diagnostic.calibration.as_ref().map(|c| c.auc),
        diagnostic_threshold: diagnostic.calibration.map(|c| c.threshold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let ts = vec![
            Trajectory {
                probe_id: ProbeId(3),
                series: vec![(0, 64), (10, 12)],
                first_encounter_step: Some(4),
            },
            Trajectory {
                probe_id: ProbeId(9),
                series: vec![(0, 60), (10, 61)],
                first_encounter_step: None,
            },
        ];
        write_trajectories(&path, &ts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("probe_id,first_encounter_step,kl_ld_0,kl_ld_10\n3,4,64,12\n9,,60,61\n"));
        assert_eq!(read_trajectories(&path).unwrap(), ts);
    }

    #[test]
    fn empty_trajectory_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trajectories(&path, &[]).unwrap();
        assert!(read_trajectories(&path).unwrap().is_empty());
    }

    #[test]
    fn jsonl_round_trip_and_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_jsonl(&path, &[1u32, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
        std::fs::write(&path, "1\nnope\n").unwrap();
        assert!(matches!(read_jsonl::<u32>(&path), Err(Error::Parse { line: 2, .. })));
    }
}
