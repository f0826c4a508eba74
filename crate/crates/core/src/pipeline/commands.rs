//! Single-stage operations on explicit files, as exposed by the CLI.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{streams, PipelineConfig};
use crate::complexity::z_complexity;
use crate::corpus::synth::{canary_specs, synthetic_corpus};
use crate::corpus::{
    extract_probes, ingest, load_corpus, plant_canaries, probes_for_canaries, read_probes, save_corpus,
    write_probes, Corpus, InputFormat, ProbeId,
};
use crate::diagnostic::{apply_threshold, calibrate, score_probes};
use crate::dynamics::{compute_trajectories, ClassLabel};
use crate::error::{Error, Result};
use crate::metric::kl_ld_batch;
use crate::model::{best_of_perturbations_batch, train_observed, CheckpointRecord, CheckpointStore};
use crate::repeats::{build_index, find_repeats, write_hits};
use crate::report::{self, DiagnosticOutput};

/// Ingests a text file, or generates the configured synthetic corpus when
/// `input` is `None`.
pub fn ingest_corpus(input: Option<&Path>, format: InputFormat, cfg: &PipelineConfig, out: &Path) -> Result<Corpus> {
    let corpus = match input {
        Some(path) => ingest(path, format)?,
        None => {
            let s = &cfg.corpus.synthetic;
            synthetic_corpus(s.documents, s.min_len, s.max_len, &s.mix, crate::mix_seed(cfg.seed, streams::CORPUS))
        }
    };
    save_corpus(&corpus, out)?;
    Ok(corpus)
}

/// Plants the configured canaries and writes the corpus, `canaries.json` and
/// `probes.jsonl` into `out`.
pub fn plant_and_probe(corpus_dir: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(Corpus, usize)> {
    let corpus = load_corpus(corpus_dir)?;
    let c = &cfg.canaries;
    let specs = canary_specs(&c.levels, c.per_level, c.length, crate::mix_seed(cfg.seed, streams::CANARY_TEXT));
    let p = &cfg.probes;
    let planted = plant_canaries(&corpus, &specs, crate::mix_seed(cfg.seed, streams::CANARY_PLACEMENT), p.k + p.l)?;
    save_corpus(&planted, out)?;
    report::write_json(&out.join("canaries.json"), &specs)?;
    let ordinary = planted.filter(|m| !m.canary);
    let mut probes = extract_probes(&ordinary, p.k, p.l, p.count, crate::mix_seed(cfg.seed, streams::PROBES), p.dedupe)?;
    probes.extend(probes_for_canaries(&planted, p.k, p.l, p.count as u32));
    write_probes(&out.join("probes.jsonl"), &probes)?;
    Ok((planted, probes.len()))
}

pub fn train_corpus(corpus_dir: &Path, cfg: &PipelineConfig, out: &Path, progress: &dyn Fn(u64, f64)) -> Result<CheckpointStore> {
    let corpus = load_corpus(corpus_dir)?;
    let mut model = cfg.model.clone();
    model.seed = cfg.seed;
    let store = train_observed(&corpus, &model, &mut |s, l| progress(s, l))?;
    store.save(out)?;
    Ok(store)
}

pub fn scan_repeats(corpus_dir: &Path, probes: &Path, n: usize, min_len: usize, out: &Path) -> Result<usize> {
    let corpus = load_corpus(corpus_dir)?;
    let probes = read_probes(probes)?;
    let index = build_index(&corpus, n)?;
    let hits = find_repeats(&probes, &index, &corpus, min_len)?;
    write_hits(out, &hits)?;
    Ok(hits.len())
}

#[derive(Serialize, Deserialize)]
struct ZRow {
    probe_id: ProbeId,
    z_complexity: String,
}

pub fn complexity_table(probes: &Path, out: &Path) -> Result<()> {
    let rows = read_probes(probes)?
        .iter()
        .map(|p| {
            Ok(ZRow {
                probe_id: p.probe_id,
                z_complexity: format!("{:.6}", z_complexity(&p.target)?.value()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report::write_csv(out, &rows)
}

#[derive(Serialize, Deserialize)]
struct MeasureRow {
    probe_id: ProbeId,
    kl_ld: usize,
    memorized: bool,
}

/// kl-LD of every probe at one checkpoint.
pub fn measure(ckpt: &Path, probes: &Path, out: &Path) -> Result<()> {
    let model = CheckpointRecord::load(ckpt)?;
    let probes = read_probes(probes)?;
    let rows: Vec<MeasureRow> = probes
        .iter()
        .zip(kl_ld_batch(&model, &probes)?)
        .map(|(p, d)| MeasureRow {
            probe_id: p.probe_id,
            kl_ld: d.value(),
            memorized: d.is_exact(),
        })
        .collect();
    report::write_csv(out, &rows)
}

pub fn trajectory_table(corpus_dir: &Path, checkpoints: &Path, probes: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let store = CheckpointStore::load(checkpoints, &corpus)?;
    let probes = read_probes(probes)?;
    let t = compute_trajectories(&probes, &store.checkpoints, Some(&store.schedule))?;
    report::write_trajectories(out, &t)
}

pub fn perturb_probes(ckpt: &Path, probes: &Path, trials: usize, sigma: f64, seed: u64, out: &Path) -> Result<()> {
    let model = CheckpointRecord::load(ckpt)?;
    let probes = read_probes(probes)?;
    let outcomes = best_of_perturbations_batch(&model, &probes, trials, sigma, seed)?;
    report::write_jsonl(out, &outcomes)
}

/// Scores probes; with labels the threshold is calibrated on latent against
/// unseen-control probes unless one is given.
pub fn diagnose_probes(
    ckpt: &Path,
    probes: &Path,
    labels: Option<&Path>,
    threshold: Option<f64>,
    out: &Path,
) -> Result<DiagnosticOutput> {
    let model = CheckpointRecord::load(ckpt)?;
    let probes = read_probes(probes)?;
    let labels: Option<BTreeMap<ProbeId, ClassLabel>> = labels.map(report::read_json).transpose()?;
    let scores = score_probes(&model, &probes)?;
    let calibration = match &labels {
        Some(l) => {
            let of = |c: ClassLabel| -> Vec<f64> {
                scores.iter().filter(|s| l.get(&s.probe_id) == Some(&c)).map(|s| s.ce_loss).collect()
            };
            Some(calibrate(&of(ClassLabel::Latent), &of(ClassLabel::UnseenControl))?)
        }
        None => None,
    };
    let threshold = threshold
        .or(calibration.as_ref().map(|c| c.threshold))
        .ok_or_else(|| Error::invalid("diagnose needs --labels or --threshold"))?;
    let output = DiagnosticOutput {
        checkpoint: model.step,
        calibration,
        report: apply_threshold(scores, threshold, labels.as_ref()),
    };
    report::write_json(out, &output)?;
    Ok(output)
}

/// Rewrites `summary.json` and the charts of a finished run directory.
pub fn regenerate_report(run_dir: &Path) -> Result<()> {
    let summary = report::summarize(run_dir)?;
    report::write_json(&run_dir.join(super::files::SUMMARY), &summary)?;
    report::emit_charts(run_dir)
}
