use std::collections::BTreeMap;

use super::{files, Ctx, DynamicsConfig, Stage};
use crate::complexity::{bin_index, quantile_edges, z_complexity};
use crate::corpus::synth::{canary_specs, synthetic_corpus};
use crate::corpus::{
    extract_probes, ingest, load_corpus, plant_canaries, probes_for_canaries, read_probes, save_corpus,
    write_probes, Corpus, Probe, ProbeId,
};
use crate::diagnostic::{apply_threshold, calibrate, score_probes};
use crate::dynamics::{
    binned_means, by_probe, classify_probes, compute_trajectories, deltas, delta_histogram, fit_laplace,
    fit_memorization_model, iid_control, random_walk_control, stationarity_stats, AnalysisWindow, ClassLabel,
    MemorizationRecord, Trajectory,
};
use crate::error::{Error, Result};
use crate::model::{
    best_of_perturbations_batch, perturb, train_observed, weight_delta, weight_histogram, CheckpointRecord,
    CheckpointStore, Histogram,
};
use crate::repeats::{build_index, find_repeats, read_hits, repeat_counts, write_hits};
use crate::report::{
    self, CanaryLevel, ClassPerturbation, ComplexityRow, DiagnosticOutput, DynamicsReport, PerturbationReport,
    ProbeStat, WeightReport,
};
use crate::stats;

pub(super) fn run(stage: Stage, ctx: &Ctx) -> Result<()> {
    match stage {
        Stage::Ingest => ingest_stage(ctx),
        Stage::Plant => plant_stage(ctx),
        Stage::Probes => probes_stage(ctx),
        Stage::Train => train_stage(ctx),
        Stage::ScanRepeats => repeats_stage(ctx),
        Stage::Complexity => complexity_stage(ctx),
        Stage::Trajectory => trajectory_stage(ctx),
        Stage::Dynamics => dynamics_stage(ctx),
        Stage::Perturb => perturb_stage(ctx),
        Stage::Diagnose => diagnose_stage(ctx),
        Stage::Report => report_stage(ctx),
    }
}

fn ingest_stage(ctx: &Ctx) -> Result<()> {
    let c = &ctx.cfg.corpus;
    let corpus = match &c.input {
        Some(path) => ingest(path, c.format)?,
        None => {
            let s = &c.synthetic;
            synthetic_corpus(s.documents, s.min_len, s.max_len, &s.mix, ctx.seed("corpus"))
        }
    };
    if corpus.is_empty() {
        return Err(Error::invalid("corpus has no documents"));
    }
    ctx.say(&format!("{} documents, {} tokens", corpus.len(), corpus.total_tokens()));
    save_corpus(&corpus, &ctx.path(files::INGEST_DIR))
}

fn load_planted(ctx: &Ctx) -> Result<Corpus> {
    load_corpus(&ctx.path(files::CORPUS_DIR))
}

fn load_probes(ctx: &Ctx) -> Result<Vec<Probe>> {
    read_probes(&ctx.path(files::PROBES))
}

fn load_store(ctx: &Ctx, corpus: &Corpus) -> Result<CheckpointStore> {
    CheckpointStore::load(&ctx.path(files::CHECKPOINTS), corpus)
}

fn plant_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_corpus(&ctx.path(files::INGEST_DIR))?;
    let c = &ctx.cfg.canaries;
    let specs = canary_specs(&c.levels, c.per_level, c.length, ctx.seed("canary_text"));
    let window = ctx.cfg.probes.k + ctx.cfg.probes.l;
    let planted = plant_canaries(&corpus, &specs, ctx.seed("canary_placement"), window)?;
    ctx.say(&format!(
        "{} canaries, {} documents, {} tokens",
        specs.len(),
        planted.len(),
        planted.total_tokens()
    ));
    save_corpus(&planted, &ctx.path(files::CORPUS_DIR))?;
    report::write_json(&ctx.path(files::CANARIES), &specs)
}

fn probes_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let p = &ctx.cfg.probes;
    let ordinary = corpus.filter(|m| !m.canary);
    let mut probes = extract_probes(&ordinary, p.k, p.l, p.count, ctx.seed("probes"), p.dedupe)?;
    probes.extend(probes_for_canaries(&corpus, p.k, p.l, p.count as u32));
    write_probes(&ctx.path(files::PROBES), &probes)
}

fn train_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let m = &ctx.cfg.model;
    let report_every = (m.total_steps / 10).max(1);
    let mut rows = Vec::with_capacity(m.total_steps as usize);
    let store = train_observed(&corpus, m, &mut |step, loss| {
        rows.push(LossRow {
            step,
            loss,
            learning_rate: m.learning_rate(step),
        });
        if (step + 1) % report_every == 0 {
            ctx.say(&format!("step {}/{} loss {loss:.4}", step + 1, m.total_steps));
        }
    })?;
    store.save(&ctx.path(files::CHECKPOINTS))?;
    report::write_csv(&ctx.path(files::TRAINING_LOSS), &rows)
}

#[derive(serde::Serialize, serde::Deserialize)]
pub(crate) struct LossRow {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

fn repeats_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let probes = load_probes(ctx)?;
    let r = &ctx.cfg.repeats;
    let index = build_index(&corpus, r.n)?;
    let hits = find_repeats(&probes, &index, &corpus, r.min_len)?;
    ctx.say(&format!("{} hits", hits.len()));
    write_hits(&ctx.path(files::REPEATS), &hits)
}

fn complexity_stage(ctx: &Ctx) -> Result<()> {
    let probes = load_probes(ctx)?;
    // round first so bins agree with values read back from the CSV
    let z = probes
        .iter()
        .map(|p| Ok(format!("{:.6}", z_complexity(&p.target)?.value())))
        .collect::<Result<Vec<String>>>()?;
    let values: Vec<f64> = z.iter().map(|s| s.parse().expect("formatted float")).collect();
    let edges = quantile_edges(&values, ctx.cfg.complexity.bins)?;
    let rows: Vec<ComplexityRow> = probes
        .iter()
        .zip(z)
        .zip(&values)
        .map(|((p, z), &v)| ComplexityRow {
            probe_id: p.probe_id,
            z_complexity: z,
            complexity_bin: bin_index(v, &edges),
        })
        .collect();
    report::write_csv(&ctx.path(files::COMPLEXITY), &rows)
}

fn trajectory_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let probes = load_probes(ctx)?;
    let store = load_store(ctx, &corpus)?;
    ctx.say(&format!("{} probes x {} checkpoints", probes.len(), store.checkpoints.len()));
    let trajectories = compute_trajectories(&probes, &store.checkpoints, Some(&store.schedule))?;
    report::write_trajectories(&ctx.path(files::TRAJECTORIES), &trajectories)
}

/// Per-probe facts feeding the dynamics analysis.
pub struct DynamicsInputs<'a> {
    pub probes: &'a [Probe],
    pub corpus: &'a Corpus,
    pub repeats: &'a BTreeMap<ProbeId, usize>,
    pub z_complexity: &'a BTreeMap<ProbeId, f64>,
    pub trajectories: &'a [Trajectory],
    /// Resolved: window and stationarity start are set.
    pub config: &'a DynamicsConfig,
    pub l: usize,
    pub complexity_bins: usize,
    pub random_walk_seed: u64,
    pub iid_seed: u64,
}

/// Canary, complexity, regression, delta, stationarity and class analyses
/// over one set of trajectories.
pub fn analyze_dynamics(
    inp: &DynamicsInputs,
) -> Result<(DynamicsReport, BTreeMap<ProbeId, ClassLabel>, Vec<ProbeStat>)> {
    let cfg = inp.config;
    let (start, end) = match (cfg.window_start, cfg.window_end) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(Error::invalid("dynamics window is not resolved")),
    };
    let from = cfg.stationarity_from.unwrap_or(start);
    let window = AnalysisWindow { start, end };
    let trajs = by_probe(inp.trajectories);
    let checkpoints: Vec<u64> = inp
        .trajectories
        .first()
        .map(|t| t.series.iter().map(|&(s, _)| s).collect())
        .unwrap_or_default();
    let final_step = *checkpoints.last().ok_or_else(|| Error::invalid("no trajectories"))?;

    struct Row<'p> {
        probe: &'p Probe,
        traj: &'p Trajectory,
        canary: bool,
        planted: u32,
        repeats: usize,
        z: f64,
        last: usize,
    }
    let mut rows = Vec::with_capacity(inp.probes.len());
    for p in inp.probes {
        let meta = inp
            .corpus
            .meta(p.source_doc)
            .ok_or_else(|| Error::invalid(format!("probe {} cites unknown document {}", p.probe_id, p.source_doc)))?;
        let traj = *trajs
            .get(&p.probe_id)
            .ok_or_else(|| Error::invalid(format!("no trajectory for probe {}", p.probe_id)))?;
        let missing = |what: &str| Error::invalid(format!("no {what} for probe {}", p.probe_id));
        rows.push(Row {
            probe: p,
            traj,
            canary: meta.canary,
            planted: meta.repeat_count,
            repeats: *inp.repeats.get(&p.probe_id).ok_or_else(|| missing("repeat count"))?,
            z: *inp.z_complexity.get(&p.probe_id).ok_or_else(|| missing("z-complexity"))?,
            last: traj.series.last().map_or(0, |&(_, v)| v),
        });
    }

    // canary levels
    let mut levels: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.canary) {
        levels.entry(r.planted).or_default().push(r.last as f64);
    }
    let canary_levels: Vec<CanaryLevel> = levels
        .iter()
        .map(|(&planted_count, v)| CanaryLevel {
            planted_count,
            probes: v.len(),
            mean_final_kl_ld: stats::mean(v).expect("non-empty level"),
        })
        .collect();
    let canary_spearman = stats::spearman(
        &canary_levels.iter().map(|c| (c.planted_count as f64).ln()).collect::<Vec<_>>(),
        &canary_levels.iter().map(|c| c.mean_final_kl_ld).collect::<Vec<_>>(),
    );

    // seen exactly once: an ordinary document reached by training whose
    // target occurs nowhere else
    let single: Vec<&Row> = rows
        .iter()
        .filter(|r| !r.canary && r.repeats == 0 && r.traj.first_encounter_step.is_some())
        .collect();
    let complexity_spearman = stats::spearman(
        &single.iter().map(|r| r.z).collect::<Vec<_>>(),
        &single.iter().map(|r| r.last as f64).collect::<Vec<_>>(),
    );

    let records: Vec<MemorizationRecord> = rows
        .iter()
        .filter(|r| r.traj.first_encounter_step.is_some())
        .map(|r| MemorizationRecord {
            probe_id: r.probe.probe_id,
            repeats: r.repeats,
            z_complexity: r.z,
            kl_ld: r.last as f64,
        })
        .collect();
    let regression = fit_memorization_model(&records, cfg.log_complexity).ok();
    let all_z: Vec<f64> = rows.iter().map(|r| r.z).collect();
    let complexity_edges = quantile_edges(&all_z, inp.complexity_bins)?;
    let mut repeat_edges = vec![0.0];
    let max_repeats = records.iter().map(|r| r.repeats).max().unwrap_or(0);
    let mut e = 1.0;
    while e <= max_repeats as f64 {
        repeat_edges.push(e);
        e *= 2.0;
    }
    repeat_edges.push(e);
    let binned = binned_means(&records, &repeat_edges, &complexity_edges);

    // deltas and stationarity over single-occurrence probes already seen at
    // `from`, restricted to checkpoints from there on
    let tail: Vec<Trajectory> = single
        .iter()
        .filter(|r| r.traj.first_encounter_step.is_some_and(|s| s <= from))
        .map(|r| Trajectory {
            probe_id: r.traj.probe_id,
            series: r.traj.series.iter().copied().filter(|&(s, _)| s >= from).collect(),
            first_encounter_step: r.traj.first_encounter_step,
        })
        .collect();
    let d: Vec<f64> = deltas(&tail).into_iter().map(|v| v as f64).collect();
    let grid = tail.first().map_or(0, |t| t.series.len());
    let stationarity = stationarity_stats(&tail).ok();
    let step_sd = stats::variance(&d).map(f64::sqrt).filter(|s| *s > 0.0).unwrap_or(1.0);
    let random_walk = random_walk_control(tail.len(), grid, step_sd, cfg.random_walk_repetitions, inp.random_walk_seed).ok();
    let iid = iid_control(tail.len().max(2), grid, inp.iid_seed).ok();

    let candidates: Vec<Trajectory> = rows
        .iter()
        .filter(|r| !r.canary && r.repeats == 0)
        .map(|r| r.traj.clone())
        .collect();
    let labels = classify_probes(&candidates, cfg.memorized_frac, cfg.unmemorized_frac, window, inp.l)?;
    let mut class_counts: BTreeMap<ClassLabel, usize> = ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
    for l in labels.values() {
        *class_counts.get_mut(l).expect("all labels present") += 1;
    }

    let stats_rows = rows
        .iter()
        .map(|r| ProbeStat {
            probe_id: r.probe.probe_id,
            source_doc: r.probe.source_doc,
            canary: r.canary,
            planted_count: r.planted,
            repeats: r.repeats,
            z_complexity: r.z,
            complexity_bin: bin_index(r.z, &complexity_edges),
            first_encounter_step: r.traj.first_encounter_step,
            final_kl_ld: r.last,
            label: labels.get(&r.probe.probe_id).copied(),
        })
        .collect();

    let report = DynamicsReport {
        checkpoints,
        final_step,
        window,
        memorized_threshold: cfg.memorized_frac * inp.l as f64,
        unmemorized_threshold: cfg.unmemorized_frac * inp.l as f64,
        canary_levels,
        canary_spearman,
        single_occurrence: single.len(),
        complexity_spearman,
        complexity_edges,
        regression,
        repeat_edges,
        binned,
        stationarity_from: from,
        delta_probes: tail.len(),
        delta_histogram: delta_histogram(&tail),
        delta_skewness: stats::skewness(&d),
        delta_median: stats::median(&d),
        laplace: fit_laplace(&d).ok(),
        stationarity,
        random_walk,
        iid_control: iid,
        class_counts,
    };
    Ok((report, labels, stats_rows))
}

fn dynamics_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let probes = load_probes(ctx)?;
    let hits = read_hits(&ctx.path(files::REPEATS))?;
    let repeats = repeat_counts(&probes, &hits);
    let complexity: Vec<ComplexityRow> = report::read_csv(&ctx.path(files::COMPLEXITY))?;
    let z = complexity
        .iter()
        .map(|r| {
            r.z_complexity
                .parse::<f64>()
                .map(|v| (r.probe_id, v))
                .map_err(|_| Error::Format(format!("bad z_complexity `{}`", r.z_complexity)))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let trajectories = report::read_trajectories(&ctx.path(files::TRAJECTORIES))?;
    let (report, labels, rows) = analyze_dynamics(&DynamicsInputs {
        probes: &probes,
        corpus: &corpus,
        repeats: &repeats,
        z_complexity: &z,
        trajectories: &trajectories,
        config: &ctx.cfg.dynamics,
        l: ctx.cfg.probes.l,
        complexity_bins: ctx.cfg.complexity.bins,
        random_walk_seed: ctx.seed("random_walk"),
        iid_seed: ctx.seed("iid_control"),
    })?;
    ctx.say(&format!("classes {:?}", report.class_counts));
    report::write_json(&ctx.path(files::DYNAMICS), &report)?;
    report::write_json(&ctx.path(files::LABELS), &labels)?;
    report::write_csv(&ctx.path(files::PROBE_STATS), &rows)
}

fn read_labels(ctx: &Ctx) -> Result<BTreeMap<ProbeId, ClassLabel>> {
    report::read_json(&ctx.path(files::LABELS))
}

fn checkpoint_at(store: &CheckpointStore, step: u64) -> Result<&CheckpointRecord> {
    store
        .get(step)
        .ok_or_else(|| Error::invalid(format!("no checkpoint at step {step}")))
}

/// Histogram over `bins` equal bins spanning `[-m, m]`, `m` the largest
/// magnitude.
fn signed_histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let m = if m > 0.0 { m } else { 1.0 };
    let width = 2.0 * m / bins as f64;
    let mut counts = vec![0u64; bins];
    for v in values {
        let i = (((v + m) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram {
        edges: (0..=bins).map(|i| -m + i as f64 * width).collect(),
        counts,
    }
}

fn element_deltas(a: &CheckpointRecord, b: &CheckpointRecord) -> Vec<f64> {
    a.params
        .data()
        .iter()
        .zip(b.params.data())
        .map(|(&x, &y)| y as f64 - x as f64)
        .collect()
}

/// Weight movement between checkpoints next to the size of one perturbation.
pub fn weight_report(checkpoints: &[CheckpointRecord], base: &CheckpointRecord, sigma: f64, seed: u64) -> Result<WeightReport> {
    let consecutive = checkpoints
        .windows(2)
        .map(|w| Ok((w[0].step, w[1].step, weight_delta(&w[0], &w[1])?)))
        .collect::<Result<Vec<_>>>()?;
    let noisy = perturb(base, sigma, seed)?;
    let step_delta = match checkpoints {
        [.., a, b] => element_deltas(a, b),
        _ => Vec::new(),
    };
    Ok(WeightReport {
        consecutive,
        perturbation: weight_delta(base, &noisy)?,
        perturbation_expected: sigma * (base.param_count() as f64).sqrt(),
        step_delta_histogram: signed_histogram(&step_delta, 60),
        perturbation_delta_histogram: signed_histogram(&element_deltas(base, &noisy), 60),
        magnitude_histogram: weight_histogram(base, 60),
    })
}

fn perturb_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let probes = load_probes(ctx)?;
    let labels = read_labels(ctx)?;
    let store = load_store(ctx, &corpus)?;
    let pc = &ctx.cfg.perturbation;
    let step = pc.checkpoint.ok_or_else(|| Error::invalid("perturbation checkpoint is not resolved"))?;
    let base = checkpoint_at(&store, step)?;
    let seed = ctx.seed("perturbation");

    let mut chosen: Vec<(ClassLabel, Vec<&Probe>)> = Vec::new();
    for label in ClassLabel::ALL {
        let picked: Vec<&Probe> = probes
            .iter()
            .filter(|p| labels.get(&p.probe_id) == Some(&label))
            .take(pc.per_class)
            .collect();
        chosen.push((label, picked));
    }
    let selected: Vec<Probe> = chosen.iter().flat_map(|(_, ps)| ps.iter().map(|p| (*p).clone())).collect();
    ctx.say(&format!("{} probes x {} trials at step {step}", selected.len(), pc.trials));
    let outcomes = if selected.is_empty() {
        Vec::new()
    } else {
        best_of_perturbations_batch(base, &selected, pc.trials, pc.sigma, seed)?
    };
    let best: BTreeMap<ProbeId, usize> = outcomes.iter().map(|o| (o.probe_id, o.min_kl_ld)).collect();
    let unperturbed: BTreeMap<ProbeId, usize> = if selected.is_empty() {
        BTreeMap::new()
    } else {
        selected
            .iter()
            .map(|p| p.probe_id)
            .zip(crate::metric::kl_ld_batch(base, &selected)?.into_iter().map(|k| k.value()))
            .collect()
    };
    let classes: Vec<ClassPerturbation> = chosen
        .iter()
        .map(|(label, ps)| ClassPerturbation {
            label: *label,
            probes: ps.iter().map(|p| p.probe_id).collect(),
            unperturbed: ps.iter().map(|p| unperturbed[&p.probe_id]).collect(),
            best: ps.iter().map(|p| best[&p.probe_id]).collect(),
        })
        .collect();
    let values = |label: ClassLabel| -> Vec<f64> {
        classes
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.best.iter().map(|&v| v as f64).collect())
            .unwrap_or_default()
    };
    let control = values(ClassLabel::UnseenControl);
    let perturbation_report = PerturbationReport {
        checkpoint: step,
        sigma: pc.sigma,
        trials: pc.trials,
        seed,
        latent_vs_control: stats::mann_whitney(&values(ClassLabel::Latent), &control).ok(),
        never_vs_control: stats::mann_whitney(&values(ClassLabel::NeverMemorized), &control).ok(),
        classes,
        weights: weight_report(&store.checkpoints, base, pc.sigma, seed)?,
    };
    report::write_jsonl(&ctx.path(files::PERTURBATION), &outcomes)?;
    report::write_json(&ctx.path(files::PERTURBATION_REPORT), &perturbation_report)
}

fn diagnose_stage(ctx: &Ctx) -> Result<()> {
    let corpus = load_planted(ctx)?;
    let probes = load_probes(ctx)?;
    let labels = read_labels(ctx)?;
    let store = load_store(ctx, &corpus)?;
    let step = ctx
        .cfg
        .diagnostic
        .checkpoint
        .ok_or_else(|| Error::invalid("diagnostic checkpoint is not resolved"))?;
    let ckpt = checkpoint_at(&store, step)?;
    let labeled: Vec<Probe> = probes.iter().filter(|p| labels.contains_key(&p.probe_id)).cloned().collect();
    let scores = if labeled.is_empty() { Vec::new() } else { score_probes(ckpt, &labeled)? };
    let of = |label: ClassLabel| -> Vec<f64> {
        scores
            .iter()
            .filter(|s| labels.get(&s.probe_id) == Some(&label))
            .map(|s| s.ce_loss)
            .collect()
    };
    let calibration = calibrate(&of(ClassLabel::Latent), &of(ClassLabel::UnseenControl)).ok();
    // losses are non-negative, so 0 flags nothing when there is no calibration
    let threshold = calibration.as_ref().map_or(0.0, |c| c.threshold);
    let report = apply_threshold(scores, threshold, Some(&labels));
    if let Some(c) = &calibration {
        ctx.say(&format!("auc {:.3} threshold {:.4}", c.auc, c.threshold));
    }
    report::write_json(
        &ctx.path(files::DIAGNOSTIC),
        &DiagnosticOutput {
            checkpoint: step,
            calibration,
            report,
        },
    )
}

fn report_stage(ctx: &Ctx) -> Result<()> {
    let summary = report::summarize(ctx.out)?;
    report::write_json(&ctx.path(files::SUMMARY), &summary)?;
    report::emit_charts(ctx.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_histogram_is_symmetric_and_conserves() {
        let h = signed_histogram(&[-2.0, -1.0, 0.0, 1.0, 2.0], 4);
        assert_eq!(h.edges, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
        assert_eq!(signed_histogram(&[], 5).total(), 0);
    }
}
