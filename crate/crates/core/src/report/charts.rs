//! Static SVG charts rendered from the report files of a run directory.
//!
//! Each chart carries the sha256 of the run manifest in its footer. Nothing
//! time-dependent is drawn, so regenerating from the same reports gives the
//! same bytes.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use super::{
    read_csv, read_json, read_jsonl, read_trajectories, sha256_file, write_file, DiagnosticOutput, DynamicsReport,
    PerturbationReport, ProbeStat,
};
use crate::corpus::ProbeId;
use crate::dynamics::{ClassLabel, Trajectory};
use crate::error::{Error, Result};
use crate::model::{Histogram, PerturbationOutcome};
use crate::pipeline::files;

type Draw<T = ()> = std::result::Result<T, Box<dyn StdError>>;

pub const CHART_FILES: [&str; 14] = [
    "repeats_vs_kl_ld.svg",
    "complexity_vs_kl_ld.svg",
    "kl_ld_by_complexity_bin.svg",
    "predicted_vs_actual.svg",
    "delta_histogram.svg",
    "delta_laplace_fit.svg",
    "trajectory_fan.svg",
    "stationarity_variance.svg",
    "class_trajectories.svg",
    "perturbation_recovery.svg",
    "perturbation_trials.svg",
    "ce_loss_distributions.svg",
    "weight_deltas.svg",
    "weight_magnitudes.svg",
];

const SIZE: (u32, u32) = (760, 500);
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(127, 127, 127),
];
const FAN_LIMIT: usize = 40;

fn color(i: usize) -> RGBColor {
    COLORS[i % COLORS.len()]
}

fn class_color(c: ClassLabel) -> RGBColor {
    match c {
        ClassLabel::Latent => COLORS[1],
        ClassLabel::NeverMemorized => COLORS[0],
        ClassLabel::UnseenControl => COLORS[2],
    }
}

/// Reads the reports in `dir` and writes every file of [`CHART_FILES`] to
/// `dir/charts`.
pub fn emit_charts(dir: &Path) -> Result<()> {
    let hash = sha256_file(&dir.join(files::MANIFEST))?;
    let dynamics: DynamicsReport = read_json(&dir.join(files::DYNAMICS))?;
    let stats: Vec<ProbeStat> = read_csv(&dir.join(files::PROBE_STATS))?;
    let trajectories = read_trajectories(&dir.join(files::TRAJECTORIES))?;
    let labels: BTreeMap<ProbeId, ClassLabel> = read_json(&dir.join(files::LABELS))?;
    let perturbation: PerturbationReport = read_json(&dir.join(files::PERTURBATION_REPORT))?;
    let outcomes: Vec<PerturbationOutcome> = read_jsonl(&dir.join(files::PERTURBATION))?;
    let diagnostic: DiagnosticOutput = read_json(&dir.join(files::DIAGNOSTIC))?;

    let charts: [(&str, Draw<String>); 14] = [
        (CHART_FILES[0], repeats_vs_kl_ld(&dynamics, &hash)),
        (CHART_FILES[1], complexity_vs_kl_ld(&stats, &hash)),
        (CHART_FILES[2], kl_ld_by_complexity_bin(&dynamics, &hash)),
        (CHART_FILES[3], predicted_vs_actual(&dynamics, &hash)),
        (CHART_FILES[4], delta_histogram(&dynamics, &hash)),
        (CHART_FILES[5], delta_laplace_fit(&dynamics, &hash)),
        (CHART_FILES[6], trajectory_fan(&trajectories, &stats, &hash)),
        (CHART_FILES[7], stationarity_variance(&dynamics, &hash)),
        (CHART_FILES[8], class_trajectories(&trajectories, &labels, &dynamics, &hash)),
        (CHART_FILES[9], perturbation_recovery(&perturbation, &hash)),
        (CHART_FILES[10], perturbation_trials(&perturbation, &outcomes, &hash)),
        (CHART_FILES[11], ce_loss_distributions(&diagnostic, &hash)),
        (CHART_FILES[12], weight_deltas(&perturbation, &hash)),
        (CHART_FILES[13], weight_magnitudes(&perturbation, &hash)),
    ];
    for (name, svg) in charts {
        let svg = svg.map_err(|e| Error::Format(format!("chart {name}: {e}")))?;
        write_file(&dir.join(files::CHARTS).join(name), svg.as_bytes())?;
    }
    Ok(())
}

/// Draws the frame, title and provenance footer, then hands the plot area to
/// `body`.
fn render(title: &str, hash: &str, body: impl FnOnce(&DrawingArea<SVGBackend, Shift>) -> Draw) -> Draw<String> {
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE)?;
        let (main, footer) = root.split_vertically(SIZE.1 - 24);
        footer.draw(&Text::new(
            format!("manifest sha256 {hash}"),
            (10, 6),
            ("sans-serif", 11).into_font().color(&RGBColor(90, 90, 90)),
        ))?;
        let main = main.titled(title, ("sans-serif", 20))?;
        body(&main)?;
        root.present()?;
    }
    Ok(buf)
}

fn no_data(area: &DrawingArea<SVGBackend, Shift>) -> Draw {
    let (w, h) = area.dim_in_pixel();
    area.draw(&Text::new(
        "no data",
        (w as i32 / 2 - 30, h as i32 / 2),
        ("sans-serif", 24).into_font().color(&RGBColor(120, 120, 120)),
    ))?;
    Ok(())
}

fn span(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    let pad = ((hi - lo) * 0.05).max(if hi == lo { 0.5 } else { 0.0 });
    Some((lo - pad, hi + pad))
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    color: RGBColor,
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    Line,
    Points,
    LinePoints,
}

fn xy_chart(
    area: &DrawingArea<SVGBackend, Shift>,
    x_desc: &str,
    y_desc: &str,
    series: &[Series],
    mark: Mark,
    diagonal: bool,
) -> Draw {
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let (Some(xs), Some(ys)) = (span(all().map(|p| p.0)), span(all().map(|p| p.1))) else {
        return no_data(area);
    };
    let (xs, ys) = if diagonal {
        let lo = xs.0.min(ys.0);
        let hi = xs.1.max(ys.1);
        ((lo, hi), (lo, hi))
    } else {
        (xs, ys)
    };
    let mut chart = ChartBuilder::on(area)
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw()?;
    if diagonal {
        chart.draw_series(LineSeries::new([(xs.0, xs.0), (xs.1, xs.1)], BLACK.mix(0.5)))?;
    }
    for s in series {
        let c = s.color;
        if matches!(mark, Mark::Line | Mark::LinePoints) {
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), c.stroke_width(2)))?
                .label(s.name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
        }
        if matches!(mark, Mark::Points | Mark::LinePoints) {
            let size = if mark == Mark::Points { 2 } else { 4 };
            let drawn = chart.draw_series(s.points.iter().map(|&p| Circle::new(p, size, c.mix(0.6).filled())))?;
            if mark == Mark::Points {
                drawn
                    .label(s.name.as_str())
                    .legend(move |(x, y)| Circle::new((x + 9, y), 4, c.filled()));
            }
        }
    }
    if series.iter().any(|s| !s.name.is_empty()) {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK.mix(0.4))
            .draw()?;
    }
    Ok(())
}

struct Bars {
    name: String,
    /// `(left, right, height)`.
    bars: Vec<(f64, f64, f64)>,
    color: RGBColor,
}

fn bar_chart(area: &DrawingArea<SVGBackend, Shift>, x_desc: &str, y_desc: &str, groups: &[Bars], log_y: bool) -> Draw {
    let visible = |b: &&(f64, f64, f64)| if log_y { b.2 > 0.0 } else { true };
    let all = || groups.iter().flat_map(|g| g.bars.iter().filter(visible).copied());
    let Some(xs) = span(all().flat_map(|b| [b.0, b.1])) else {
        return no_data(area);
    };
    let top = all().map(|b| b.2).fold(0.0f64, f64::max);
    if top <= 0.0 {
        return no_data(area);
    }
    let mut builder = ChartBuilder::on(area);
    let chart = builder.margin(12).x_label_area_size(40).y_label_area_size(60);
    if log_y {
        let bottom = all().map(|b| b.2).fold(f64::INFINITY, f64::min) * 0.5;
        let mut chart = chart.build_cartesian_2d(xs.0..xs.1, (bottom..top * 2.0).log_scale())?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw()?;
        for g in groups {
            let c = g.color;
            chart
                .draw_series(
                    g.bars
                        .iter()
                        .filter(visible)
                        .map(|&(l, r, h)| Rectangle::new([(l, bottom), (r, h)], c.mix(0.45).filled())),
                )?
                .label(g.name.as_str())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 14, y + 5)], c.mix(0.45).filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK.mix(0.4))
            .draw()?;
    } else {
        let mut chart = chart.build_cartesian_2d(xs.0..xs.1, 0.0..top * 1.08)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw()?;
        for g in groups {
            let c = g.color;
            chart
                .draw_series(
                    g.bars
                        .iter()
                        .map(|&(l, r, h)| Rectangle::new([(l, 0.0), (r, h)], c.mix(0.45).filled())),
                )?
                .label(g.name.as_str())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 14, y + 5)], c.mix(0.45).filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK.mix(0.4))
            .draw()?;
    }
    Ok(())
}

fn histogram_bars(h: &Histogram) -> Vec<(f64, f64, f64)> {
    h.edges
        .windows(2)
        .zip(&h.counts)
        .map(|(e, &c)| (e[0], e[1], c as f64))
        .collect()
}

/// Fraction of `values` in unit-free bins of `width` starting at `lo`.
fn density_bars(values: &[f64], lo: f64, width: f64) -> Vec<(f64, f64, f64)> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(((v - lo) / width).floor() as i64).or_default() += 1;
    }
    let n = values.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(i, c)| {
            let left = lo + i as f64 * width;
            (left, left + width, c as f64 / n)
        })
        .collect()
}

pub(crate) fn repeats_vs_kl_ld(d: &DynamicsReport, hash: &str) -> Draw<String> {
    render("Final kl-LD by planted repeat count", hash, |a| {
        let points = d
            .canary_levels
            .iter()
            .map(|c| ((c.planted_count as f64).log2(), c.mean_final_kl_ld))
            .collect();
        xy_chart(
            a,
            "log2 planted copies",
            "mean final kl-LD",
            &[Series {
                name: "canaries".into(),
                points,
                color: color(0),
            }],
            Mark::LinePoints,
            false,
        )
    })
}

pub(crate) fn complexity_vs_kl_ld(stats: &[ProbeStat], hash: &str) -> Draw<String> {
    render("Final kl-LD against z-complexity", hash, |a| {
        let pick = |canary: bool| -> Vec<(f64, f64)> {
            stats
                .iter()
                .filter(|s| s.canary == canary && s.first_encounter_step.is_some())
                .map(|s| (s.z_complexity, s.final_kl_ld as f64))
                .collect()
        };
        xy_chart(
            a,
            "z-complexity",
            "final kl-LD",
            &[
                Series {
                    name: "ordinary".into(),
                    points: pick(false),
                    color: color(0),
                },
                Series {
                    name: "canary".into(),
                    points: pick(true),
                    color: color(1),
                },
            ],
            Mark::Points,
            false,
        )
    })
}

pub(crate) fn kl_ld_by_complexity_bin(d: &DynamicsReport, hash: &str) -> Draw<String> {
    render("Mean kl-LD by repeats within complexity bins", hash, |a| {
        let mut by_bin: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for c in &d.binned {
            let x = d.repeat_edges.get(c.repeat_bin).map_or(c.repeat_bin as f64, |&e| (1.0 + e).log2());
            by_bin.entry(c.complexity_bin).or_default().push((x, c.mean));
        }
        let series: Vec<Series> = by_bin
            .into_iter()
            .map(|(bin, points)| Series {
                name: format!("complexity bin {bin}"),
                points,
                color: color(bin),
            })
            .collect();
        xy_chart(a, "log2(1 + repeats, bin floor)", "mean kl-LD", &series, Mark::LinePoints, false)
    })
}

pub(crate) fn predicted_vs_actual(d: &DynamicsReport, hash: &str) -> Draw<String> {
    render("Regression: predicted against actual kl-LD", hash, |a| {
        let points = d.regression.as_ref().map(|r| r.predicted_vs_actual.clone()).unwrap_or_default();
        xy_chart(
            a,
            "predicted kl-LD",
            "actual kl-LD",
            &[Series {
                name: String::new(),
                points,
                color: color(0),
            }],
            Mark::Points,
            true,
        )
    })
}

fn delta_bars(d: &DynamicsReport) -> Vec<(f64, f64, f64)> {
    let h = &d.delta_histogram;
    h.values
        .iter()
        .zip(&h.counts)
        .map(|(&v, &c)| (v as f64 - 0.5, v as f64 + 0.5, c as f64))
        .collect()
}

pub(crate) fn delta_histogram(d: &DynamicsReport, hash: &str) -> Draw<String> {
    render("Change in kl-LD between consecutive checkpoints", hash, |a| {
        bar_chart(
            a,
            "delta kl-LD",
            "count",
            &[Bars {
                name: "single-occurrence probes".into(),
                bars: delta_bars(d),
                color: color(0),
            }],
            false,
        )
    })
}

pub(crate) fn delta_laplace_fit(d: &DynamicsReport, hash: &str) -> Draw<String> {
    render("Delta distribution with Laplace fit (log scale)", hash, |a| {
        let total = d.delta_histogram.total().max(1) as f64;
        let bars: Vec<(f64, f64, f64)> = delta_bars(d).into_iter().map(|(l, r, c)| (l, r, c / total)).collect();
        let mut groups = vec![Bars {
            name: "empirical".into(),
            bars,
            color: color(0),
        }];
        if let Some(fit) = &d.laplace {
            // probability mass of each integer bin under the fit
            let fitted = d
                .delta_histogram
                .values
                .iter()
                .map(|&v| {
                    let (l, r) = (v as f64 - 0.5, v as f64 + 0.5);
                    (l + 0.3, r - 0.3, fit.cdf(r) - fit.cdf(l))
                })
                .collect();
            groups.push(Bars {
                name: format!("Laplace mu={:.2} b={:.2}", fit.location, fit.scale),
                bars: fitted,
                color: color(1),
            });
        }
        bar_chart(a, "delta kl-LD", "probability", &groups, true)
    })
}

pub(crate) fn trajectory_fan(trajectories: &[Trajectory], stats: &[ProbeStat], hash: &str) -> Draw<String> {
    render("kl-LD trajectories of single-occurrence probes", hash, |a| {
        let single: std::collections::BTreeSet<ProbeId> = stats
            .iter()
            .filter(|s| !s.canary && s.repeats == 0 && s.first_encounter_step.is_some())
            .map(|s| s.probe_id)
            .collect();
        let series: Vec<Series> = trajectories
            .iter()
            .filter(|t| single.is_empty() || single.contains(&t.probe_id))
            .take(FAN_LIMIT)
            .enumerate()
            .map(|(i, t)| Series {
                name: String::new(),
                points: t.series.iter().map(|&(s, v)| (s as f64, v as f64)).collect(),
                color: color(i),
            })
            .collect();
        xy_chart(a, "training step", "kl-LD", &series, Mark::Line, false)
    })
}

pub(crate) fn stationarity_variance(d: &DynamicsReport, hash: &str) -> Draw<String> {
    render("Cross-sectional moments of normalized kl-LD", hash, |a| {
        let series = match &d.stationarity {
            Some(s) => vec![
                Series {
                    name: "variance".into(),
                    points: s.normalized.iter().map(|m| (m.step as f64, m.variance)).collect(),
                    color: color(0),
                },
                Series {
                    name: "mean".into(),
                    points: s.normalized.iter().map(|m| (m.step as f64, m.mean)).collect(),
                    color: color(1),
                },
            ],
            None => Vec::new(),
        };
        xy_chart(a, "training step", "normalized kl-LD", &series, Mark::LinePoints, false)
    })
}

pub(crate) fn class_trajectories(
    trajectories: &[Trajectory],
    labels: &BTreeMap<ProbeId, ClassLabel>,
    d: &DynamicsReport,
    hash: &str,
) -> Draw<String> {
    render("Mean kl-LD per class", hash, |a| {
        let mut series = Vec::new();
        for class in ClassLabel::ALL {
            let members: Vec<&Trajectory> = trajectories
                .iter()
                .filter(|t| labels.get(&t.probe_id) == Some(&class))
                .collect();
            let Some(first) = members.first() else { continue };
            let points = first
                .series
                .iter()
                .enumerate()
                .map(|(i, &(s, _))| {
                    let sum: usize = members.iter().map(|t| t.series[i].1).sum();
                    (s as f64, sum as f64 / members.len() as f64)
                })
                .collect();
            series.push(Series {
                name: format!("{class} ({})", members.len()),
                points,
                color: class_color(class),
            });
        }
        if !series.is_empty() {
            let top = d.unmemorized_threshold.max(64.0);
            for (step, name) in [(d.window.start, "window start"), (d.window.end, "window end")] {
                series.push(Series {
                    name: name.into(),
                    points: vec![(step as f64, 0.0), (step as f64, top)],
                    color: color(5),
                });
            }
        }
        xy_chart(a, "training step", "mean kl-LD", &series, Mark::Line, false)
    })
}

pub(crate) fn perturbation_recovery(p: &PerturbationReport, hash: &str) -> Draw<String> {
    render("Best kl-LD over perturbation trials", hash, |a| {
        let groups: Vec<Bars> = p
            .classes
            .iter()
            .filter(|c| !c.best.is_empty())
            .map(|c| Bars {
                name: format!("{} ({})", c.label, c.best.len()),
                bars: density_bars(&c.best.iter().map(|&v| v as f64).collect::<Vec<_>>(), 0.0, 4.0),
                color: class_color(c.label),
            })
            .collect();
        bar_chart(a, "minimum kl-LD", "fraction of probes", &groups, false)
    })
}

pub(crate) fn perturbation_trials(p: &PerturbationReport, outcomes: &[PerturbationOutcome], hash: &str) -> Draw<String> {
    render("kl-LD of individual perturbation trials", hash, |a| {
        let by_id: BTreeMap<ProbeId, &PerturbationOutcome> = outcomes.iter().map(|o| (o.probe_id, o)).collect();
        let groups: Vec<Bars> = p
            .classes
            .iter()
            .filter_map(|c| {
                let values: Vec<f64> = c
                    .probes
                    .iter()
                    .filter_map(|id| by_id.get(id))
                    .flat_map(|o| o.trials.iter().map(|t| t.resulting_kl_ld as f64))
                    .collect();
                (!values.is_empty()).then(|| Bars {
                    name: c.label.to_string(),
                    bars: density_bars(&values, 0.0, 2.0),
                    color: class_color(c.label),
                })
            })
            .collect();
        bar_chart(a, "kl-LD under perturbation", "fraction of trials", &groups, false)
    })
}

pub(crate) fn ce_loss_distributions(d: &DiagnosticOutput, hash: &str) -> Draw<String> {
    let title = match &d.calibration {
        Some(c) => format!("Target cross entropy per class (AUC {:.3})", c.auc),
        None => "Target cross entropy per class".to_string(),
    };
    render(&title, hash, |a| {
        let all: Vec<f64> = d.report.scores.iter().map(|s| s.ce_loss).collect();
        let Some((lo, hi)) = span(all.iter().copied()) else {
            return no_data(a);
        };
        let width = (hi - lo) / 30.0;
        let groups: Vec<Bars> = ClassLabel::ALL
            .iter()
            .filter_map(|&class| {
                let v: Vec<f64> = d
                    .report
                    .scores
                    .iter()
                    .filter(|s| s.true_label == Some(class))
                    .map(|s| s.ce_loss)
                    .collect();
                (!v.is_empty()).then(|| Bars {
                    name: format!("{class} ({})", v.len()),
                    bars: density_bars(&v, lo, width),
                    color: class_color(class),
                })
            })
            .collect();
        bar_chart(a, "mean cross entropy (nats/token)", "fraction of probes", &groups, false)
    })
}

pub(crate) fn weight_deltas(p: &PerturbationReport, hash: &str) -> Draw<String> {
    render("Element-wise weight changes (log scale)", hash, |a| {
        let w = &p.weights;
        bar_chart(
            a,
            "change in parameter value",
            "count",
            &[
                Bars {
                    name: "last training interval".into(),
                    bars: histogram_bars(&w.step_delta_histogram),
                    color: color(0),
                },
                Bars {
                    name: format!("perturbation sigma={}", p.sigma),
                    bars: histogram_bars(&w.perturbation_delta_histogram),
                    color: color(1),
                },
            ],
            true,
        )
    })
}

pub(crate) fn weight_magnitudes(p: &PerturbationReport, hash: &str) -> Draw<String> {
    render("Parameter magnitudes (log scale)", hash, |a| {
        bar_chart(
            a,
            "|parameter|",
            "count",
            &[Bars {
                name: format!("checkpoint {}", p.checkpoint),
                bars: histogram_bars(&p.weights.magnitude_histogram),
                color: color(0),
            }],
            true,
        )
    })
}
