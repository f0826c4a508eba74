use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memaudit::corpus::InputFormat;
use memaudit::model::{DEFAULT_SIGMA, DEFAULT_TRIALS};
use memaudit::pipeline::{commands, rerun_manifest, run_pipeline, PipelineConfig, RunOptions, Stage};
use memaudit::{Error, Result};

#[derive(Parser)]
#[command(name = "memaudit", version, about = "Memorization audit for small byte-level language models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config, or a manifest.json of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a text corpus (or generate the synthetic one) into a corpus directory.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "plain-lines")]
        format: InputFormat,
    },
    /// Plant canaries into a corpus and cut probes.
    Plant {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the model and write checkpoints.
    Train {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Find training documents sharing long runs with each probe target.
    ScanRepeats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 30)]
        min_len: usize,
    },
    /// z-complexity of every probe target.
    Complexity {
        #[arg(long)]
        probes: PathBuf,
    },
    /// kl-LD of every probe at one checkpoint.
    Measure {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        probes: PathBuf,
    },
    /// kl-LD of every probe at every checkpoint of a training run.
    Trajectory {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        probes: PathBuf,
    },
    /// Best-of-N kl-LD under Gaussian weight noise.
    Perturb {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
    },
    /// Cross-entropy detector, calibrated on labels or at a fixed threshold.
    Diagnose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rebuild summary and charts of a run directory.
    Report,
    /// Full pipeline with per-stage resume.
    Run {
        /// Stop after this stage.
        #[arg(long)]
        until: Option<Stage>,
        /// Recompute every stage.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out is required".into()))
}

fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest { input, format } => {
            let c = commands::ingest_corpus(input.as_deref(), format, &config(g)?, out(g)?)?;
            println!("{} documents, {} tokens", c.len(), c.total_tokens());
        }
        Command::Plant { corpus } => {
            let (c, probes) = commands::plant_and_probe(&corpus, &config(g)?, out(g)?)?;
            println!("{} documents, {probes} probes", c.len());
        }
        Command::Train { corpus } => {
            let cfg = config(g)?;
            let every = (cfg.model.total_steps / 20).max(1);
            let store = commands::train_corpus(&corpus, &cfg, out(g)?, &|s, l| {
                if (s + 1) % every == 0 {
                    eprintln!("step {} loss {l:.4}", s + 1);
                }
            })?;
            println!("{} checkpoints", store.checkpoints.len());
        }
        Command::ScanRepeats { corpus, probes, n, min_len } => {
            let hits = commands::scan_repeats(&corpus, &probes, n, min_len, out(g)?)?;
            println!("{hits} hits");
        }
        Command::Complexity { probes } => commands::complexity_table(&probes, out(g)?)?,
        Command::Measure { ckpt, probes } => commands::measure(&ckpt, &probes, out(g)?)?,
        Command::Trajectory { corpus, checkpoints, probes } => {
            commands::trajectory_table(&corpus, &checkpoints, &probes, out(g)?)?
        }
        Command::Perturb { ckpt, probes, trials, sigma } => {
            commands::perturb_probes(&ckpt, &probes, trials, sigma, g.seed.unwrap_or(0), out(g)?)?
        }
        Command::Diagnose { ckpt, probes, labels, threshold } => {
            let d = commands::diagnose_probes(&ckpt, &probes, labels.as_deref(), threshold, out(g)?)?;
            println!("threshold {} flagged {}", d.report.threshold, d.report.positives);
        }
        Command::Report => commands::regenerate_report(out(g)?)?,
        Command::Run { until, force } => {
            let progress = |m: &str| eprintln!("{m}");
            let opts = RunOptions {
                until,
                force,
                progress: Some(&progress),
                expect_inputs: None,
            };
            let dir = out(g)?;
            let from_manifest = g.config.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
            let outcome = if from_manifest && g.seed.is_none() {
                rerun_manifest(g.config.as_deref().expect("checked"), dir, opts)?
            } else {
                run_pipeline(config(g)?, dir, &opts)?
            };
            println!("run complete: {}", outcome.out_dir.display());
        }
    }
    Ok(())
}
