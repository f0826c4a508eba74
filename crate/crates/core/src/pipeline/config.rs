use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::synth::SynthMix;
use crate::corpus::InputFormat;
use crate::dynamics::{DEFAULT_MEMORIZED_FRAC, DEFAULT_UNMEMORIZED_FRAC};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, DEFAULT_SIGMA, DEFAULT_TRIALS};
use crate::report::RunManifest;

/// Declarative description of one audit run. Every field has a default, so
/// an empty file is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub canaries: CanaryConfig,
    pub probes: ProbeConfig,
    pub repeats: RepeatConfig,
    pub complexity: ComplexityConfig,
    /// `model.seed` is overwritten with `seed` when the run is resolved.
    pub model: ModelConfig,
    pub dynamics: DynamicsConfig,
    pub perturbation: PerturbationConfig,
    pub diagnostic: DiagnosticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Text corpus to ingest; a synthetic corpus is generated when absent.
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub synthetic: SyntheticConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            input: None,
            format: InputFormat::PlainLines,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub documents: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mix: SynthMix,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            documents: 2000,
            min_len: 200,
            max_len: 1200,
            mix: SynthMix::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanaryConfig {
    /// Planted copies per canary group.
    pub levels: Vec<u32>,
    pub per_level: usize,
    /// Bytes per canary text.
    pub length: usize,
}

impl Default for CanaryConfig {
    fn default() -> Self {
        CanaryConfig {
            levels: (0..9).map(|i| 1 << i).collect(),
            per_level: 4,
            length: 112,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub k: usize,
    pub l: usize,
    /// Random probes drawn from ordinary documents; canary probes come on top.
    pub count: usize,
    pub dedupe: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            k: 32,
            l: 64,
            count: 2000,
            dedupe: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatConfig {
    /// Index window length.
    pub n: usize,
    /// Shortest shared run that counts as a repeat.
    pub min_len: usize,
}

impl Default for RepeatConfig {
    fn default() -> Self {
        RepeatConfig { n: 30, min_len: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityConfig {
    /// Quantile bins of z-complexity used by the binned grids.
    pub bins: usize,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig { bins: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub memorized_frac: f64,
    pub unmemorized_frac: f64,
    /// Checkpoint steps bounding the class analysis; default is the
    /// checkpoints nearest 25% and 75% of training, earlier one on ties.
    pub window_start: Option<u64>,
    pub window_end: Option<u64>,
    /// First checkpoint of the delta and stationarity analyses; default
    /// `window_start`.
    pub stationarity_from: Option<u64>,
    pub log_complexity: bool,
    pub random_walk_repetitions: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            memorized_frac: DEFAULT_MEMORIZED_FRAC,
            unmemorized_frac: DEFAULT_UNMEMORIZED_FRAC,
            window_start: None,
            window_end: None,
            stationarity_from: None,
            log_complexity: false,
            random_walk_repetitions: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub sigma: f64,
    pub trials: usize,
    /// Probes per class that are perturbed, lowest ids first.
    pub per_class: usize,
    /// Base checkpoint; default is the analysis window start.
    pub checkpoint: Option<u64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            sigma: DEFAULT_SIGMA,
            trials: DEFAULT_TRIALS,
            per_class: 40,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    /// Checkpoint whose loss is scored; default is the analysis window start.
    pub checkpoint: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            canaries: CanaryConfig::default(),
            probes: ProbeConfig::default(),
            repeats: RepeatConfig::default(),
            complexity: ComplexityConfig::default(),
            model: ModelConfig::default(),
            dynamics: DynamicsConfig::default(),
            perturbation: PerturbationConfig::default(),
            diagnostic: DiagnosticConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Reads a TOML config, or the config embedded in a run manifest when the
    /// file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            return Ok(RunManifest::load(path)?.config);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Fills derived values and validates the whole tree.
    pub fn resolve(mut self) -> Result<Self> {
        self.model.seed = self.seed;
        self.model.validate()?;
        self.model.check_window(self.probes.k, self.probes.l)?;
        if self.probes.k == 0 || self.probes.l == 0 {
            return Err(Error::invalid("probes.k and probes.l must be at least 1"));
        }
        if self.repeats.min_len < self.repeats.n {
            return Err(Error::MinLenBelowWindow {
                min_len: self.repeats.min_len,
                n: self.repeats.n,
            });
        }
        if self.complexity.bins == 0 {
            return Err(Error::invalid("complexity.bins must be at least 1"));
        }
        if !(self.perturbation.sigma > 0.0) || self.perturbation.trials == 0 {
            return Err(Error::invalid("perturbation needs sigma > 0 and trials >= 1"));
        }
        let steps = self.checkpoint_steps();
        let snap = |frac: f64| -> u64 {
            let target = self.model.total_steps as f64 * frac;
            *steps
                .iter()
                .min_by(|a, b| (**a as f64 - target).abs().total_cmp(&(**b as f64 - target).abs()))
                .expect("at least the initial checkpoint")
        };
        let d = &mut self.dynamics;
        let start = *d.window_start.get_or_insert_with(|| snap(0.25));
        let end = *d.window_end.get_or_insert_with(|| snap(0.75));
        let from = *d.stationarity_from.get_or_insert(start);
        for (name, step) in [("window_start", start), ("window_end", end), ("stationarity_from", from)] {
            if !steps.contains(&step) {
                return Err(Error::invalid(format!("dynamics.{name} = {step} is not a checkpoint step")));
            }
        }
        if start >= end {
            return Err(Error::invalid("dynamics.window_start must precede window_end"));
        }
        for (name, step) in [("perturbation", &mut self.perturbation.checkpoint), ("diagnostic", &mut self.diagnostic.checkpoint)] {
            let s = *step.get_or_insert(start);
            if !steps.contains(&s) {
                return Err(Error::invalid(format!("{name}.checkpoint = {s} is not a checkpoint step")));
            }
        }
        Ok(self)
    }

    /// Steps at which training writes a checkpoint.
    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let m = &self.model;
        let mut steps: Vec<u64> = (0..=m.total_steps).step_by(m.checkpoint_every.max(1) as usize).collect();
        if steps.last() != Some(&m.total_steps) {
            steps.push(m.total_steps);
        }
        steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!((c.probes.k, c.probes.l), (32, 64));
        assert_eq!((c.repeats.n, c.repeats.min_len), (30, 30));
        assert_eq!(c.perturbation.sigma, 2e-3);
        assert_eq!(c.perturbation.trials, 200);
        assert_eq!(c.dynamics.memorized_frac * 64.0, 10.0);
        assert_eq!(c.dynamics.unmemorized_frac * 64.0, 50.0);
        assert_eq!(c.canaries.levels, vec![1, 2, 4, 8, 16, 32, 64, 128, 256]);
    }

    #[test]
    fn resolve_snaps_window_to_checkpoints() {
        let mut c = PipelineConfig::default();
        c.model.total_steps = 1000;
        c.model.checkpoint_every = 100;
        let r = c.resolve().unwrap();
        assert_eq!(r.dynamics.window_start, Some(200));
        assert_eq!(r.dynamics.window_end, Some(700));
        assert_eq!(r.perturbation.checkpoint, Some(200));
    }

    #[test]
    fn checkpoint_grid_includes_final_step() {
        let mut c = PipelineConfig::default();
        c.model.total_steps = 250;
        c.model.checkpoint_every = 100;
        assert_eq!(c.checkpoint_steps(), vec![0, 100, 200, 250]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_windows() {
        assert!(PipelineConfig::from_toml("nonsense = 1").is_err());
        let mut c = PipelineConfig::default();
        c.dynamics.window_start = Some(7);
        assert!(c.resolve().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::default().resolve().unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
