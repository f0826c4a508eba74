use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::{CheckpointRecord, RngState};
use super::params::{ParamLayout, Params, Slots};
use super::transformer::{Batch, Transformer};
use super::ModelConfig;
use crate::corpus::{Corpus, DocId, Probe, TokenId, DOC_SEP};
use crate::error::{Error, Result};

const INIT_STREAM: u64 = 0x1417;
const ORDER_STREAM: u64 = 0x0D0C;

/// Deterministic document order of the training stream and the mapping from
/// stream positions to optimizer steps.
///
/// Each epoch is a seeded shuffle of all documents, each followed by
/// [`DOC_SEP`]. Row `r` holds stream tokens `r*T ..= r*T + T`; step `s`
/// trains on rows `s*B .. s*B + B`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub seed: u64,
    pub row_len: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub epochs: Vec<Vec<DocId>>,
    #[serde(skip)]
    starts: HashMap<DocId, Vec<usize>>,
}

impl TrainingSchedule {
    pub fn new(corpus: &Corpus, cfg: &ModelConfig) -> Result<Self> {
        let per_epoch = corpus.total_tokens() + corpus.len();
        let tokens_per_step = cfg.batch_size * cfg.context_window;
        if corpus.is_empty() || per_epoch < tokens_per_step + 1 {
            return Err(Error::CorpusTooSmall {
                tokens: per_epoch,
                batch_tokens: tokens_per_step + 1,
            });
        }
        let needed = cfg.total_steps as usize * tokens_per_step + 1;
        let epoch_count = needed.div_ceil(per_epoch).max(1);
        let ids: Vec<DocId> = corpus.manifest().iter().map(|m| m.id).collect();
        let epochs = (0..epoch_count as u64)
            .map(|e| {
                let mut order = ids.clone();
                let seed = crate::mix_seed(crate::mix_seed(cfg.seed, ORDER_STREAM), e);
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                order
            })
            .collect();
        let mut schedule = TrainingSchedule {
            seed: cfg.seed,
            row_len: cfg.context_window,
            batch_size: cfg.batch_size,
            total_steps: cfg.total_steps,
            epochs,
            starts: HashMap::new(),
        };
        schedule.index(corpus)?;
        Ok(schedule)
    }

    /// Rebuilds stream offsets after deserialization.
    pub fn index(&mut self, corpus: &Corpus) -> Result<()> {
        let mut starts: HashMap<DocId, Vec<usize>> = HashMap::new();
        let mut pos = 0;
        for order in &self.epochs {
            for id in order {
                let doc = corpus
                    .doc(*id)
                    .ok_or_else(|| Error::invalid(format!("schedule names unknown document {}", id.0)))?;
                starts.entry(*id).or_default().push(pos);
                pos += doc.len() + 1;
            }
        }
        self.starts = starts;
        Ok(())
    }

    pub fn tokens_per_step(&self) -> usize {
        self.row_len * self.batch_size
    }

    /// The first `len` tokens of the training stream.
    pub fn stream(&self, corpus: &Corpus, len: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(len);
        'outer: for order in &self.epochs {
            for id in order {
                let doc = corpus.doc(*id).expect("schedule was indexed against this corpus");
                out.extend_from_slice(doc);
                out.push(DOC_SEP);
                if out.len() >= len {
                    break 'outer;
                }
            }
        }
        out.truncate(len);
        out
    }

    /// Step whose update first trains on the token at `offset` of `doc`, or
    /// `None` when training ends before reaching it.
    pub fn first_encounter(&self, doc: DocId, offset: usize) -> Option<u64> {
        let q = self.starts.get(&doc)?.first()? + offset;
        let row = q.saturating_sub(1) / self.row_len;
        let step = (row / self.batch_size) as u64;
        (step < self.total_steps).then_some(step)
    }

    /// First step that has seen a probe's whole window.
    pub fn probe_first_encounter(&self, probe: &Probe) -> Option<u64> {
        self.first_encounter(probe.source_doc, probe.source_offset + probe.k() + probe.l() - 1)
    }
}

/// Snapshots of one training run with its schedule and loss curve.
#[derive(Clone, Debug)]
pub struct CheckpointStore {
    pub checkpoints: Vec<CheckpointRecord>,
    pub schedule: TrainingSchedule,
    /// Mean training loss of every step.
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoreIndex {
    steps: Vec<u64>,
    losses: Vec<f64>,
    schedule: TrainingSchedule,
}

impl CheckpointStore {
    pub fn steps(&self) -> Vec<u64> {
        self.checkpoints.iter().map(|c| c.step).collect()
    }

    pub fn get(&self, step: u64) -> Option<&CheckpointRecord> {
        self.checkpoints.iter().find(|c| c.step == step)
    }

    pub fn latest(&self) -> &CheckpointRecord {
        self.checkpoints.last().expect("a store holds at least the initial snapshot")
    }

    pub fn checkpoint_file(step: u64) -> String {
        format!("ckpt-{step:08}.maud")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for c in &self.checkpoints {
            c.save(&dir.join(Self::checkpoint_file(c.step)))?;
        }
        let index = StoreIndex {
            steps: self.steps(),
            losses: self.losses.clone(),
            schedule: self.schedule.clone(),
        };
        let path = dir.join("checkpoints.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, corpus: &Corpus) -> Result<Self> {
        let path = dir.join("checkpoints.json");
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut index: StoreIndex = serde_json::from_slice(&raw)?;
        index.schedule.index(corpus)?;
        let checkpoints = index
            .steps
            .iter()
            .map(|&s| CheckpointRecord::load(&dir.join(Self::checkpoint_file(s))))
            .collect::<Result<Vec<_>>>()?;
        if checkpoints.is_empty() {
            return Err(Error::Format(format!("{} lists no checkpoints", path.display())));
        }
        Ok(CheckpointStore {
            checkpoints,
            schedule: index.schedule,
            losses: index.losses,
        })
    }
}

/// Random initialization: N(0, init_std) matrices with residual output
/// projections scaled by `1/sqrt(2 * layers)`, zero biases, unit gains.
pub fn init_params(cfg: &ModelConfig) -> Result<(Params<f32>, RngState)> {
    cfg.validate()?;
    let layout = Arc::new(ParamLayout::for_config(cfg));
    let mut params = Params::zeros(Arc::clone(&layout));
    let seed = crate::mix_seed(cfg.seed, INIT_STREAM);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual = 1.0 / (2.0 * cfg.layer_count as f64).sqrt();
    for t in layout.tensors() {
        let data = &mut params.data_mut()[t.range()];
        if t.shape.len() >= 2 {
            let std = if t.name.ends_with("proj.w") { cfg.init_std * residual } else { cfg.init_std };
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            data.iter_mut().for_each(|v| *v = normal.sample(&mut rng) as f32);
        } else if t.name.ends_with(".g") {
            data.iter_mut().for_each(|v| *v = 1.0);
        }
    }
    let state = RngState {
        seed,
        word_pos: rng.get_word_pos().to_string(),
    };
    Ok((params, state))
}

pub fn train(corpus: &Corpus, cfg: &ModelConfig) -> Result<CheckpointStore> {
    train_observed(corpus, cfg, &mut |_, _| {})
}

/// Trains single-threaded and calls `observe(step, loss)` after each update.
pub fn train_observed(
    corpus: &Corpus,
    cfg: &ModelConfig,
    observe: &mut dyn FnMut(u64, f64),
) -> Result<CheckpointStore> {
    cfg.validate()?;
    for doc in corpus.documents() {
        doc.check_vocab(cfg.vocab_size)?;
    }
    let schedule = TrainingSchedule::new(corpus, cfg)?;
    let tpb = schedule.tokens_per_step();
    let stream = schedule.stream(corpus, cfg.total_steps as usize * tpb + 1);
    let (mut params, rng_state) = init_params(cfg)?;
    let layout = Arc::clone(params.layout());
    let slots = Slots::new(&layout, cfg);
    let decay: Vec<bool> = layout
        .tensors()
        .iter()
        .flat_map(|t| std::iter::repeat(t.shape.len() >= 2).take(t.numel()))
        .collect();

    let snapshot = |params: &Params<f32>, step: u64| CheckpointRecord {
        step,
        config: cfg.clone(),
        params: params.clone(),
        rng_state: rng_state.clone(),
        perturbation: None,
    };
    let mut checkpoints = vec![snapshot(&params, 0)];
    let mut losses = Vec::with_capacity(cfg.total_steps as usize);
    let mut m = vec![0.0f32; params.len()];
    let mut v = vec![0.0f32; params.len()];
    let (t, b) = (cfg.context_window, cfg.batch_size);
    let mut inputs = vec![0; tpb];
    let mut targets = vec![0; tpb];

    for step in 0..cfg.total_steps {
        for row in 0..b {
            let start = (step as usize * b + row) * t;
            inputs[row * t..(row + 1) * t].copy_from_slice(&stream[start..start + t]);
            targets[row * t..(row + 1) * t].copy_from_slice(&stream[start + 1..start + t + 1]);
        }
        let batch = Batch {
            inputs: &inputs,
            targets: &targets,
            seqs: b,
            len: t,
        };
        let tf = Transformer {
            cfg,
            slots: &slots,
            p: params.data(),
        };
        let (loss, mut grads) = tf.loss_and_grad(&batch);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if norm > cfg.grad_clip {
            let s = (cfg.grad_clip / norm) as f32;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        adamw(cfg, step, params.data_mut(), &grads, &mut m, &mut v, &decay);
        losses.push(loss);
        observe(step, loss);
        let done = step + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.total_steps {
            checkpoints.push(snapshot(&params, done));
        }
    }
    Ok(CheckpointStore {
        checkpoints,
        schedule,
        losses,
    })
}

fn adamw(cfg: &ModelConfig, step: u64, p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], decay: &[bool]) {
    let lr = cfg.learning_rate(step);
    let n = (step + 1) as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 / (1.0 - b1.powi(n));
    let c2 = 1.0 / (1.0 - b2.powi(n));
    let (b1f, b2f) = (b1 as f32, b2 as f32);
    let (c1f, c2f) = (c1 as f32, c2 as f32);
    let (lrf, eps, wd) = (lr as f32, cfg.adam_eps as f32, (lr * cfg.weight_decay) as f32);
    for i in 0..p.len() {
        m[i] = b1f * m[i] + (1.0 - b1f) * g[i];
        v[i] = b2f * v[i] + (1.0 - b2f) * g[i] * g[i];
        let update = (m[i] * c1f) / ((v[i] * c2f).sqrt() + eps);
        if decay[i] {
            p[i] -= wd * p[i];
        }
        p[i] -= lrf * update;
    }
}
