//! Adam optimisation of an atlas model over a point-cloud sequence.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore};
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::losses::{total_loss_with_gradients, BatchFrame, LossBatch, LossBreakdown, LossWeights};
use crate::model::checkpoint::Checkpoint;
use crate::model::{AtlasModel, ModelConfig};
use crate::sampling::{
    progressive_window, random_rigid, sample_pair, sample_uv_uniform, stream_rng, FrameWindow, PairSamplerConfig,
    ProgressiveSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStrategy {
    /// Pairs at most `delta` frames apart.
    Adjacent,
    /// Any two frames of the window.
    Random,
}

impl std::str::FromStr for PairStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent" => Ok(Self::Adjacent),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown pair strategy `{s}` (adjacent, random)"))),
        }
    }
}

impl fmt::Display for PairStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adjacent => "adjacent",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub batch_pairs: usize,
    pub alpha_mc: f64,
    pub alpha_rg: f64,
    pub delta: usize,
    pub pair_strategy: PairStrategy,
    /// Total UV samples per frame, split evenly across patches.
    pub uv_samples: usize,
    /// Points per frame used by the losses when `subsample` is set.
    pub cloud_samples: usize,
    pub subsample: bool,
    pub init_iters: usize,
    pub end_iters: usize,
    pub seed: u64,
    pub rigid_loss: bool,
    pub progressive: bool,
    pub log_every: usize,
    /// Iterations between checkpoint events; 0 means only at the end.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn paper() -> Self {
        Self {
            iterations: 200_000,
            lr: 1e-3,
            batch_pairs: 4,
            alpha_mc: 0.1,
            alpha_rg: 0.1,
            delta: 1,
            pair_strategy: PairStrategy::Adjacent,
            uv_samples: 2500,
            cloud_samples: 2500,
            subsample: false,
            init_iters: 30_000,
            end_iters: 150_000,
            seed: 0,
            rigid_loss: true,
            progressive: true,
            log_every: 100,
            checkpoint_every: 10_000,
            model: ModelConfig::paper(),
        }
    }

    /// Scaled-down schedule and network for a single CPU core; the window
    /// schedule keeps the full-scale 15% / 75% split.
    pub fn desk() -> Self {
        Self {
            iterations: 1500,
            uv_samples: 200,
            cloud_samples: 200,
            subsample: true,
            init_iters: 225,
            end_iters: 1125,
            checkpoint_every: 500,
            model: ModelConfig::desk(),
            ..Self::paper()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_mc: self.alpha_mc,
            alpha_rg: if self.rigid_loss { self.alpha_rg } else { 0.0 },
        }
    }

    pub fn schedule(&self, frames: usize) -> ProgressiveSchedule {
        ProgressiveSchedule { init_iters: self.init_iters, end_iters: self.end_iters, frames }
    }

    /// Maximum frame gap for a sequence of `frames` frames.
    pub fn effective_delta(&self, frames: usize) -> usize {
        match self.pair_strategy {
            PairStrategy::Adjacent => self.delta,
            PairStrategy::Random => frames.saturating_sub(1).max(1),
        }
    }

    pub fn uv_per_patch(&self) -> usize {
        (self.uv_samples / self.model.patches).max(1)
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("lr", self.lr > 0.0 && self.lr.is_finite()),
            ("batch_pairs", self.batch_pairs > 0),
            ("delta", self.delta > 0),
            ("uv_samples", self.uv_samples > 0),
            ("cloud_samples", self.cloud_samples > 0),
            ("log_every", self.log_every > 0),
            ("alpha_mc", self.alpha_mc >= 0.0 && self.alpha_mc.is_finite()),
            ("alpha_rg", self.alpha_rg >= 0.0 && self.alpha_rg.is_finite()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if frames < 2 {
            return Err(Error::Config(format!("training needs at least 2 frames, got {frames}")));
        }
        PairSamplerConfig { delta: self.effective_delta(frames), frames, batch_pairs: self.batch_pairs }.validate()?;
        if self.progressive && self.iterations > 0 {
            self.schedule(frames).validate(self.iterations)?;
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `base` until 80% of training, `base/10`
/// until 90%, `base/100` after.
pub fn lr_schedule(iter: usize, total: usize, base_lr: f64) -> f64 {
    let (i, t) = (iter as u128 * 10, total as u128);
    if i < 8 * t {
        base_lr
    } else if i < 9 * t {
        base_lr / 10.0
    } else {
        base_lr / 100.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|(_, p)| Array2::zeros(p.value.raw_dim())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update. Gradients are checked before anything
    /// is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch("gradients, moments and parameters differ in length".into()));
        }
        for (id, g) in grads.iter() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { param: params.name(id).to_string() });
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((param, (_, g)), (m, v)) in params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(&mut param.value).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}

/// One logged row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub l_fit: f64,
    pub l_metric: f64,
    pub l_rigid: f64,
    pub total: f64,
    pub lr: f64,
}

impl HistoryRow {
    fn new(iter: usize, b: &LossBreakdown, lr: f64) -> Self {
        Self { iter, l_fit: b.l_fit, l_metric: b.l_metric, l_rigid: b.l_rigid, total: b.total, lr }
    }
}

pub const HISTORY_HEADER: &str = "iter,l_fit,l_metric,l_rigid,total,lr";

/// Replaces `path` atomically, so an interrupted write keeps the old log.
pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
    writeln!(f, "{HISTORY_HEADER}")?;
    for r in rows {
        writeln!(f, "{},{:?},{:?},{:?},{:?},{:?}", r.iter, r.l_fit, r.l_metric, r.l_rigid, r.total, r.lr)?;
    }
    f.flush()?;
    drop(f);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(path, format!("line {}", ln + 1), "malformed history row");
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| bad());
        rows.push(HistoryRow {
            iter: f[0].trim().parse().map_err(|_| bad())?,
            l_fit: num(1)?,
            l_metric: num(2)?,
            l_rigid: num(3)?,
            total: num(4)?,
            lr: num(5)?,
        });
    }
    Ok(rows)
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: AtlasModel,
    pub adam: AdamState,
    /// Next iteration to run.
    pub iteration: usize,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        let model = AtlasModel::new(cfg.model.clone(), cfg.seed)?;
        let adam = AdamState::new(model.params());
        Ok(Self { model, adam, iteration: 0 })
    }

    /// Checkpoint with optimizer moments stored as `adam.m.*` / `adam.v.*`
    /// sections and the run position in the metadata.
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_model(self.model.clone());
        ck.meta.insert("iteration".into(), self.iteration.into());
        ck.meta.insert("adam_step".into(), self.adam.step.into());
        ck.meta.insert("train_config".into(), serde_json::to_value(cfg)?);
        for ((_, p), (m, v)) in self.model.params().iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            ck.extra.push((format!("adam.m.{}", p.name), m.clone()));
            ck.extra.push((format!("adam.v.{}", p.name), v.clone()));
        }
        Ok(ck)
    }

    /// Inverse of [`TrainState::to_checkpoint`]. A checkpoint without
    /// optimizer state starts a fresh optimizer at iteration 0.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut adam = AdamState::new(ck.model.params());
        let iteration = ck.meta.get("iteration").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        adam.step = ck.meta.get("adam_step").and_then(|v| v.as_u64()).unwrap_or(0);
        if adam.step > 0 {
            for (i, (_, p)) in ck.model.params().iter().enumerate() {
                for (prefix, slot) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                    let name = format!("{prefix}{}", p.name);
                    let (_, arr) = ck
                        .extra
                        .iter()
                        .find(|(n, _)| *n == name)
                        .ok_or_else(|| Error::Checkpoint(format!("missing optimizer section `{name}`")))?;
                    if arr.dim() != p.value.dim() {
                        return Err(Error::Checkpoint(format!("optimizer section `{name}` has the wrong shape")));
                    }
                    *slot = arr.clone();
                }
            }
        }
        Ok(Self { model: ck.model, adam, iteration })
    }
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Log(&'a HistoryRow),
    /// Emitted every `checkpoint_every` iterations and once at the end.
    Checkpoint(&'a TrainState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<HistoryRow>,
    /// False when the sink asked to stop early.
    pub completed: bool,
}

impl TrainOutcome {
    pub fn model(&self) -> &AtlasModel {
        &self.state.model
    }
}

/// Frame range used at `iter`.
pub fn window_at(cfg: &TrainConfig, frames: usize, iter: usize) -> FrameWindow {
    if cfg.progressive {
        progressive_window(iter, &cfg.schedule(frames))
    } else {
        FrameWindow::full(frames)
    }
}

/// Draws iteration `iter`'s batch from generator stream `iter + 1` (stream 0
/// initialises the weights). Order: pairs, then per distinct frame (ascending)
/// the point subset and the augmentation, then the UV samples.
pub fn draw_batch(seq: &Sequence, cfg: &TrainConfig, iter: usize) -> Result<LossBatch> {
    let k = seq.len();
    let mut rng = stream_rng(cfg.seed, iter as u64 + 1);
    let window = window_at(cfg, k, iter);
    let pc = PairSamplerConfig { delta: cfg.effective_delta(k), frames: k, batch_pairs: cfg.batch_pairs };
    let raw: Vec<(usize, usize)> = (0..cfg.batch_pairs).map(|_| sample_pair(&pc, window, &mut rng)).collect::<Result<_>>()?;
    let mut distinct: Vec<usize> = raw.iter().flat_map(|&(i, j)| [i, j]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let pos = |f: usize| distinct.binary_search(&f).unwrap();
    let pairs = raw.iter().map(|&(i, j)| (pos(i), pos(j))).collect();
    let frames = distinct
        .iter()
        .map(|&f| {
            let full = &seq.frames[f];
            let cloud = if cfg.subsample && cfg.cloud_samples < full.len() {
                let mut idx = index::sample(&mut rng, full.len(), cfg.cloud_samples).into_vec();
                idx.sort_unstable();
                full.select(&idx)
            } else {
                full.clone()
            };
            let transform = cfg.rigid_loss.then(|| random_rigid(&mut rng).pivoted(cloud.centroid()));
            BatchFrame { frame: f, cloud, transform }
        })
        .collect();
    let uv = sample_uv_uniform(cfg.uv_per_patch(), &mut rng)?;
    Ok(LossBatch { frames, pairs, uv })
}

pub fn train(seq: &Sequence, cfg: &TrainConfig, sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<Control>) -> Result<TrainOutcome> {
    train_from(seq, cfg, None, sink)
}

/// Runs iterations `start.iteration .. cfg.iterations`. A run resumed from
/// a checkpoint reproduces the uninterrupted run bit for bit.
pub fn train_from(
    seq: &Sequence,
    cfg: &TrainConfig,
    start: Option<TrainState>,
    sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<Control>,
) -> Result<TrainOutcome> {
    cfg.validate(seq.len())?;
    seq.validate()?;
    let mut state = match start {
        Some(s) => {
            if s.model.config() != &cfg.model {
                return Err(Error::Config("checkpoint model does not match the configured architecture".into()));
            }
            s
        }
        None => TrainState::fresh(cfg)?,
    };
    let mut history = Vec::new();
    let weights = cfg.weights();
    while state.iteration < cfg.iterations {
        let iter = state.iteration;
        let lr = lr_schedule(iter, cfg.iterations, cfg.lr);
        let step = draw_batch(seq, cfg, iter).and_then(|batch| {
            let (loss, grads) = total_loss_with_gradients(&state.model, &batch, weights)?;
            state.adam.step(state.model.params_mut(), &grads, lr)?;
            Ok(loss)
        });
        let loss = step.map_err(|e| Error::TrainingAborted { iteration: iter, source: Box::new(e) })?;
        state.iteration += 1;
        let mut control = Control::Continue;
        if iter % cfg.log_every == 0 || state.iteration == cfg.iterations {
            let row = HistoryRow::new(iter, &loss, lr);
            history.push(row);
            control = sink(TrainEvent::Log(&row))?;
        }
        let at_interval = cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0;
        if (at_interval && state.iteration < cfg.iterations) || control == Control::Stop {
            if sink(TrainEvent::Checkpoint(&state))? == Control::Stop {
                control = Control::Stop;
            }
        }
        if control == Control::Stop {
            return Ok(TrainOutcome { state, history, completed: false });
        }
    }
    sink(TrainEvent::Checkpoint(&state))?;
    Ok(TrainOutcome { state, history, completed: true })
}

/// Sink that ignores every event.
pub fn quiet(_: TrainEvent<'_>) -> Result<Control> {
    Ok(Control::Continue)
}
