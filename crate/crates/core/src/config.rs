//! Plain-text run configuration: `key = value` lines layered over a preset.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Config(format!("unknown preset `{s}` (desk, paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Rescale every sequence so frame 0 fits the unit cube.
    pub normalize: bool,
}

pub const KEYS: &[&str] = &[
    "preset",
    "iterations",
    "lr",
    "batch_pairs",
    "alpha_mc",
    "alpha_rg",
    "delta",
    "pair_strategy",
    "uv_samples",
    "cloud_samples",
    "subsample",
    "init_iters",
    "end_iters",
    "seed",
    "rigid_loss",
    "progressive",
    "log_every",
    "checkpoint_every",
    "patches",
    "latent_dim",
    "encoder_widths",
    "decoder_widths",
    "eval_pairs",
    "eval_points",
    "area_samples",
    "eval_seed",
    "normalize",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|w| parse(key, w.trim())).collect()
}

fn join(ws: &[usize]) -> String {
    ws.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let (train, eval) = match preset {
            Preset::Desk => (TrainConfig::desk(), EvalConfig::desk()),
            Preset::Paper => (TrainConfig::paper(), EvalConfig::paper()),
        };
        Self { preset, train, eval, normalize: true }
    }

    /// Sets one key. `preset` replaces every value with the preset's.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "preset" => *self = Self::from_preset(parse(key, value)?),
            "iterations" => t.iterations = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch_pairs" => t.batch_pairs = parse(key, value)?,
            "alpha_mc" => t.alpha_mc = parse(key, value)?,
            "alpha_rg" => t.alpha_rg = parse(key, value)?,
            "delta" => t.delta = parse(key, value)?,
            "pair_strategy" => t.pair_strategy = value.parse()?,
            "uv_samples" => t.uv_samples = parse(key, value)?,
            "cloud_samples" => t.cloud_samples = parse(key, value)?,
            "subsample" => t.subsample = parse(key, value)?,
            "init_iters" => t.init_iters = parse(key, value)?,
            "end_iters" => t.end_iters = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "rigid_loss" => t.rigid_loss = parse(key, value)?,
            "progressive" => t.progressive = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "patches" => t.model.patches = parse(key, value)?,
            "latent_dim" => t.model.latent_dim = parse(key, value)?,
            "encoder_widths" => t.model.encoder_widths = parse_widths(key, value)?,
            "decoder_widths" => t.model.decoder_widths = parse_widths(key, value)?,
            "eval_pairs" => self.eval.pairs = parse(key, value)?,
            "eval_points" => self.eval.n_eval = parse(key, value)?,
            "area_samples" => self.eval.area_samples = parse(key, value)?,
            "eval_seed" => self.eval.seed = parse(key, value)?,
            "normalize" => self.normalize = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        Ok(match key {
            "preset" => self.preset.to_string(),
            "iterations" => t.iterations.to_string(),
            "lr" => format!("{:?}", t.lr),
            "batch_pairs" => t.batch_pairs.to_string(),
            "alpha_mc" => format!("{:?}", t.alpha_mc),
            "alpha_rg" => format!("{:?}", t.alpha_rg),
            "delta" => t.delta.to_string(),
            "pair_strategy" => t.pair_strategy.to_string(),
            "uv_samples" => t.uv_samples.to_string(),
            "cloud_samples" => t.cloud_samples.to_string(),
            "subsample" => t.subsample.to_string(),
            "init_iters" => t.init_iters.to_string(),
            "end_iters" => t.end_iters.to_string(),
            "seed" => t.seed.to_string(),
            "rigid_loss" => t.rigid_loss.to_string(),
            "progressive" => t.progressive.to_string(),
            "log_every" => t.log_every.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "patches" => t.model.patches.to_string(),
            "latent_dim" => t.model.latent_dim.to_string(),
            "encoder_widths" => join(&t.model.encoder_widths),
            "decoder_widths" => join(&t.model.decoder_widths),
            "eval_pairs" => self.eval.pairs.to_string(),
            "eval_points" => self.eval.n_eval.to_string(),
            "area_samples" => self.eval.area_samples.to_string(),
            "eval_seed" => self.eval.seed.to_string(),
            "normalize" => self.normalize.to_string(),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        })
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            writeln!(s, "{key} = {}", self.get(key).expect("listed key")).unwrap();
        }
        s
    }

    /// Applies the preset (an explicit one wins over one in the file),
    /// then file entries, then overrides, each in order.
    pub fn layered(preset: Option<Preset>, file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self> {
        let from_file = file.iter().rev().find(|(k, _)| k == "preset").map(|(_, v)| v.parse()).transpose()?;
        let mut cfg = Self::from_preset(preset.or(from_file).unwrap_or(Preset::Desk));
        for (k, v) in file.iter().chain(overrides).filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.resolved())?;
        Ok(())
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped. Keys are
/// checked against [`KEYS`].
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown config key `{k}`", ln + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}
