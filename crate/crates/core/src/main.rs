use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcatlas::config::{read_config, Preset, RunConfig};
use mcatlas::data::{add_noise, load_sequence, normalize_unit_cube, save_sequence, synth_sequence, Sequence, SynthKind, SynthParams};
use mcatlas::eval::{correspond, evaluate, patch_areas, AtlasImage, CorrespondenceSet, EvalReport};
use mcatlas::export::{export_correspondence_colors, export_frame, DEFAULT_GRID};
use mcatlas::model::checkpoint::Checkpoint;
use mcatlas::model::{AtlasModel, FrameAtlas};
use mcatlas::sampling::stream_rng;
use mcatlas::trainer::{read_history_csv, train_from, write_history_csv, Control, HistoryRow, PairStrategy, TrainConfig, TrainEvent, TrainState};
use mcatlas::{Error, Result};

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const LOSS_FILE: &str = "loss.csv";
const RESOLVED_FILE: &str = "config.resolved";

#[derive(Parser)]
#[command(name = "mcatlas", version, about = "Temporally consistent multi-patch atlases for deforming point-cloud sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic sequence.
    Synth(SynthArgs),
    /// Train an atlas model on a sequence.
    Train(TrainArgs),
    /// Evaluate correspondences of a trained model on a labeled sequence.
    Eval(EvalArgs),
    /// Write textured patch meshes and correspondence colormaps.
    Export(ExportArgs),
    /// Train and evaluate for each time window and keep the best.
    TuneDelta(TuneArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "sheet")]
    kind: SynthKind,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Final-frame curvature (defaults per kind).
    #[arg(long)]
    curvature: Option<f64>,
    #[arg(long, default_value_t = 180.0)]
    rotation_deg: f64,
    /// Gaussian noise std added to every point.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Options that map onto config keys.
#[derive(Args)]
struct ConfigFlags {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    alpha_mc: Option<f64>,
    #[arg(long)]
    alpha_rg: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_rigid: bool,
    #[arg(long)]
    no_progressive: bool,
    #[arg(long)]
    pair_strategy: Option<PairStrategy>,
    /// Keep the input coordinates instead of fitting frame 0 to the unit cube.
    #[arg(long)]
    no_normalize: bool,
    /// Any config key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("alpha_mc", self.alpha_mc.map(|v| v.to_string()));
        push("alpha_rg", self.alpha_rg.map(|v| v.to_string()));
        push("delta", self.delta.map(|v| v.to_string()));
        push("patches", self.patches.map(|v| v.to_string()));
        push("iterations", self.iterations.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("pair_strategy", self.pair_strategy.map(|v| v.to_string()));
        push("rigid_loss", self.no_rigid.then(|| "false".into()));
        push("progressive", self.no_progressive.then(|| "false".into()));
        push("normalize", self.no_normalize.then(|| "false".into()));
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{s}`")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(o)
    }

    fn file(&self) -> Result<Vec<(String, String)>> {
        self.config.as_deref().map(read_config).transpose().map(Option::unwrap_or_default)
    }

    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::layered(self.preset, &self.file()?, &self.overrides()?)
    }

    /// Layers the file and flags over an existing configuration.
    fn apply_to(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(p) = self.preset {
            cfg = RunConfig::from_preset(p);
        }
        for (k, v) in self.file()?.iter().chain(&self.overrides()?) {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Sequence directory.
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of random frame pairs.
    #[arg(long)]
    pairs: Option<usize>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct ExportArgs {
    checkpoint: PathBuf,
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frame indices, comma separated (all frames by default).
    #[arg(long, value_delimiter = ',')]
    frames: Vec<usize>,
    /// Grid resolution per patch.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct TuneArgs {
    /// Validation sequence directory (must be labeled).
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Candidate windows; values not below the frame count are skipped.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5, 6])]
    deltas: Vec<usize>,
    #[command(flatten)]
    flags: ConfigFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::TuneDelta(a) => cmd_tune_delta(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SynthParams { max_curvature: a.curvature, rotation_deg: a.rotation_deg, ..SynthParams::new(a.kind, a.frames, a.points, a.seed) };
    let mut seq = synth_sequence(&params)?;
    if a.noise != 0.0 {
        seq = add_noise(&seq, a.noise, &mut stream_rng(a.seed, 1))?;
        if let Some(obj) = seq.source.as_object_mut() {
            obj.insert("noise_sigma".into(), a.noise.into());
        }
    }
    save_sequence(&a.out, &seq)?;
    println!("wrote {} frames of {} points to {}", seq.len(), a.points, a.out.display());
    Ok(())
}

fn prepare(dir: &Path, normalize: bool) -> Result<Sequence> {
    let seq = load_sequence(dir)?;
    Ok(if normalize { normalize_unit_cube(&seq)?.0 } else { seq })
}

fn run_training(seq: &Sequence, cfg: &RunConfig, out: &Path, start: Option<TrainState>, prior: Vec<HistoryRow>) -> Result<TrainState> {
    std::fs::create_dir_all(out)?;
    cfg.write_resolved(&out.join(RESOLVED_FILE))?;
    let tc = &cfg.train;
    let mut rows = prior;
    let ck_path = out.join(CHECKPOINT_FILE);
    let loss_path = out.join(LOSS_FILE);
    let outcome = train_from(seq, tc, start, &mut |ev| {
        match ev {
            TrainEvent::Log(r) => {
                eprintln!("iter {:>7}  total {:.6}  fit {:.6}  metric {:.6}  rigid {:.6}  lr {:e}", r.iter, r.total, r.l_fit, r.l_metric, r.l_rigid, r.lr);
                rows.push(*r);
            }
            TrainEvent::Checkpoint(s) => {
                // log first: a resume drops rows past the checkpoint it restores
                write_history_csv(&loss_path, &rows)?;
                let mut ck = s.to_checkpoint(tc)?;
                ck.meta.insert("normalize".into(), cfg.normalize.into());
                ck.save(&ck_path)?;
            }
        }
        Ok(Control::Continue)
    })?;
    Ok(outcome.state)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (cfg, start, prior) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let stored: TrainConfig = ck
                .meta
                .get("train_config")
                .cloned()
                .map(serde_json::from_value)
                .transpose()?
                .ok_or_else(|| Error::Checkpoint("checkpoint has no training configuration".into()))?;
            let normalize = ck.meta.get("normalize").and_then(|v| v.as_bool()).unwrap_or(true);
            let base = RunConfig { train: stored, normalize, ..RunConfig::from_preset(Preset::Desk) };
            let cfg = a.flags.apply_to(base)?;
            let state = TrainState::from_checkpoint(ck)?;
            let loss = a.out.join(LOSS_FILE);
            let prior = if loss.exists() {
                read_history_csv(&loss)?.into_iter().filter(|r| r.iter < state.iteration).collect()
            } else {
                Vec::new()
            };
            (cfg, Some(state), prior)
        }
        None => (a.flags.resolve()?, None, Vec::new()),
    };
    let seq = prepare(&a.sequence, cfg.normalize)?;
    cfg.train.validate(seq.len())?;
    let state = run_training(&seq, &cfg, &a.out, start, prior)?;
    println!("trained {} iterations; checkpoint at {}", state.iteration, a.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// Model and run configuration stored with a checkpoint, with file and
/// flag overrides applied.
fn load_run(path: &Path, flags: &ConfigFlags) -> Result<(AtlasModel, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    let mut base = RunConfig::from_preset(flags.preset.unwrap_or(Preset::Desk));
    if let Some(n) = ck.meta.get("normalize").and_then(|v| v.as_bool()) {
        base.normalize = n;
    }
    Ok((ck.model, flags.apply_to(base)?))
}

fn print_report(r: &EvalReport) {
    println!("m_sL2 {}", r.m_sl2().formatted());
    println!("m_r   {}", r.m_rank().formatted());
    println!("m_AUC {}", r.m_auc().formatted());
    let cd = r.cd();
    println!("CD    {:.6}±{:.6}", cd.mean, cd.std);
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (model, mut cfg) = load_run(&a.checkpoint, &a.flags)?;
    if let Some(m) = a.pairs {
        cfg.eval.pairs = m;
    }
    let seq = prepare(&a.sequence, cfg.normalize)?;
    let report = evaluate(&model, &seq, &cfg.eval)?;
    std::fs::create_dir_all(&a.out)?;
    cfg.write_resolved(&a.out.join(RESOLVED_FILE))?;
    report.write_csv(&a.out.join("metrics.csv"))?;
    report.write_summary(&a.out.join("summary.json"))?;
    print_report(&report);
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let (model, cfg) = load_run(&a.checkpoint, &a.flags)?;
    let seq = prepare(&a.sequence, cfg.normalize)?;
    let frames: Vec<usize> = if a.frames.is_empty() { (0..seq.len()).collect() } else { a.frames.clone() };
    if let Some(&bad) = frames.iter().find(|&&k| k >= seq.len()) {
        return Err(Error::InvalidArgument(format!("frame {bad} out of range (sequence has {})", seq.len())));
    }
    std::fs::create_dir_all(&a.out)?;
    cfg.write_resolved(&a.out.join(RESOLVED_FILE))?;
    let maps = frames
        .iter()
        .map(|&k| Ok(FrameAtlas::new(&model, model.encode(&seq.frames[k])?)))
        .collect::<Result<Vec<_>>>()?;
    for (&k, map) in frames.iter().zip(&maps) {
        export_frame(map, a.grid, cfg.eval.area_samples, &a.out.join(format!("frame_{k:03}.obj")))?;
    }
    if seq.labeled {
        for w in frames.iter().zip(&maps).collect::<Vec<_>>().windows(2) {
            let ((&s, src), (&t, dst)) = (w[0], w[1]);
            let image = AtlasImage::build(src, cfg.eval.n_eval, &patch_areas(src, cfg.eval.area_samples)?)?;
            let sources = seq.frames[s].to_vec();
            let predicted = correspond(&image, dst, &seq.frames[t], &sources)?;
            let corr = CorrespondenceSet { sources, predicted, truth: seq.frames[t].to_vec() };
            export_correspondence_colors(&corr, &a.out.join(format!("corr_{s:03}_{t:03}.ply")))?;
        }
    }
    println!("exported {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn cmd_tune_delta(a: TuneArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let seq = prepare(&a.sequence, cfg.normalize)?;
    let mut rows = Vec::new();
    for &delta in a.deltas.iter().filter(|&&d| d >= 1 && d < seq.len()) {
        let mut run = cfg.clone();
        run.train.delta = delta;
        let dir = a.out.join(format!("delta_{delta}"));
        let state = run_training(&seq, &run, &dir, None, Vec::new())?;
        let report = evaluate(&state.model, &seq, &run.eval)?;
        report.write_summary(&dir.join("summary.json"))?;
        println!("delta {delta}: m_sL2 {}", report.m_sl2().formatted());
        rows.push((delta, report.m_sl2().mean, report.m_rank().mean, report.m_auc().mean));
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Config("no admissible delta for this sequence".into()))?;
    let mut csv = String::from("delta,m_sL2,m_r,m_auc\n");
    for (d, s, r, auc) in &rows {
        csv.push_str(&format!("{d},{s},{r},{auc}\n"));
    }
    std::fs::write(a.out.join("delta_sweep.csv"), csv)?;
    let mut chosen = cfg.clone();
    chosen.train.delta = best.0;
    chosen.write_resolved(&a.out.join(RESOLVED_FILE))?;
    println!("selected delta {}", best.0);
    Ok(())
}
