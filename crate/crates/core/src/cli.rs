//! Batch command-line front end: `generate`, `train`, `eval` and `grid`.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Data goes to standard output or files, logs to standard error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::corpus::for_each_sample;
use crate::data::{
    evaluation_set, extract_samples, generate_scene, prepare, CorpusWriter, ExtractConfig, GeneratorConfig, HorizonConfig, Maneuver, Sample,
    SceneIndex,
};
use crate::error::{Error, Result};
use crate::eval::{run_grid_with, GridConfig, MetricsReport, CSV_HEADER};
use crate::hmm::BaumWelchConfig;
use crate::models::{ArchConfig, ModelKind, TrainingConfig};
use crate::pipeline::{train_kind, ModelSettings, TrainingSummary};
use crate::seed;

/// Number of scenes `generate` simulates unless configured otherwise.
pub const DEFAULT_SCENES: usize = 1;

/// Sampling density `generate` uses unless configured otherwise.
pub const DEFAULT_EXTRACT: ExtractConfig = ExtractConfig { stride: 2, none_stride: 40 };

#[derive(Debug, Parser)]
#[command(name = "lanepred", version, about = "Lane-change prediction: data generation, training, evaluation and the experiment grid")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate traffic and write a labeled sample corpus.
    Generate(GenerateArgs),
    /// Train one model on one horizon setting and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the evaluation split of its horizon setting.
    Eval(EvalArgs),
    /// Train and score every model on every horizon setting.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML settings file; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HorizonArgs {
    /// History length in seconds.
    #[arg(long = "history", value_name = "SECONDS")]
    pub history_seconds: Option<f64>,
    /// Prediction offset in seconds.
    #[arg(long = "future", value_name = "SECONDS")]
    pub future_seconds: Option<f64>,
    /// Accept horizons outside {1,3,5} x {1,2,3}.
    #[arg(long)]
    pub allow_custom_horizon: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Dropout keep probability.
    #[arg(long)]
    pub keep_probability: Option<f64>,
    /// Disable layer normalization.
    #[arg(long)]
    pub no_layer_norm: bool,
    /// Stop after this many epochs without a validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Comma-separated HMM state counts to search.
    #[arg(long, value_delimiter = ',', value_name = "N,...")]
    pub hmm_states: Option<Vec<usize>>,
    /// Maximum Baum-Welch iterations.
    #[arg(long)]
    pub hmm_max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Corpus file to write.
    #[arg(long, short = 'o', value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Number of independent scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub lanes: Option<usize>,
    #[arg(long)]
    pub vehicles: Option<usize>,
    /// Simulated seconds per scene.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Lane changes per vehicle per minute.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Candidate prediction times every this many steps.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Keep every this many "none" candidates.
    #[arg(long)]
    pub none_stride: Option<usize>,
    /// Horizon setting as T_H:T_F (repeatable); default is all nine.
    #[arg(long = "horizon", value_name = "T_H:T_F", value_parser = parse_horizon_pair)]
    pub horizons: Vec<(f64, f64)>,
    /// Accept horizons outside {1,3,5} x {1,2,3}.
    #[arg(long)]
    pub allow_custom_horizon: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// hmm, single_lstm, single_factor_srnn or lane_srnn.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Checkpoint file to write.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Must match the checkpoint's horizon when given.
    #[command(flatten)]
    pub horizon: HorizonArgs,
    /// Also write the metrics (with header) to this file.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Report file; standard output when absent.
    #[arg(long, short = 'o', value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Worker threads; 0 means one per available processor.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Model to include (repeatable); default is all four.
    #[arg(long = "model")]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub training: TrainingArgs,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub models: Option<Vec<ModelKind>>,
    pub history_seconds: Option<f64>,
    pub future_seconds: Option<f64>,
    /// `[t_h, t_f]` pairs for `generate`.
    pub horizons: Option<Vec<[f64; 2]>>,
    pub allow_custom_horizon: Option<bool>,
    pub scenes: Option<usize>,
    pub workers: Option<usize>,
    pub generator: Option<GeneratorConfig>,
    pub extract: Option<ExtractConfig>,
    pub arch: Option<ArchConfig>,
    pub training: Option<TrainingConfig>,
    pub baum_welch: Option<BaumWelchConfig>,
    pub hmm_state_candidates: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn from_common(common: &CommonArgs) -> Result<Self> {
        match &common.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn model_settings(&self, flags: &TrainingArgs) -> ModelSettings {
        let mut s = ModelSettings::default();
        if let Some(a) = self.arch {
            s.arch = a;
        }
        if let Some(t) = &self.training {
            s.training = t.clone();
        }
        if let Some(b) = self.baum_welch {
            s.baum_welch = b;
        }
        if let Some(c) = &self.hmm_state_candidates {
            s.hmm_state_candidates = c.clone();
        }
        let t = &mut s.training;
        set(&mut t.epochs, flags.epochs);
        set(&mut t.batch_size, flags.batch_size);
        set(&mut t.learning_rate, flags.learning_rate);
        set(&mut t.keep_probability, flags.keep_probability);
        if flags.patience.is_some() {
            t.patience = flags.patience;
        }
        set(&mut s.arch.hidden_size, flags.hidden_size);
        if flags.no_layer_norm {
            s.arch.layer_norm = false;
        }
        set(&mut s.hmm_state_candidates, flags.hmm_states.clone());
        set(&mut s.baum_welch.max_iters, flags.hmm_max_iters);
        s
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn required<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing {what} (flag or config key)")))
}

fn parse_horizon_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (h, f) = s.split_once(':').ok_or_else(|| format!("expected T_H:T_F, got '{s}'"))?;
    let h = h.trim().parse::<f64>().map_err(|e| format!("history '{h}': {e}"))?;
    let f = f.trim().parse::<f64>().map_err(|e| format!("future '{f}': {e}"))?;
    Ok((h, f))
}

fn make_horizon(history: f64, future: f64, allow_custom: bool) -> Result<HorizonConfig> {
    if allow_custom {
        HorizonConfig::custom(history, future)
    } else {
        HorizonConfig::new(history, future)
    }
}

fn requested_horizon(flags: &HorizonArgs, cfg: &RunConfig) -> Result<Option<HorizonConfig>> {
    let h = flags.history_seconds.or(cfg.history_seconds);
    let f = flags.future_seconds.or(cfg.future_seconds);
    let allow = flags.allow_custom_horizon || cfg.allow_custom_horizon.unwrap_or(false);
    match (h, f) {
        (Some(h), Some(f)) => make_horizon(h, f, allow).map(Some),
        (None, None) => Ok(None),
        _ => Err(Error::Config("history and future must be given together".into())),
    }
}

/// Samples of one horizon setting read from a corpus file.
pub fn load_setting(path: &Path, horizon: &HorizonConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for_each_sample(path, |s| {
        if s.horizon == *horizon {
            out.push(s);
        }
        Ok(())
    })?;
    if out.is_empty() {
        return Err(Error::MissingSetting {
            history_seconds: horizon.history_seconds,
            future_seconds: horizon.future_seconds,
        });
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Runs a parsed command, writing its data output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Grid(a) => cmd_grid(&a, out),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(cli, out)
}

/// Simulates the configured scenes and streams samples for every requested
/// horizon to the corpus. Prints `history,future,left,right,none` counts.
pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::from_common(&args.common)?;
    let path = required(args.output.clone().or(cfg.output.clone()).or(cfg.corpus.clone()), "output path")?;
    let mut gen = cfg.generator.clone().unwrap_or_default();
    set(&mut gen.seed, args.common.seed.or(cfg.seed));
    set(&mut gen.num_lanes, args.lanes);
    set(&mut gen.num_vehicles, args.vehicles);
    set(&mut gen.duration_seconds, args.duration);
    set(&mut gen.lane_change_rate_per_vehicle_per_minute, args.rate);
    let mut extract = cfg.extract.unwrap_or(DEFAULT_EXTRACT);
    set(&mut extract.stride, args.stride);
    set(&mut extract.none_stride, args.none_stride);
    let scenes = args.scenes.or(cfg.scenes).unwrap_or(DEFAULT_SCENES);
    let allow = args.allow_custom_horizon || cfg.allow_custom_horizon.unwrap_or(false);
    let pairs: Vec<(f64, f64)> = if !args.horizons.is_empty() {
        args.horizons.clone()
    } else if let Some(h) = &cfg.horizons {
        h.iter().map(|p| (p[0], p[1])).collect()
    } else {
        HorizonConfig::grid().iter().map(|h| (h.history_seconds, h.future_seconds)).collect()
    };
    let horizons = pairs.iter().map(|&(h, f)| make_horizon(h, f, allow)).collect::<Result<Vec<_>>>()?;
    if scenes == 0 {
        return Err(Error::InvalidArgument("scene count must be positive".into()));
    }

    let mut writer = CorpusWriter::create(&path)?;
    let mut counts = vec![[0usize; Maneuver::COUNT]; horizons.len()];
    for k in 0..scenes {
        let scene_cfg = GeneratorConfig {
            seed: seed::derive_index(gen.seed, k as u64),
            ..gen.clone()
        };
        let mut scene = generate_scene(&scene_cfg)?;
        for t in scene.tracks.iter_mut() {
            t.id += (k as u64) << 32;
        }
        let index = SceneIndex::build(&scene)?;
        for (h, c) in horizons.iter().zip(counts.iter_mut()) {
            for s in extract_samples(&scene, &index, h, &extract)? {
                c[s.label.index()] += 1;
                writer.write(&s)?;
            }
        }
        log::info!("scene {k}: {} vehicles, {} lane changes", scene.tracks.len(), scene.lane_changes.len());
    }
    let total = writer.finish()?;
    log::info!("wrote {total} samples to {}", path.display());

    let mut text = String::from("history_seconds,future_seconds,left,right,none\n");
    for (h, c) in horizons.iter().zip(&counts) {
        text.push_str(&format!("{},{},{},{},{}\n", h.history_seconds, h.future_seconds, c[0], c[1], c[2]));
    }
    emit(out, &text)
}

/// Split, balance, standardize and train one model; writes the checkpoint
/// and prints one `epoch,loss,validation_balanced_accuracy` line per epoch
/// (for `hmm`, one `num_states,validation_macro_f1` line per candidate).
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::from_common(&args.common)?;
    let corpus = required(args.corpus.clone().or(cfg.corpus.clone()), "corpus path")?;
    let ckpt_path = required(args.checkpoint.clone().or(cfg.checkpoint.clone()), "checkpoint path")?;
    let kind = required(args.model.or(cfg.model), "model kind")?;
    let horizon = required(requested_horizon(&args.horizon, &cfg)?, "horizon")?;
    let master = args.common.seed.or(cfg.seed).unwrap_or(0);
    let settings = cfg.model_settings(&args.training);

    let samples = load_setting(&corpus, &horizon)?;
    let data = prepare(&samples, master)?;
    drop(samples);
    log::info!("{kind} {horizon}: {} training samples, {} evaluation samples", data.train.len(), data.eval.len());
    let (model, summary) = train_kind(kind, &data.train, &settings, seed::derive(master, "model"))?;
    Checkpoint::new(horizon, master, settings, data.standardizer, model).save(&ckpt_path)?;
    log::info!("wrote checkpoint {}", ckpt_path.display());

    let text = match summary {
        TrainingSummary::Neural(report) => {
            let mut t = String::from("epoch,loss,validation_balanced_accuracy\n");
            for e in &report.epochs {
                t.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.loss, e.validation_balanced_accuracy));
            }
            t
        }
        TrainingSummary::Hmm(sel) => {
            let mut t = String::from("num_states,validation_macro_f1\n");
            for (n, f1) in &sel.scores {
                t.push_str(&format!("{n},{f1:.6}\n"));
            }
            t
        }
    };
    emit(out, &text)
}

/// Scores a checkpoint on the unbalanced evaluation split of its horizon
/// and prints the metrics header and row.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::from_common(&args.common)?;
    let corpus = required(args.corpus.clone().or(cfg.corpus.clone()), "corpus path")?;
    let ckpt_path = required(args.checkpoint.clone().or(cfg.checkpoint.clone()), "checkpoint path")?;
    let ck = Checkpoint::load(&ckpt_path)?;
    if let Some(req) = requested_horizon(&args.horizon, &cfg)? {
        if req != ck.horizon {
            return Err(Error::InvalidArgument(format!("requested horizon {req} does not match checkpoint horizon {}", ck.horizon)));
        }
    }
    let samples = load_setting(&corpus, &ck.horizon)?;
    let eval = evaluation_set(&samples, ck.split_seed, &ck.standardizer)?;
    drop(samples);
    let counts = ck.model.evaluate(&eval)?;
    let row = MetricsReport::from_counts(ck.kind(), &ck.horizon, &counts);
    let text = format!("{CSV_HEADER}\n{}\n", row.csv_row());
    if let Some(p) = args.report.clone().or(cfg.report.clone()) {
        write_file(&p, &text)?;
    }
    emit(out, &text)
}

/// Runs the full grid and writes the report (36 rows plus one average row
/// per model).
pub fn cmd_grid(args: &GridArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::from_common(&args.common)?;
    let corpus = required(args.corpus.clone().or(cfg.corpus.clone()), "corpus path")?;
    let models = if !args.models.is_empty() {
        args.models.clone()
    } else {
        cfg.models.clone().unwrap_or_else(|| ModelKind::ALL.to_vec())
    };
    let grid = GridConfig {
        models,
        horizons: HorizonConfig::grid(),
        settings: cfg.model_settings(&args.training),
        seed: args.common.seed.or(cfg.seed).unwrap_or(0),
        workers: args.workers.or(cfg.workers).unwrap_or(0),
    };
    let report = run_grid_with(|h| load_setting(&corpus, h), &grid)?;
    let text = report.to_csv();
    match args.output.clone().or(cfg.output.clone()) {
        Some(p) => {
            write_file(&p, &text)?;
            log::info!("wrote grid report {}", p.display());
            Ok(())
        }
        None => emit(out, &text),
    }
}
