//! Command-line interface.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lanekit_core::metrics::{evaluate, Averaging, EvalConfig, Matching};
use lanekit_core::model::{Model, ModelConfig};
use lanekit_core::synth::{generate, SynthSpec};
use lanekit_core::train::{fit, predict_samples, EpochRecord, FitObserver, StepRecord, TrainState};
use lanekit_core::{ClassScheme, LaneRecord};

use crate::annotation::{convert, read_annotation, ConvertStats, HSamples};
use crate::bench::{self, BenchConfig, Mode};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{default_root, load_samples, read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::ppm::{read_ppm, write_ppm};
use crate::report::Report;

#[derive(Debug, Parser)]
#[command(name = "lanekit", version, about = "Row-anchor lane detection with lane-type classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert annotation documents to a TuSimple-style dataset.
    Convert(ConvertArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Predict lanes for images.
    Infer(InferArgs),
    /// Compare full-precision and mixed-precision training steps.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Two,
    Six,
    Seven,
}

impl From<SchemeArg> for ClassScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Two => ClassScheme::Two,
            SchemeArg::Six => ClassScheme::Six,
            SchemeArg::Seven => ClassScheme::Seven,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchArg {
    Greedy,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Annotation JSON files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    /// Anchor rows as start:end:step (end inclusive).
    #[arg(long, default_value = "160:710:10")]
    pub h_samples: HSamples,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total number of images.
    #[arg(long)]
    pub count: Option<usize>,
    /// How many of the last images go to `val.json`.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the optimizer seed, which also seeds initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mp: Option<Switch>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs; continue later with `--resume`.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Run configuration whose evaluation settings are the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Absolute pixel threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Image width the default threshold scales to.
    #[arg(long)]
    pub image_width: Option<u32>,
    #[arg(long = "match", value_enum)]
    pub matching: Option<MatchArg>,
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
    /// Directory for `report.json` and `report.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image files; names are written as given.
    pub images: Vec<PathBuf>,
    /// Dataset whose `raw_file` entries name the images.
    #[arg(long, conflicts_with = "images")]
    pub dataset: Option<PathBuf>,
    /// Root of the dataset's image paths; defaults to its directory.
    #[arg(long, requires = "dataset")]
    pub image_root: Option<PathBuf>,
    /// Run configuration the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run only one mode; both run by default.
    #[arg(long, value_enum)]
    pub mp: Option<Switch>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Directory for `bench.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => cmd_convert(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    let mut records = Vec::with_capacity(a.inputs.len());
    let mut total = ConvertStats::default();
    for p in &a.inputs {
        let doc = read_annotation(p)?;
        let (rec, stats) = convert(&doc, &a.h_samples);
        total.converted += stats.converted;
        total.dropped += stats.dropped;
        records.push(rec);
    }
    write_dataset(&records, &a.out)?;
    println!(
        "{} images: {} lanes converted, {} lanes dropped (fewer than 2 points)",
        records.len(),
        total.converted,
        total.dropped
    );
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(c) = a.count {
        spec.count = c;
    }
    if a.val > spec.count {
        return Err(Error::Usage(format!("--val {} exceeds the image count {}", a.val, spec.count)));
    }
    let data = generate(&spec)?;
    let mut records = Vec::with_capacity(data.len());
    for (img, rec) in &data {
        write_ppm(img, &a.out.join(&rec.raw_file))?;
        records.push(rec.clone());
    }
    let split = spec.count - a.val;
    write_dataset(&records[..split], &a.out.join("train.json"))?;
    if a.val > 0 {
        write_dataset(&records[split..], &a.out.join("val.json"))?;
    }
    let mut echo = serde_json::to_string_pretty(&spec).expect("spec serializes");
    echo.push('\n');
    write_file(&a.out.join("synth.json"), &echo)?;
    println!("{} images written to {} ({} train, {} val)", spec.count, a.out.display(), split, a.val);
    Ok(())
}

struct TrainLog {
    out: PathBuf,
    metrics: BufWriter<File>,
    cfg: RunConfig,
    epochs_left: Option<usize>,
}

impl FitObserver<Error> for TrainLog {
    fn on_step(&mut self, s: &StepRecord) -> Result<()> {
        let p = self.out.join("metrics.jsonl");
        let line = serde_json::to_string(s).expect("step serializes");
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(&p, e))
    }

    fn on_epoch(&mut self, e: &EpochRecord, model: &Model, state: &TrainState, is_best: bool) -> Result<()> {
        let p = self.out.join("metrics.jsonl");
        self.metrics.flush().map_err(|e| Error::io(&p, e))?;
        let fmt = |v: Option<f64>| v.map_or("no data".to_string(), |v| format!("{v:.4}"));
        log::info!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  skipped {}  val detection {}  val classification {}",
            e.epoch,
            e.lr,
            e.mean.total,
            e.skipped,
            fmt(e.val_detection),
            fmt(e.val_classification)
        );
        let train = Some((state, &self.cfg.train));
        checkpoint::save(&self.out.join("last.ckpt"), model, train)?;
        if is_best {
            checkpoint::save(&self.out.join("best.ckpt"), model, train)?;
        }
        let line = serde_json::to_string(e).expect("epoch serializes");
        let hp = self.out.join("epochs.jsonl");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&hp)
            .map_err(|e| Error::io(&hp, e))?;
        if let Some(n) = &mut self.epochs_left {
            *n = n.saturating_sub(1);
        }
        writeln!(f, "{line}").map_err(|e| Error::io(&hp, e))
    }

    fn stop(&self) -> bool {
        self.epochs_left == Some(0)
    }
}

/// Load the train and validation samples named by `cfg`.
pub fn load_run_data(
    cfg: &RunConfig,
) -> Result<(Vec<lanekit_core::train::Sample>, Vec<lanekit_core::train::Sample>)> {
    let load = |p: &Path| -> Result<_> {
        let root = cfg.data.image_root.clone().unwrap_or_else(|| default_root(p).to_path_buf());
        let records = read_dataset(p)?;
        for r in &records {
            r.validate(Some(cfg.model.max_lanes), Some(cfg.model.grid.image_width))
                .map_err(|e| Error::format(p, format!("{}: {e}", r.raw_file)))?;
        }
        load_samples(records, &root)
    };
    let train = load(&cfg.data.train)?;
    let val = match &cfg.data.val {
        Some(v) => load(v)?,
        None => Vec::new(),
    };
    Ok((train, val))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
        cfg.resolve_paths(Path::new(""));
    }
    if let Some(s) = a.seed {
        cfg.train.optim.seed = s;
    }
    if let Some(m) = a.mp {
        cfg.train.mp.enabled = m == Switch::On;
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    cfg.echo(&out)?;
    let (train, val) = load_run_data(&cfg)?;
    let (mut model, mut state) = match &a.resume {
        Some(p) => {
            let ck = checkpoint::load(p, Some(&cfg.model))?;
            let (state, _) = ck
                .train
                .ok_or_else(|| Error::format(p, "checkpoint carries no trainer state"))?;
            log::info!("resuming at epoch {} step {}", state.epoch, state.step);
            (ck.model, state)
        }
        None => {
            let model = Model::build(cfg.model.clone(), cfg.train.optim.seed)?;
            let state = TrainState::new(model.params(), &cfg.train);
            (model, state)
        }
    };
    log::info!(
        "{} parameters, {} train / {} val images, mixed precision {}",
        model.param_count(),
        train.len(),
        val.len(),
        if cfg.train.mp.enabled { "on" } else { "off" }
    );
    let mp = out.join("metrics.jsonl");
    let file = fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&mp)
        .map_err(|e| Error::io(&mp, e))?;
    if a.resume.is_none() {
        let _ = fs::remove_file(out.join("epochs.jsonl"));
    }
    let mut log = TrainLog {
        out: out.clone(),
        metrics: BufWriter::new(file),
        cfg: cfg.clone(),
        epochs_left: a.stop_after,
    };
    let history = fit(&mut model, &mut state, &train, &val, &cfg.train, &mut log)?;
    if history.epochs.is_empty() {
        // nothing left to run; still leave a checkpoint behind
        checkpoint::save(&out.join("last.ckpt"), &model, Some((&state, &cfg.train)))?;
    }
    if let Some(e) = history.epochs.last() {
        println!(
            "trained {} epochs ({} steps); final loss {:.4}; checkpoints in {}",
            history.epochs.len(),
            history.steps.len(),
            e.mean.total,
            out.display()
        );
    }
    Ok(())
}

fn eval_config(a: &EvalArgs) -> Result<EvalConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?.train.eval,
        None => EvalConfig::default(),
    };
    if let Some(s) = a.scheme {
        cfg.scheme = s.into();
    }
    if let Some(t) = a.threshold {
        cfg.pixel_threshold = Some(t);
    }
    if let Some(w) = a.image_width {
        cfg.image_width = w;
    }
    if let Some(m) = a.matching {
        cfg.matching = match m {
            MatchArg::Greedy => Matching::Greedy,
            MatchArg::Exhaustive => Matching::Exhaustive,
        };
    }
    if let Some(v) = a.averaging {
        cfg.averaging = match v {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::Macro,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = eval_config(a)?;
    let pred = read_dataset(&a.pred)?;
    let gt = read_dataset(&a.gt)?;
    let report = Report::new(&evaluate(&pred, &gt, &cfg)?, &cfg);
    if let Some(dir) = &a.out {
        write_file(&dir.join("report.json"), &report.to_json())?;
        write_file(&dir.join("report.txt"), &report.to_text())?;
    }
    match a.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => print!("{}", report.to_json()),
    }
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let expected: Option<ModelConfig> = match &a.config {
        Some(p) => Some(RunConfig::load(p)?.model),
        None => None,
    };
    let model = checkpoint::load(&a.checkpoint, expected.as_ref())?.model;
    let (names, images) = match &a.dataset {
        Some(d) => {
            let root = a.image_root.clone().unwrap_or_else(|| default_root(d).to_path_buf());
            let recs: Vec<LaneRecord> = read_dataset(d)?;
            let mut images = Vec::with_capacity(recs.len());
            for r in &recs {
                images.push(read_ppm(&root.join(&r.raw_file))?);
            }
            (recs.into_iter().map(|r| r.raw_file).collect::<Vec<_>>(), images)
        }
        None => {
            if a.images.is_empty() {
                return Err(Error::Usage("no images given; pass image paths or --dataset".into()));
            }
            let images = a.images.iter().map(|p| read_ppm(p)).collect::<Result<Vec<_>>>()?;
            (a.images.iter().map(|p| p.to_string_lossy().into_owned()).collect(), images)
        }
    };
    let refs: Vec<_> = images.iter().collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let preds = predict_samples(&model, &refs, &name_refs, a.batch_size)?;
    write_dataset(&preds, &a.out)?;
    let lanes: usize = preds.iter().map(|p| p.lanes.len()).sum();
    println!("{} images, {} lanes written to {}", preds.len(), lanes, a.out.display());
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.steps = n;
    }
    let modes: &[Mode] = match a.mp {
        None => &[Mode::Fp32, Mode::Mp],
        Some(Switch::On) => &[Mode::Mp],
        Some(Switch::Off) => &[Mode::Fp32],
    };
    let report = bench::run(&cfg, modes)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(dir) = &a.out {
        write_file(&dir.join("bench.json"), &json)?;
    }
    match a.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => print!("{json}"),
    }
    Ok(())
}
