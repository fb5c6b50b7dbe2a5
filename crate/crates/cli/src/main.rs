mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use plugtrack::abg::BlendFactors;
use plugtrack::data::{
    dp_predictions, extract_tracklets, generate_synthetic, parse_mot_file, write_mot_file,
    MotRecord, SequenceDataset, TrackletSample,
};
use plugtrack::metrics::{alpha_rows, evaluate_sequence, predictor_win_counts, EvalReport};
use plugtrack::network::PlugNet;
use plugtrack::nn::checkpoint;
use plugtrack::predictors::{
    MlpPredictor, MlpSample, MotionPredictor, PredictorOptions, PredictorRegistry,
};
use plugtrack::tracking::{run_sequence, MotionMode};
use plugtrack::train::train;
use plugtrack::Error;

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(
    name = "plugtrack",
    version,
    about = "Adaptive Kalman and learned-predictor fusion for multi-object tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// TOML file of dotted config keys
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set mcas.noise_std=0.05
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set seed=N
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut overrides = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args, Debug, Clone)]
struct DpArgs {
    /// Data-driven predictor, by registry name
    #[arg(long, default_value = "poly2")]
    dp: String,
    /// Weights for a learned predictor (train-dp output)
    #[arg(long, value_name = "FILE")]
    dp_weights: Option<PathBuf>,
}

impl DpArgs {
    fn build(&self) -> Result<Box<dyn MotionPredictor>> {
        let opts = PredictorOptions {
            weights: self.dp_weights.clone(),
        };
        Ok(PredictorRegistry::with_builtins().create(&self.dp, &opts)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic sequence directories
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the MLP motion predictor
    TrainDp {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion network with alpha search supervision
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        dp: DpArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track every sequence and write MOT-format results
    Track {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        dp: DpArgs,
        #[arg(long)]
        data: PathBuf,
        /// Fusion checkpoint; required by --mode fused
        #[arg(long)]
        model: Option<PathBuf>,
        /// fused, kalman, dp or fixed:<alpha>
        #[arg(long, default_value = "fused")]
        mode: String,
        /// Replace detections with the ground truth
        #[arg(long)]
        oracle_detections: bool,
        /// Output file, or a directory when the data holds several sequences
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a hypothesis against ground truth
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// MOT file or dataset directory
        #[arg(long)]
        gt: PathBuf,
        /// MOT file or directory of <sequence>.txt files
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count per-tracklet wins of each predictor, as CSV
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "kalman,poly2")]
        predictors: Vec<String>,
        /// Weights for the mlp predictor
        #[arg(long, value_name = "FILE")]
        dp_weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-tracklet blend factors and IoUs, as CSV
    InspectAlpha {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        dp: DpArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes a report to `out` (with the config echoed next to it) or stdout.
fn emit(out: Option<&Path>, text: &str, cfg: &PipelineConfig) -> Result<()> {
    match out {
        Some(p) => {
            write_file(p, text)?;
            write_file(&sibling(p, ".config.toml"), &cfg.to_toml())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_dataset(path: &Path) -> Result<SequenceDataset> {
    SequenceDataset::read_dir(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<PlugNet> {
    let mut net = PlugNet::new(0);
    checkpoint::load(&mut net, path)
        .with_context(|| format!("loading model {}", path.display()))?;
    Ok(net)
}

fn tracklets(ds: &SequenceDataset, cfg: &PipelineConfig) -> Result<Vec<TrackletSample>> {
    let t = extract_tracklets(ds, &cfg.samples())?;
    if t.is_empty() {
        bail!(Error::Domain(
            "no track in the data is long enough for a tracklet".into()
        ));
    }
    Ok(t)
}

/// Evenly strided subset of at most `max` items; `max == 0` keeps all.
fn stride<T: Clone>(items: Vec<T>, max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items;
    }
    let n = items.len();
    (0..max).map(|i| items[i * n / max].clone()).collect()
}

fn generate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ds = generate_synthetic(&cfg.synthetic)?;
    ds.write_dir(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let boxes: usize = ds
        .sequences
        .iter()
        .flat_map(|s| &s.gt)
        .map(|t| t.frames.len())
        .sum();
    println!(
        "wrote {} sequences ({boxes} gt boxes) to {}",
        ds.sequences.len(),
        out.display()
    );
    Ok(())
}

fn train_dp(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let samples = tracklets(&ds, cfg)?
        .iter()
        .map(|t| MlpSample::new(&t.window, &t.gt_next, t.img_w, t.img_h))
        .collect::<plugtrack::Result<Vec<_>>>()?;
    let mlp = MlpPredictor::train(&samples, &cfg.dp)?;
    ensure_parent(out)?;
    mlp.save(out)?;
    write_file(&sibling(out, ".config.toml"), &cfg.to_toml())?;
    println!(
        "trained mlp on {} tracklets, wrote {}",
        samples.len(),
        out.display()
    );
    Ok(())
}

fn train_fusion(cfg: &PipelineConfig, dp: &DpArgs, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let predictor = dp.build()?;
    let tracks = stride(tracklets(&ds, cfg)?, cfg.max_samples);
    let preds = dp_predictions(&tracks, predictor.as_ref())?;
    let samples = tracks
        .iter()
        .zip(&preds)
        .map(|(t, d)| t.to_training(d))
        .collect::<plugtrack::Result<Vec<_>>>()?;
    println!(
        "training on {} samples with dp={}",
        samples.len(),
        predictor.id()
    );
    let mut log = String::new();
    let (net, _) = train(&samples, &cfg.train, |r| {
        let line = r.to_line();
        println!("{line} wall_ms={}", r.wall_ms);
        let _ = writeln!(log, "{line}");
    })?;
    ensure_parent(out)?;
    checkpoint::save(&net, out)?;
    write_file(&sibling(out, ".log"), &log)?;
    write_file(&sibling(out, ".config.toml"), &cfg.to_toml())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_mode<'a>(mode: &str, net: Option<&'a PlugNet>) -> Result<MotionMode<'a>> {
    Ok(match mode {
        "fused" => match net {
            Some(n) => MotionMode::Fused(n),
            None => bail!(Error::Usage("--mode fused needs --model".into())),
        },
        "kalman" => MotionMode::KalmanOnly,
        "dp" => MotionMode::DpOnly,
        m => match m.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(a)) => MotionMode::Fixed(BlendFactors::uniform(a)?),
            _ => bail!(Error::Usage(format!(
                "unknown mode {m}; expected fused, kalman, dp or fixed:<alpha>"
            ))),
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn track(
    cfg: &PipelineConfig,
    dp: &DpArgs,
    data: &Path,
    model: Option<&Path>,
    mode: &str,
    oracle: bool,
    out: &Path,
) -> Result<()> {
    let mut ds = load_dataset(data)?;
    if oracle {
        ds = SequenceDataset {
            sequences: ds
                .sequences
                .iter()
                .map(|s| s.with_oracle_detections())
                .collect(),
        };
    }
    let net = model.map(load_model).transpose()?;
    let mode = parse_mode(mode, net.as_ref())?;
    let predictor = dp.build()?;
    let tracker = cfg.tracker();
    let single = ds.sequences.len() == 1;
    for seq in &ds.sequences {
        let outputs = run_sequence(
            &seq.detections,
            mode,
            predictor.as_ref(),
            &tracker,
            seq.img_w,
            seq.img_h,
        )
        .with_context(|| format!("tracking {}", seq.name))?;
        let records: Vec<MotRecord> = outputs.iter().map(|o| o.to_record()).collect();
        let path = if single {
            out.to_path_buf()
        } else {
            out.join(format!("{}.txt", seq.name))
        };
        ensure_parent(&path)?;
        write_mot_file(&path, &records)?;
        println!(
            "{}: {} boxes -> {}",
            seq.name,
            records.len(),
            path.display()
        );
    }
    let echo = if single {
        sibling(out, ".config.toml")
    } else {
        out.join("config.toml")
    };
    write_file(&echo, &cfg.to_toml())
}

fn read_gt_file(path: &Path) -> Result<Vec<MotRecord>> {
    let mut rows = parse_mot_file(path).with_context(|| format!("reading {}", path.display()))?;
    rows.retain(|r| r.conf != 0.0);
    Ok(rows)
}

fn eval(cfg: &PipelineConfig, gt: &Path, hyp: &Path, out: Option<&Path>) -> Result<()> {
    let mut pairs: Vec<(String, Vec<MotRecord>, Vec<MotRecord>)> = Vec::new();
    if gt.is_dir() {
        let ds = load_dataset(gt)?;
        let single = ds.sequences.len() == 1;
        for s in &ds.sequences {
            let hyp_path = if hyp.is_dir() {
                hyp.join(format!("{}.txt", s.name))
            } else if single {
                hyp.to_path_buf()
            } else {
                bail!(Error::Usage(
                    "several gt sequences need --hyp to be a directory".into()
                ));
            };
            let h = parse_mot_file(&hyp_path)
                .with_context(|| format!("reading {}", hyp_path.display()))?;
            pairs.push((s.name.clone(), s.gt_records(), h));
        }
    } else {
        let h = parse_mot_file(hyp).with_context(|| format!("reading {}", hyp.display()))?;
        let name = gt
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        pairs.push((name, read_gt_file(gt)?, h));
    }
    let mut text = String::new();
    let mut reports = Vec::new();
    for (name, g, h) in &pairs {
        let r =
            evaluate_sequence(g, h, cfg.eval_iou).with_context(|| format!("evaluating {name}"))?;
        let _ = writeln!(text, "{}", r.to_record(name));
        reports.push(r);
    }
    let total = EvalReport::combine(&reports)?;
    text.push_str(&total.to_text());
    emit(out, &text, cfg)
}

fn compare(
    cfg: &PipelineConfig,
    data: &Path,
    names: &[String],
    weights: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let registry = PredictorRegistry::with_builtins();
    let opts = PredictorOptions {
        weights: weights.map(Path::to_path_buf),
    };
    let predictors = names
        .iter()
        .map(|n| registry.create(n.trim(), &opts))
        .collect::<plugtrack::Result<Vec<_>>>()?;
    let refs: Vec<&dyn MotionPredictor> = predictors.iter().map(|p| p.as_ref()).collect();
    let wins = predictor_win_counts(&tracklets(&ds, cfg)?, &refs)?;
    emit(out, &wins.to_csv(), cfg)
}

fn inspect_alpha(
    cfg: &PipelineConfig,
    dp: &DpArgs,
    data: &Path,
    model: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let net = load_model(model)?;
    let predictor = dp.build()?;
    let tracks = tracklets(&ds, cfg)?;
    let preds = dp_predictions(&tracks, predictor.as_ref())?;
    let mut csv =
        String::from("frame,track_id,alpha_x,alpha_y,alpha_w,alpha_h,iou_kf,iou_dp,iou_blend\n");
    for r in alpha_rows(&net, &tracks, &preds)? {
        let a = r.alpha;
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.frame, r.track_id, a[0], a[1], a[2], a[3], r.iou_kf, r.iou_dp, r.iou_blend
        );
    }
    emit(out, &csv, cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { cfg, out } => generate(&cfg.load()?, out),
        Command::TrainDp { cfg, data, out } => train_dp(&cfg.load()?, data, out),
        Command::Train { cfg, dp, data, out } => train_fusion(&cfg.load()?, dp, data, out),
        Command::Track {
            cfg,
            dp,
            data,
            model,
            mode,
            oracle_detections,
            out,
        } => track(
            &cfg.load()?,
            dp,
            data,
            model.as_deref(),
            mode,
            *oracle_detections,
            out,
        ),
        Command::Eval { cfg, gt, hyp, out } => eval(&cfg.load()?, gt, hyp, out.as_deref()),
        Command::Compare {
            cfg,
            data,
            predictors,
            dp_weights,
            out,
        } => compare(
            &cfg.load()?,
            data,
            predictors,
            dp_weights.as_deref(),
            out.as_deref(),
        ),
        Command::InspectAlpha {
            cfg,
            dp,
            data,
            model,
            out,
        } => inspect_alpha(&cfg.load()?, dp, data, model, out.as_deref()),
    }
}

/// 1 usage, 2 data, 3 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_) => 1,
                Error::Numerical(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
