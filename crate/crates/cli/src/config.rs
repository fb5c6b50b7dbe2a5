//! Pipeline configuration: a TOML file plus `--set key=value` overrides,
//! every tunable addressed by a dotted key.

use std::path::Path;

use anyhow::{bail, Context, Result};
use plugtrack::data::{MotionMix, OcclusionConfig, SampleConfig, SyntheticConfig};
use plugtrack::kalman::NoiseConfig;
use plugtrack::predictors::MlpTrainConfig;
use plugtrack::tracking::TrackerConfig;
use plugtrack::train::TrainConfig;
use plugtrack::Error;
use toml::{Table, Value};

pub const SEED_ENV: &str = "PLUGTRACK_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    pub kalman: NoiseConfig,
    pub samples: SampleConfig,
    pub train: TrainConfig,
    /// Cap on MCAS training samples, evenly strided; 0 keeps all.
    pub max_samples: usize,
    pub dp: MlpTrainConfig,
    pub tracker: TrackerConfig,
    pub eval_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synthetic: SyntheticConfig::default(),
            kalman: NoiseConfig::default(),
            samples: SampleConfig::default(),
            train: TrainConfig::default(),
            max_samples: 0,
            dp: MlpTrainConfig::default(),
            tracker: TrackerConfig::default(),
            eval_iou: plugtrack::metrics::MATCH_IOU,
        }
    }
}

fn usage(msg: String) -> anyhow::Error {
    Error::Usage(msg).into()
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(usage(format!("{key} expects a number, got {v}"))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(usage(format!(
            "{key} expects a non-negative integer, got {v}"
        ))),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| usage(format!("{key} expects true or false, got {v}")))
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

impl PipelineConfig {
    /// Defaults, then `PLUGTRACK_SEED`, then the file, then overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
            cfg.set("seed", &Value::Integer(seed))?;
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_toml(&text)
                .with_context(|| format!("in config file {}", path.display()))?;
        }
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!(usage(format!("override {o:?} is not key=value")));
            };
            let value = match format!("v = {}", v.trim()).parse::<Table>() {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => Value::String(v.trim().to_string()),
            };
            cfg.set(k.trim(), &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| usage(format!("malformed config: {}", e.message())))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        // The global seed first so that module seeds in the same file win.
        flat.sort_by_key(|(k, _)| k != "seed");
        for (k, v) in &flat {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let s = &mut self.synthetic;
        match key {
            "seed" => {
                let seed = as_usize(key, v)? as u64;
                self.seed = seed;
                s.seed = seed;
                self.samples.seed = seed;
                self.train.seed = seed;
                self.dp.seed = seed;
            }
            "synthetic.seed" => s.seed = as_usize(key, v)? as u64,
            "synthetic.n_sequences" => s.n_sequences = as_usize(key, v)?,
            "synthetic.n_tracks" => s.n_tracks = as_usize(key, v)?,
            "synthetic.n_frames" => s.n_frames = as_usize(key, v)?,
            "synthetic.linear" => s.motion_mix.linear = as_f64(key, v)?,
            "synthetic.sinusoidal" => s.motion_mix.sinusoidal = as_f64(key, v)?,
            "synthetic.circular" => s.motion_mix.circular = as_f64(key, v)?,
            "synthetic.noise_std" => s.noise_std = as_f64(key, v)?,
            "synthetic.gap_prob" => s.occlusion.gap_prob = as_f64(key, v)?,
            "synthetic.gap_min" => s.occlusion.min_len = as_usize(key, v)?,
            "synthetic.gap_max" => s.occlusion.max_len = as_usize(key, v)?,
            "synthetic.img_w" => s.img_w = as_f64(key, v)?,
            "synthetic.img_h" => s.img_h = as_f64(key, v)?,
            "synthetic.fps" => s.fps = as_f64(key, v)?,
            "kalman.q_pos" => self.kalman.q_pos = as_f64(key, v)?,
            "kalman.q_vel" => self.kalman.q_vel = as_f64(key, v)?,
            "kalman.r_pos" => self.kalman.r_pos = as_f64(key, v)?,
            "kalman.window_w" => {
                let w = as_usize(key, v)?;
                self.samples.window_w = w;
                self.train.window_w = w;
                self.tracker.window_w = w;
            }
            "samples.seed" => self.samples.seed = as_usize(key, v)? as u64,
            "samples.obs_noise_std" => self.samples.obs_noise_std = as_f64(key, v)?,
            "mcas.lambda1" => self.train.lambda1 = as_f64(key, v)?,
            "mcas.lambda2" => self.train.lambda2 = as_f64(key, v)?,
            "mcas.grid_steps" => self.train.grid_steps = as_usize(key, v)?,
            "mcas.noise_std" => self.train.noise_std = as_f64(key, v)?,
            "mcas.per_sample_noise" => self.train.per_sample_noise = as_bool(key, v)?,
            "train.seed" => self.train.seed = as_usize(key, v)? as u64,
            "train.lr" => self.train.lr = as_f64(key, v)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, v)?,
            "train.epochs" => self.train.epochs = as_usize(key, v)?,
            "train.max_samples" => self.max_samples = as_usize(key, v)?,
            "dp.seed" => self.dp.seed = as_usize(key, v)? as u64,
            "dp.lr" => self.dp.lr = as_f64(key, v)?,
            "dp.batch_size" => self.dp.batch_size = as_usize(key, v)?,
            "dp.epochs" => self.dp.epochs = as_usize(key, v)?,
            "tracker.iou_threshold" => self.tracker.iou_threshold = as_f64(key, v)?,
            "tracker.max_age" => self.tracker.max_age = as_usize(key, v)?,
            "tracker.min_hits" => self.tracker.min_hits = as_usize(key, v)?,
            "tracker.extend_lost" => self.tracker.extend_lost = as_bool(key, v)?,
            "eval.iou_threshold" => self.eval_iou = as_f64(key, v)?,
            _ => bail!(usage(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.kalman.validate()?;
        self.train.validate()?;
        self.tracker.validate()?;
        if !(0.0..=1.0).contains(&self.eval_iou) {
            bail!(Error::Domain(
                "eval.iou_threshold must lie in [0, 1]".into()
            ));
        }
        Ok(())
    }

    /// Fills in the pieces shared across modules.
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            noise: self.kalman,
            ..self.tracker
        }
    }

    pub fn samples(&self) -> SampleConfig {
        SampleConfig {
            noise: self.kalman,
            ..self.samples
        }
    }

    /// The effective configuration as flat dotted keys; it parses back to
    /// the same configuration.
    pub fn to_toml(&self) -> String {
        let s = &self.synthetic;
        let MotionMix {
            linear,
            sinusoidal,
            circular,
        } = s.motion_mix;
        let OcclusionConfig {
            gap_prob,
            min_len,
            max_len,
        } = s.occlusion;
        let t = &self.train;
        let k = &self.tracker;
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("synthetic.seed", s.seed.to_string()),
            ("synthetic.n_sequences", s.n_sequences.to_string()),
            ("synthetic.n_tracks", s.n_tracks.to_string()),
            ("synthetic.n_frames", s.n_frames.to_string()),
            ("synthetic.linear", format!("{linear:?}")),
            ("synthetic.sinusoidal", format!("{sinusoidal:?}")),
            ("synthetic.circular", format!("{circular:?}")),
            ("synthetic.noise_std", format!("{:?}", s.noise_std)),
            ("synthetic.gap_prob", format!("{gap_prob:?}")),
            ("synthetic.gap_min", min_len.to_string()),
            ("synthetic.gap_max", max_len.to_string()),
            ("synthetic.img_w", format!("{:?}", s.img_w)),
            ("synthetic.img_h", format!("{:?}", s.img_h)),
            ("synthetic.fps", format!("{:?}", s.fps)),
            ("kalman.q_pos", format!("{:?}", self.kalman.q_pos)),
            ("kalman.q_vel", format!("{:?}", self.kalman.q_vel)),
            ("kalman.r_pos", format!("{:?}", self.kalman.r_pos)),
            ("kalman.window_w", t.window_w.to_string()),
            ("samples.seed", self.samples.seed.to_string()),
            (
                "samples.obs_noise_std",
                format!("{:?}", self.samples.obs_noise_std),
            ),
            ("mcas.lambda1", format!("{:?}", t.lambda1)),
            ("mcas.lambda2", format!("{:?}", t.lambda2)),
            ("mcas.grid_steps", t.grid_steps.to_string()),
            ("mcas.noise_std", format!("{:?}", t.noise_std)),
            ("mcas.per_sample_noise", t.per_sample_noise.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.lr", format!("{:?}", t.lr)),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.max_samples", self.max_samples.to_string()),
            ("dp.seed", self.dp.seed.to_string()),
            ("dp.lr", format!("{:?}", self.dp.lr)),
            ("dp.batch_size", self.dp.batch_size.to_string()),
            ("dp.epochs", self.dp.epochs.to_string()),
            ("tracker.iou_threshold", format!("{:?}", k.iou_threshold)),
            ("tracker.max_age", k.max_age.to_string()),
            ("tracker.min_hits", k.min_hits.to_string()),
            ("tracker.extend_lost", k.extend_lost.to_string()),
            ("eval.iou_threshold", format!("{:?}", self.eval_iou)),
        ];
        entries
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
