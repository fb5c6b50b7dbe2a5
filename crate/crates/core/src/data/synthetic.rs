//! Synthetic linear, sinusoidal and circular trajectories with noisy,
//! occasionally occluded detections.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{GtTrack, Sequence, SequenceDataset};
use crate::error::{domain, Result};
use crate::geometry::BBox;
use crate::nn::mix;

/// Smallest synthetic box side, in pixels.
pub const MIN_BOX_SIZE: f64 = 4.0;
const TRACK_STREAM: u64 = 0x7472_6163_6b00;
const DET_STREAM: u64 = 0x6465_7465_6374;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotionKind {
    Linear,
    Sinusoidal,
    Circular,
}

impl MotionKind {
    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Linear => "linear",
            MotionKind::Sinusoidal => "sinusoidal",
            MotionKind::Circular => "circular",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(MotionKind::Linear),
            "sinusoidal" => Some(MotionKind::Sinusoidal),
            "circular" => Some(MotionKind::Circular),
            _ => None,
        }
    }

    pub fn is_linear(self) -> bool {
        self == MotionKind::Linear
    }
}

/// Fractions of tracks per motion regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionMix {
    pub linear: f64,
    pub sinusoidal: f64,
    pub circular: f64,
}

impl MotionMix {
    pub fn only(kind: MotionKind) -> Self {
        let mut m = Self {
            linear: 0.0,
            sinusoidal: 0.0,
            circular: 0.0,
        };
        match kind {
            MotionKind::Linear => m.linear = 1.0,
            MotionKind::Sinusoidal => m.sinusoidal = 1.0,
            MotionKind::Circular => m.circular = 1.0,
        }
        m
    }

    /// Regime of track `i` out of `n`: a deterministic split by the fractions.
    fn kind_for(&self, i: usize, n: usize) -> MotionKind {
        let u = (i as f64 + 0.5) / n as f64;
        if u < self.linear {
            MotionKind::Linear
        } else if u < self.linear + self.sinusoidal {
            MotionKind::Sinusoidal
        } else {
            MotionKind::Circular
        }
    }
}

impl Default for MotionMix {
    fn default() -> Self {
        Self {
            linear: 0.5,
            sinusoidal: 0.25,
            circular: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    /// Probability that a track gets one detection gap.
    pub gap_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            gap_prob: 0.0,
            min_len: 5,
            max_len: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_sequences: usize,
    pub n_tracks: usize,
    pub n_frames: usize,
    pub motion_mix: MotionMix,
    /// Detection noise standard deviation, pixels, per box coordinate.
    pub noise_std: f64,
    pub occlusion: OcclusionConfig,
    pub img_w: f64,
    pub img_h: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sequences: 1,
            n_tracks: 10,
            n_frames: 200,
            motion_mix: MotionMix::default(),
            noise_std: 2.0,
            occlusion: OcclusionConfig::default(),
            img_w: 1920.0,
            img_h: 1080.0,
            fps: 30.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.motion_mix;
        let fracs = [m.linear, m.sinusoidal, m.circular];
        if fracs.iter().any(|f| !(*f >= 0.0)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return domain(format!(
                "motion fractions must be non-negative and sum to 1: {m:?}"
            ));
        }
        if self.n_sequences == 0 || self.n_tracks == 0 || self.n_frames < 2 {
            return domain("synthetic counts must be positive and n_frames at least 2");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return domain("noise_std must be non-negative");
        }
        let o = &self.occlusion;
        if !(0.0..=1.0).contains(&o.gap_prob) || o.min_len == 0 || o.min_len > o.max_len {
            return domain(format!("invalid occlusion settings {o:?}"));
        }
        if !(self.img_w >= 320.0 && self.img_h >= 240.0)
            || !self.img_w.is_finite()
            || !self.img_h.is_finite()
        {
            return domain("image must be at least 320x240");
        }
        if !(self.fps > 0.0) {
            return domain("fps must be positive");
        }
        Ok(())
    }
}

/// Offsets of the box center from an anchor point and the box size, per frame.
struct Path {
    offsets: Vec<(f64, f64)>,
    sizes: Vec<(f64, f64)>,
}

fn sample_path(kind: MotionKind, n: usize, img_h: f64, rng: &mut ChaCha8Rng, shrink: f64) -> Path {
    let h0 = rng.random_range(40.0..120.0) * shrink.max(0.3);
    let aspect = rng.random_range(0.35..0.7);
    let growth = rng.random_range(-0.0008..0.0008);
    let heading = rng.random_range(0.0..TAU);
    let (ux, uy) = (heading.cos(), heading.sin());
    let ts = (0..n).map(|t| t as f64);
    match kind {
        MotionKind::Linear => {
            let speed = rng.random_range(1.0..6.0) * shrink;
            let offsets = ts
                .clone()
                .map(|t| (ux * speed * t, uy * speed * t))
                .collect();
            let sizes = ts.map(|t| linear_size(h0, aspect, growth, t)).collect();
            Path { offsets, sizes }
        }
        MotionKind::Sinusoidal => {
            let speed = rng.random_range(1.0..4.0) * shrink;
            let amp = rng.random_range(0.05..0.15) * img_h * shrink;
            let period = rng.random_range(20.0..60.0);
            let phase = rng.random_range(0.0..TAU);
            let size_amp = rng.random_range(0.0..0.1);
            let (nx, ny) = (-uy, ux);
            let offsets = ts
                .clone()
                .map(|t| {
                    let s = sinusoid(amp, period, phase, t);
                    (ux * speed * t + nx * s, uy * speed * t + ny * s)
                })
                .collect();
            let sizes = ts
                .map(|t| {
                    let (w, h) = linear_size(h0, aspect, growth, t);
                    let m = 1.0 + size_amp * (TAU * t / period + phase).cos();
                    (w * m, h * m)
                })
                .collect();
            Path { offsets, sizes }
        }
        MotionKind::Circular => {
            let radius = rng.random_range(0.05..0.15) * img_h * shrink;
            let period = rng.random_range(30.0..90.0);
            let phase = rng.random_range(0.0..TAU);
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let offsets = ts
                .clone()
                .map(|t| {
                    let a = phase + dir * TAU * t / period;
                    (radius * a.cos(), radius * a.sin())
                })
                .collect();
            let sizes = ts.map(|t| linear_size(h0, aspect, growth, t)).collect();
            Path { offsets, sizes }
        }
    }
}

/// Perpendicular displacement of a sinusoidal track at frame `t`.
pub fn sinusoid(amp: f64, period: f64, phase: f64, t: f64) -> f64 {
    amp * (TAU * t / period + phase).sin()
}

fn linear_size(h0: f64, aspect: f64, growth: f64, t: f64) -> (f64, f64) {
    let h = (h0 * (1.0 + growth * t)).max(MIN_BOX_SIZE * 2.0);
    ((h * aspect).max(MIN_BOX_SIZE), h)
}

/// Boxes of one track placed so that every box lies inside the image.
fn sample_track(kind: MotionKind, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let mut shrink = 1.0;
    loop {
        let path = sample_path(kind, cfg.n_frames, cfg.img_h, rng, shrink);
        // Feasible start interval for the center along each axis.
        let mut lo = (f64::MIN, f64::MIN);
        let mut hi = (f64::MAX, f64::MAX);
        for ((ox, oy), (w, h)) in path.offsets.iter().zip(&path.sizes) {
            lo.0 = lo.0.max(w / 2.0 - ox);
            hi.0 = hi.0.min(cfg.img_w - w / 2.0 - ox);
            lo.1 = lo.1.max(h / 2.0 - oy);
            hi.1 = hi.1.min(cfg.img_h - h / 2.0 - oy);
        }
        if lo.0 < hi.0 && lo.1 < hi.1 {
            let sx = rng.random_range(lo.0..hi.0);
            let sy = rng.random_range(lo.1..hi.1);
            return path
                .offsets
                .iter()
                .zip(&path.sizes)
                .map(|((ox, oy), (w, h))| BBox::new(sx + ox, sy + oy, *w, *h))
                .collect();
        }
        shrink *= 0.8;
    }
}

/// Gt box plus independent noise, clipped to the image with sides of at
/// least [`MIN_BOX_SIZE`].
fn noisy_detection(
    b: &BBox,
    noise: Option<&Normal<f64>>,
    cfg: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> BBox {
    let mut v = b.to_array();
    if let Some(n) = noise {
        for x in v.iter_mut() {
            *x += n.sample(rng);
        }
    }
    let (mut x1, mut y1) = (v[0] - v[2] / 2.0, v[1] - v[3] / 2.0);
    let (mut x2, mut y2) = (v[0] + v[2] / 2.0, v[1] + v[3] / 2.0);
    x1 = x1.clamp(0.0, cfg.img_w - MIN_BOX_SIZE);
    y1 = y1.clamp(0.0, cfg.img_h - MIN_BOX_SIZE);
    x2 = x2.clamp(x1 + MIN_BOX_SIZE, cfg.img_w);
    y2 = y2.clamp(y1 + MIN_BOX_SIZE, cfg.img_h);
    BBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
}

pub fn generate_sequence(cfg: &SyntheticConfig, index: usize) -> Result<Sequence> {
    cfg.validate()?;
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| crate::Error::Domain(e.to_string()))?)
    } else {
        None
    };
    let frames: Vec<i64> = (1..=cfg.n_frames as i64).collect();
    let mut gt = Vec::with_capacity(cfg.n_tracks);
    let mut detections = vec![Vec::new(); cfg.n_frames];
    for k in 0..cfg.n_tracks {
        let kind = cfg.motion_mix.kind_for(k, cfg.n_tracks);
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix(&[TRACK_STREAM, cfg.seed, index as u64, k as u64]));
        let boxes = sample_track(kind, cfg, &mut rng);
        let mut det_rng =
            ChaCha8Rng::seed_from_u64(mix(&[DET_STREAM, cfg.seed, index as u64, k as u64]));
        let o = &cfg.occlusion;
        let gap = if o.gap_prob > 0.0 && det_rng.random_bool(o.gap_prob) {
            let len = det_rng
                .random_range(o.min_len..=o.max_len)
                .min(cfg.n_frames / 2);
            // Keep a few visible frames at the start so the track is established.
            let earliest = 5.min(cfg.n_frames - len);
            let start = det_rng.random_range(earliest..=cfg.n_frames - len);
            Some(start..start + len)
        } else {
            None
        };
        for (t, b) in boxes.iter().enumerate() {
            let d = noisy_detection(b, noise.as_ref(), cfg, &mut det_rng);
            if gap.as_ref().is_some_and(|g| g.contains(&t)) {
                continue;
            }
            detections[t].push(d);
        }
        gt.push(GtTrack {
            id: k as i64 + 1,
            kind: Some(kind),
            frames: frames.clone(),
            boxes,
        });
    }
    Ok(Sequence {
        name: format!("synth-{:03}", index + 1),
        img_w: cfg.img_w,
        img_h: cfg.img_h,
        fps: cfg.fps,
        length: cfg.n_frames,
        gt,
        detections,
    })
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SequenceDataset> {
    cfg.validate()?;
    Ok(SequenceDataset {
        sequences: (0..cfg.n_sequences)
            .map(|i| generate_sequence(cfg, i))
            .collect::<Result<_>>()?,
    })
}
