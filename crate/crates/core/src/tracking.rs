//! Tracking by detection: fused motion prediction, IoU association and the
//! track lifecycle.

use crate::abg::{blend_predictions, BlendFactors};
use crate::assignment;
use crate::cme::CmeInputs;
use crate::data::MotRecord;
use crate::error::{domain, Result};
use crate::geometry::{iou_unchecked, BBox, Tracklet, TRACKLET_LEN};
use crate::kalman::{
    kf_init_with_window, kf_predict, kf_update, uncertainty_vector, KalmanState, NoiseConfig,
    NIS_WINDOW,
};
use crate::network::PlugNet;
use crate::predictors::{MotionPredictor, PredictContext};

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// `(track index, detection index)` pairs, by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum total `1 - IoU` assignment; assigned pairs below the threshold
/// are split back into unmatched tracks and detections.
pub fn associate(predicted: &[BBox], detections: &[BBox], iou_threshold: f64) -> AssociationResult {
    let (n, m) = (predicted.len(), detections.len());
    let mut ious = vec![0.0; n * m];
    for (i, p) in predicted.iter().enumerate() {
        for (j, d) in detections.iter().enumerate() {
            ious[i * m + j] = iou_unchecked(p, d);
        }
    }
    let cost: Vec<f64> = ious.iter().map(|v| 1.0 - v).collect();
    let assigned = assignment::solve(&cost, n, m);
    let mut matches = Vec::new();
    let mut det_used = vec![false; m];
    let mut unmatched_tracks = Vec::new();
    for (i, a) in assigned.iter().enumerate() {
        match a {
            Some(j) if ious[i * m + j] >= iou_threshold => {
                matches.push((i, *j));
                det_used[*j] = true;
            }
            _ => unmatched_tracks.push(i),
        }
    }
    let unmatched_detections = (0..m).filter(|&j| !det_used[j]).collect();
    AssociationResult {
        matches,
        unmatched_tracks,
        unmatched_detections,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Lost,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: i64,
    pub history: Tracklet,
    /// Marks history entries that were the track's own predictions while lost.
    pub synthetic: Vec<bool>,
    pub kf: KalmanState,
    pub status: TrackStatus,
    pub miss_count: usize,
    pub hits: usize,
    pub confirmed: bool,
}

impl Track {
    fn window(&self) -> Result<Tracklet> {
        self.history.to_window(TRACKLET_LEN)
    }
}

/// How the two predictor boxes are combined.
#[derive(Clone, Copy)]
pub enum MotionMode<'a> {
    /// Blend factors from the trained network.
    Fused(&'a PlugNet),
    Fixed(BlendFactors),
    KalmanOnly,
    DpOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub max_age: usize,
    /// Consecutive matches before a track born after the first frame is reported.
    pub min_hits: usize,
    pub noise: NoiseConfig,
    pub window_w: usize,
    /// Extend lost tracks' histories with their own predictions.
    pub extend_lost: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 30,
            min_hits: 2,
            noise: NoiseConfig::default(),
            window_w: NIS_WINDOW,
            extend_lost: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return domain("iou_threshold must lie in [0, 1]");
        }
        if self.min_hits == 0 || self.window_w == 0 {
            return domain("min_hits and window_w must be positive");
        }
        self.noise.validate()
    }
}

/// One reported box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub frame: i64,
    pub id: i64,
    pub bbox: BBox,
    pub alpha: [f64; 4],
    /// Self-extended entries in the window the prediction was made from.
    pub synthetic_history: usize,
}

impl TrackOutput {
    pub fn to_record(&self) -> MotRecord {
        MotRecord::from_bbox(self.frame, self.id, &self.bbox, 1.0)
    }
}

pub struct Tracker<'a> {
    pub config: TrackerConfig,
    mode: MotionMode<'a>,
    dp: &'a dyn MotionPredictor,
    img_w: f64,
    img_h: f64,
    tracks: Vec<Track>,
    next_id: i64,
    first_frame: Option<i64>,
}

struct FramePrediction {
    kf_state: KalmanState,
    blended: BBox,
    alpha: [f64; 4],
}

impl<'a> Tracker<'a> {
    pub fn new(
        config: TrackerConfig,
        mode: MotionMode<'a>,
        dp: &'a dyn MotionPredictor,
        img_w: f64,
        img_h: f64,
    ) -> Result<Self> {
        config.validate()?;
        if !(img_w > 0.0 && img_h > 0.0) {
            return domain("image size must be positive");
        }
        Ok(Self {
            config,
            mode,
            dp,
            img_w,
            img_h,
            tracks: Vec::new(),
            next_id: 1,
            first_frame: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn predict_all(&self) -> Result<Vec<FramePrediction>> {
        let noise = &self.config.noise;
        let mut kf = Vec::with_capacity(self.tracks.len());
        let mut dp = Vec::with_capacity(self.tracks.len());
        let mut windows = Vec::with_capacity(self.tracks.len());
        for t in &self.tracks {
            let (state, kf_box) = kf_predict(&t.kf, noise);
            let window = t.window()?;
            let dp_box = match self.mode {
                MotionMode::KalmanOnly => kf_box,
                _ => {
                    let ctx = PredictContext {
                        kalman: Some(&t.kf),
                        noise: *noise,
                        img_w: self.img_w,
                        img_h: self.img_h,
                        gt_next: None,
                    };
                    self.dp.predict_next(&window, &ctx)?.bbox
                }
            };
            kf.push((state, kf_box));
            dp.push(dp_box);
            windows.push(window);
        }
        let alphas: Vec<[f64; 4]> = match self.mode {
            MotionMode::Fused(net) if !self.tracks.is_empty() => {
                let inputs: Vec<CmeInputs> = self
                    .tracks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        CmeInputs::from_pixels(
                            &windows[i],
                            &kf[i].1,
                            &dp[i],
                            uncertainty_vector(&t.kf).sigma,
                            self.img_w,
                            self.img_h,
                        )
                    })
                    .collect::<Result<_>>()?;
                let refs: Vec<&CmeInputs> = inputs.iter().collect();
                net.predict_alpha(&refs)?
                    .into_iter()
                    .map(|a| a.alpha)
                    .collect()
            }
            MotionMode::Fused(_) => Vec::new(),
            MotionMode::Fixed(a) => vec![a.alpha; self.tracks.len()],
            MotionMode::KalmanOnly => vec![[1.0; 4]; self.tracks.len()],
            MotionMode::DpOnly => vec![[0.0; 4]; self.tracks.len()],
        };
        Ok(kf
            .into_iter()
            .zip(dp)
            .zip(alphas)
            .map(|(((kf_state, kf_box), dp_box), alpha)| FramePrediction {
                kf_state,
                blended: blend_predictions(&BlendFactors { alpha }, &kf_box, &dp_box),
                alpha,
            })
            .collect())
    }

    /// Advances one frame and returns the boxes of confirmed tracks that were
    /// matched in it, by ascending id.
    pub fn step(&mut self, frame: i64, detections: &[BBox]) -> Result<Vec<TrackOutput>> {
        let first = *self.first_frame.get_or_insert(frame);
        let preds = self.predict_all()?;
        let predicted: Vec<BBox> = preds.iter().map(|p| p.blended).collect();
        let assoc = associate(&predicted, detections, self.config.iou_threshold);
        let noise = self.config.noise;
        let mut outputs = Vec::new();
        let mut matched = vec![None; self.tracks.len()];
        for &(ti, di) in &assoc.matches {
            matched[ti] = Some(di);
        }
        for (ti, (track, pred)) in self.tracks.iter_mut().zip(preds).enumerate() {
            match matched[ti] {
                Some(di) => {
                    let det = detections[di];
                    let synthetic_history = track
                        .synthetic
                        .iter()
                        .rev()
                        .take(TRACKLET_LEN)
                        .filter(|s| **s)
                        .count();
                    track.kf = kf_update(&pred.kf_state, &det, &noise)?;
                    track.history.push(frame, det)?;
                    track.synthetic.push(false);
                    track.miss_count = 0;
                    track.hits += 1;
                    track.status = TrackStatus::Active;
                    if track.hits >= self.config.min_hits {
                        track.confirmed = true;
                    }
                    if track.confirmed {
                        outputs.push(TrackOutput {
                            frame,
                            id: track.id,
                            bbox: track.kf.bbox(),
                            alpha: pred.alpha,
                            synthetic_history,
                        });
                    }
                }
                None => {
                    track.kf = pred.kf_state;
                    track.miss_count += 1;
                    track.hits = 0;
                    if track.miss_count > self.config.window_w {
                        track.kf.reset_uncertainty();
                    }
                    if !track.confirmed || track.miss_count > self.config.max_age {
                        track.status = TrackStatus::Dead;
                    } else {
                        track.status = TrackStatus::Lost;
                        if self.config.extend_lost && pred.blended.w > 0.0 && pred.blended.h > 0.0 {
                            track.history.push(frame, pred.blended)?;
                            track.synthetic.push(true);
                        }
                    }
                }
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Dead);
        for &di in &assoc.unmatched_detections {
            let det = detections[di];
            let mut history = Tracklet::new();
            history.push(frame, det)?;
            let id = self.next_id;
            self.next_id += 1;
            let confirmed = frame == first || self.config.min_hits <= 1;
            self.tracks.push(Track {
                id,
                history,
                synthetic: vec![false],
                kf: kf_init_with_window(&det, &noise, self.config.window_w)?,
                status: TrackStatus::Active,
                miss_count: 0,
                hits: 1,
                confirmed,
            });
            if confirmed {
                outputs.push(TrackOutput {
                    frame,
                    id,
                    bbox: det,
                    alpha: [1.0; 4],
                    synthetic_history: 0,
                });
            }
        }
        outputs.sort_by_key(|o| o.id);
        Ok(outputs)
    }
}

/// Tracks a whole sequence; `detections[k]` holds frame `k + 1`.
pub fn run_sequence(
    detections: &[Vec<BBox>],
    mode: MotionMode<'_>,
    dp: &dyn MotionPredictor,
    config: &TrackerConfig,
    img_w: f64,
    img_h: f64,
) -> Result<Vec<TrackOutput>> {
    let mut tracker = Tracker::new(*config, mode, dp, img_w, img_h)?;
    let mut out = Vec::new();
    for (k, dets) in detections.iter().enumerate() {
        out.extend(tracker.step(k as i64 + 1, dets)?);
    }
    Ok(out)
}
