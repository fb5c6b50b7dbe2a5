//! Sliding-window training and evaluation samples from ground-truth tracks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::SequenceDataset;
use super::synthetic::{MotionKind, MIN_BOX_SIZE};
use crate::cme::CmeInputs;
use crate::error::{domain, Result};
use crate::geometry::{normalize_box, BBox, BoxObservation, Tracklet, TRACKLET_LEN};
use crate::kalman::{
    kf_init_with_window, kf_predict, kf_update, uncertainty_vector, KalmanState, NoiseConfig,
    NIS_WINDOW,
};
use crate::nn::mix;
use crate::predictors::{MotionPredictor, PredictContext};
use crate::train::TrainingSample;

const JITTER_STREAM: u64 = 0x6a69_7474_6572;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub noise: NoiseConfig,
    /// Pixel noise added to gt boxes before they are used as observations,
    /// standing in for detector jitter. Targets stay clean.
    pub obs_noise_std: f64,
    pub window_w: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            obs_noise_std: 2.0,
            window_w: NIS_WINDOW,
            seed: 0,
        }
    }
}

/// One window of one track with the Kalman arm already evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletSample {
    pub sequence: usize,
    pub track_id: i64,
    pub kind: Option<MotionKind>,
    /// Frame of the window's last observation.
    pub frame: i64,
    pub window: Tracklet,
    /// Filter state after the window's last update.
    pub kalman: KalmanState,
    pub noise: NoiseConfig,
    pub kf_pred: BBox,
    pub sigma_kf: [f64; 4],
    pub gt_next: BBox,
    pub img_w: f64,
    pub img_h: f64,
}

impl TrackletSample {
    pub fn context(&self) -> PredictContext<'_> {
        PredictContext {
            kalman: Some(&self.kalman),
            noise: self.noise,
            img_w: self.img_w,
            img_h: self.img_h,
            gt_next: Some(self.gt_next),
        }
    }

    pub fn to_training(&self, dp_pred: &BBox) -> Result<TrainingSample> {
        Ok(TrainingSample {
            inputs: CmeInputs::from_pixels(
                &self.window,
                &self.kf_pred,
                dp_pred,
                self.sigma_kf,
                self.img_w,
                self.img_h,
            )?,
            gt: normalize_box(&self.gt_next, self.img_w, self.img_h)?,
        })
    }
}

fn jitter(b: &BBox, normal: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> BBox {
    match normal {
        None => *b,
        Some(n) => {
            let v = b.to_array();
            BBox::new(
                v[0] + n.sample(rng),
                v[1] + n.sample(rng),
                (v[2] + n.sample(rng)).max(MIN_BOX_SIZE),
                (v[3] + n.sample(rng)).max(MIN_BOX_SIZE),
            )
        }
    }
}

/// Every `TRACKLET_LEN`-frame window of every gt track that has a following
/// frame: a track of `n` contiguous frames yields `n - TRACKLET_LEN` samples.
/// A Kalman filter runs along the (jittered) observations from the track's
/// first frame; windows whose next frame is missing are skipped.
pub fn extract_tracklets(ds: &SequenceDataset, cfg: &SampleConfig) -> Result<Vec<TrackletSample>> {
    cfg.noise.validate()?;
    if !(cfg.obs_noise_std >= 0.0) {
        return domain("obs_noise_std must be non-negative");
    }
    let normal = if cfg.obs_noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.obs_noise_std).map_err(|e| crate::Error::Domain(e.to_string()))?)
    } else {
        None
    };
    let mut out = Vec::new();
    for (si, seq) in ds.sequences.iter().enumerate() {
        for track in &seq.gt {
            let n = track.frames.len();
            if n <= TRACKLET_LEN {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
                JITTER_STREAM,
                cfg.seed,
                si as u64,
                track.id as u64,
            ]));
            let observed: Vec<BBox> = track
                .boxes
                .iter()
                .map(|b| jitter(b, normal.as_ref(), &mut rng))
                .collect();
            let mut observations = Vec::with_capacity(n);
            observations.push(BoxObservation::first(observed[0]));
            for k in 1..n {
                observations.push(BoxObservation::following(&observed[k - 1], observed[k]));
            }
            let mut state = kf_init_with_window(&observed[0], &cfg.noise, cfg.window_w)?;
            for t in 1..n - 1 {
                let gap = track.frames[t] - track.frames[t - 1];
                for _ in 0..gap.max(1) {
                    state = kf_predict(&state, &cfg.noise).0;
                }
                state = kf_update(&state, &observed[t], &cfg.noise)?;
                if t + 1 < TRACKLET_LEN || track.frames[t + 1] != track.frames[t] + 1 {
                    continue;
                }
                let start = t + 1 - TRACKLET_LEN;
                let window = Tracklet {
                    observations: observations[start..=t].to_vec(),
                    frame_ids: track.frames[start..=t].to_vec(),
                    padded: 0,
                };
                let kf_pred = kf_predict(&state, &cfg.noise).1;
                out.push(TrackletSample {
                    sequence: si,
                    track_id: track.id,
                    kind: track.kind,
                    frame: track.frames[t],
                    window,
                    kalman: state.clone(),
                    noise: cfg.noise,
                    kf_pred,
                    sigma_kf: uncertainty_vector(&state).sigma,
                    gt_next: track.boxes[t + 1],
                    img_w: seq.img_w,
                    img_h: seq.img_h,
                });
            }
        }
    }
    Ok(out)
}

/// Runs `dp` on every window.
pub fn dp_predictions(samples: &[TrackletSample], dp: &dyn MotionPredictor) -> Result<Vec<BBox>> {
    samples
        .iter()
        .map(|s| Ok(dp.predict_next(&s.window, &s.context())?.bbox))
        .collect()
}

pub fn build_training_set(
    ds: &SequenceDataset,
    dp: &dyn MotionPredictor,
    cfg: &SampleConfig,
) -> Result<Vec<TrainingSample>> {
    let tracklets = extract_tracklets(ds, cfg)?;
    let dp_preds = dp_predictions(&tracklets, dp)?;
    tracklets
        .iter()
        .zip(&dp_preds)
        .map(|(s, d)| s.to_training(d))
        .collect()
}
