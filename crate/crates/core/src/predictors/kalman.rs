use super::{MotionPredictor, PredictContext, Prediction};
use crate::error::{domain, Result};
use crate::geometry::Tracklet;
use crate::kalman::{kf_init, kf_predict, kf_update, KalmanState, NoiseConfig};

/// Constant-velocity Kalman prediction. Uses the track's own filter when the
/// context carries one, otherwise filters the observed part of the window.
#[derive(Debug, Clone, Copy, Default)]
pub struct KalmanPredictor;

impl KalmanPredictor {
    /// Filter state after the last observation in `window`.
    pub fn filter_window(window: &Tracklet, noise: &NoiseConfig) -> Result<KalmanState> {
        let (frames, obs) = window.observed();
        let Some(first) = obs.first() else {
            return domain("tracklet has no observed boxes");
        };
        let mut state = kf_init(&first.bbox, noise)?;
        for k in 1..obs.len() {
            let gap = frames[k] - frames[k - 1];
            for _ in 0..gap.max(1) {
                state = kf_predict(&state, noise).0;
            }
            state = kf_update(&state, &obs[k].bbox, noise)?;
        }
        Ok(state)
    }
}

impl MotionPredictor for KalmanPredictor {
    fn id(&self) -> &str {
        "kalman"
    }

    fn predict_next(&self, window: &Tracklet, ctx: &PredictContext<'_>) -> Result<Prediction> {
        let bbox = match ctx.kalman {
            Some(state) => kf_predict(state, &ctx.noise).1,
            None => kf_predict(&Self::filter_window(window, &ctx.noise)?, &ctx.noise).1,
        };
        Ok(Prediction::floor(bbox))
    }
}
