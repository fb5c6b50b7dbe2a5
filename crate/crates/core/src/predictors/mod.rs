//! One-frame-ahead motion predictors behind a common trait, selectable by
//! name through [`PredictorRegistry`].

mod kalman;
mod mlp;
mod oracle;
mod poly2;
mod registry;

pub use kalman::KalmanPredictor;
pub use mlp::{mlp_features, MlpPredictor, MlpSample, MlpTrainConfig, MLP_INPUT};
pub use oracle::OraclePredictor;
pub use poly2::{poly2_extrapolate, Poly2Predictor};
pub use registry::{PredictorFactory, PredictorOptions, PredictorRegistry};

use crate::geometry::{BBox, Tracklet};
use crate::kalman::{KalmanState, NoiseConfig};
use crate::Result;

/// Smallest width or height a prediction may have, in pixels.
pub const MIN_PREDICTED_SIZE: f64 = 1.0;

/// Side information a predictor may use besides the tracklet.
#[derive(Debug, Clone, Copy)]
pub struct PredictContext<'a> {
    /// The track's filter state after its latest update, if it has one.
    pub kalman: Option<&'a KalmanState>,
    pub noise: NoiseConfig,
    pub img_w: f64,
    pub img_h: f64,
    /// The true next box; only the oracle reads it.
    pub gt_next: Option<BBox>,
}

impl<'a> PredictContext<'a> {
    pub fn new(img_w: f64, img_h: f64) -> Self {
        Self {
            kalman: None,
            noise: NoiseConfig::default(),
            img_w,
            img_h,
            gt_next: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub bbox: BBox,
    /// Set when a degenerate width or height was raised to the minimum size.
    pub floored: bool,
}

impl Prediction {
    pub fn floor(bbox: BBox) -> Self {
        let floored = !(bbox.w >= MIN_PREDICTED_SIZE && bbox.h >= MIN_PREDICTED_SIZE);
        let fix = |v: f64| {
            if v >= MIN_PREDICTED_SIZE {
                v
            } else {
                MIN_PREDICTED_SIZE
            }
        };
        Self {
            bbox: BBox::new(bbox.cx, bbox.cy, fix(bbox.w), fix(bbox.h)),
            floored,
        }
    }
}

pub trait MotionPredictor: Send + Sync {
    fn id(&self) -> &str;

    /// Box for the frame after the tracklet's last frame.
    fn predict_next(&self, window: &Tracklet, ctx: &PredictContext<'_>) -> Result<Prediction>;
}
