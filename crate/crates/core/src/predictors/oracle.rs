use super::{MotionPredictor, PredictContext, Prediction};
use crate::error::{Error, Result};
use crate::geometry::Tracklet;

/// Returns the ground-truth next box. For tests and upper-bound analyses.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl MotionPredictor for OraclePredictor {
    fn id(&self) -> &str {
        "oracle"
    }

    fn predict_next(&self, _window: &Tracklet, ctx: &PredictContext<'_>) -> Result<Prediction> {
        match ctx.gt_next {
            Some(b) => Ok(Prediction::floor(b)),
            None => Err(Error::Usage(
                "the oracle predictor needs the ground-truth next box".into(),
            )),
        }
    }
}
