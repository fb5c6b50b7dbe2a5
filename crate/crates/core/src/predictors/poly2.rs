use nalgebra::{Matrix3, Vector3};

use super::{MotionPredictor, PredictContext, Prediction};
use crate::error::{domain, Result};
use crate::geometry::{BBox, Tracklet};

/// Per-coordinate least-squares quadratic in the frame index, evaluated one
/// frame past the end of the window.
#[derive(Debug, Clone, Copy, Default)]
pub struct Poly2Predictor;

/// Quadratic extrapolation over the observed (non-padded) frames. Falls back
/// to a line with two distinct frames and to the last box with one.
pub fn poly2_extrapolate(window: &Tracklet) -> Result<BBox> {
    let (frames, obs) = window.observed();
    let Some(&last_frame) = frames.last() else {
        return domain("tracklet has no observed boxes");
    };
    let mut distinct = frames.to_vec();
    distinct.dedup();
    let degree = (distinct.len().saturating_sub(1)).min(2);
    // Frame offsets relative to the last frame keep the normal equations
    // well conditioned for large absolute frame numbers.
    let ts: Vec<f64> = frames.iter().map(|&f| (f - last_frame) as f64).collect();
    let coords: Vec<[f64; 4]> = obs.iter().map(|o| o.bbox.to_array()).collect();
    let mut out = [0.0; 4];
    for (c, slot) in out.iter_mut().enumerate() {
        let ys: Vec<f64> = coords.iter().map(|v| v[c]).collect();
        *slot = fit_and_eval(&ts, &ys, degree, 1.0);
    }
    Ok(BBox::from_array(out))
}

fn fit_and_eval(ts: &[f64], ys: &[f64], degree: usize, at: f64) -> f64 {
    let n = degree + 1;
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&t, &y) in ts.iter().zip(ys) {
        let basis = [1.0, t, t * t];
        for i in 0..n {
            aty[i] += basis[i] * y;
            for j in 0..n {
                ata[(i, j)] += basis[i] * basis[j];
            }
        }
    }
    let coef: Vec<f64> = match n {
        1 => vec![aty[0] / ata[(0, 0)]],
        2 => {
            let m = ata.fixed_view::<2, 2>(0, 0).into_owned();
            let rhs = aty.fixed_rows::<2>(0).into_owned();
            match m.lu().solve(&rhs) {
                Some(s) => s.iter().copied().collect(),
                None => return ys[ys.len() - 1],
            }
        }
        _ => match ata.lu().solve(&aty) {
            Some(s) => s.iter().copied().collect(),
            None => return fit_and_eval(ts, ys, 1, at),
        },
    };
    coef.iter()
        .zip([1.0, at, at * at])
        .map(|(c, b)| c * b)
        .sum()
}

impl MotionPredictor for Poly2Predictor {
    fn id(&self) -> &str {
        "poly2"
    }

    fn predict_next(&self, window: &Tracklet, _ctx: &PredictContext<'_>) -> Result<Prediction> {
        Ok(Prediction::floor(poly2_extrapolate(window)?))
    }
}
