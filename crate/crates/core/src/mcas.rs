//! Monte Carlo alpha search: noisy candidate grids, candidate scoring and the
//! combined training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::abg::blend_arrays;
use crate::error::{domain, Result};
use crate::geometry::{giou_loss_grad, smooth_l1_grad, BBox};
use crate::nn::mix;

pub const DEFAULT_LAMBDA1: f64 = 0.3;
pub const DEFAULT_LAMBDA2: f64 = 0.7;
pub const DEFAULT_GRID_STEPS: usize = 5;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

const NOISE_STREAM: u64 = 0x6d63_6173_6e6f_6973;

/// Full four-way Cartesian product of evenly spaced blend values, in
/// lexicographic order with the `alpha_h` coordinate varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid {
    pub lambda1: f64,
    pub lambda2: f64,
    pub steps: usize,
    pub base: Vec<[f64; 4]>,
}

pub fn build_grid(lambda1: f64, lambda2: f64, steps: usize) -> Result<AlphaGrid> {
    if !(0.0 <= lambda1 && lambda1 < lambda2 && lambda2 <= 1.0) {
        return domain(format!(
            "alpha range must satisfy 0 <= lambda1 < lambda2 <= 1, got ({lambda1}, {lambda2})"
        ));
    }
    if steps < 2 {
        return domain(format!("grid needs at least 2 steps, got {steps}"));
    }
    let values: Vec<f64> = (0..steps)
        .map(|i| {
            if i + 1 == steps {
                lambda2
            } else {
                lambda1 + (lambda2 - lambda1) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut base = Vec::with_capacity(steps.pow(4));
    for &a in &values {
        for &b in &values {
            for &c in &values {
                for &d in &values {
                    base.push([a, b, c, d]);
                }
            }
        }
    }
    Ok(AlphaGrid {
        lambda1,
        lambda2,
        steps,
        base,
    })
}

/// Adds independent `N(0, noise_std^2)` noise to every coordinate of every
/// candidate and clamps to `[0, 1]`.
pub fn perturb_grid(
    grid: &AlphaGrid,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 4]>> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return domain(format!("noise std must be non-negative, got {noise_std}"));
    }
    if noise_std == 0.0 {
        return Ok(grid.base.clone());
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| crate::Error::Domain(e.to_string()))?;
    Ok(grid
        .base
        .iter()
        .map(|a| std::array::from_fn(|i| (a[i] + normal.sample(rng)).clamp(0.0, 1.0)))
        .collect())
}

/// The noise stream for one `(seed, epoch, batch)` triple; a sample index
/// may be appended for per-sample grids.
pub fn noise_rng(seed: u64, epoch: u64, batch: u64, sample: Option<u64>) -> ChaCha8Rng {
    let words = match sample {
        Some(s) => vec![NOISE_STREAM, seed, epoch, batch, s],
        None => vec![NOISE_STREAM, seed, epoch, batch],
    };
    ChaCha8Rng::seed_from_u64(mix(&words))
}

/// Smooth-L1 plus GIoU loss of the blended box against the ground truth.
pub fn score_candidate(
    alpha: &[f64; 4],
    kf_pred: &[f64; 4],
    dp_pred: &[f64; 4],
    gt: &[f64; 4],
) -> f64 {
    let blended = blend_arrays(alpha, kf_pred, dp_pred);
    let (l1, _) = smooth_l1_grad(&blended, gt);
    let (g, _) = giou_loss_grad(&BBox::from_array(blended), &BBox::from_array(*gt));
    l1 + g
}

/// Exhaustive argmin over `candidates`; the lowest index wins ties.
/// Returns the winning candidate, its index and its score.
pub fn select_alpha_star(
    candidates: &[[f64; 4]],
    kf_pred: &[f64; 4],
    dp_pred: &[f64; 4],
    gt: &[f64; 4],
) -> Result<([f64; 4], usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = score_candidate(c, kf_pred, dp_pred, gt);
        if !s.is_finite() {
            return Err(crate::Error::Numerical(format!("candidate {i} scored {s}")));
        }
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    match best {
        Some((i, s)) => Ok((candidates[i], i, s)),
        None => domain("candidate list is empty"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub smooth_l1: f64,
    pub giou: f64,
    pub mcas: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(smooth_l1: f64, giou: f64, mcas: f64) -> Self {
        Self {
            smooth_l1,
            giou,
            mcas,
            total: smooth_l1 + giou + mcas,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// One sample's loss terms and the gradient of their sum with respect to
/// the predicted blend factors.
pub fn sample_loss(
    predicted_alpha: &[f64; 4],
    alpha_star: &[f64; 4],
    kf_pred: &[f64; 4],
    dp_pred: &[f64; 4],
    gt: &[f64; 4],
) -> (LossBreakdown, [f64; 4]) {
    let blended = blend_arrays(predicted_alpha, kf_pred, dp_pred);
    let (l1, g_l1) = smooth_l1_grad(&blended, gt);
    let (giou, g_giou) = giou_loss_grad(&BBox::from_array(blended), &BBox::from_array(*gt));
    let mut mse = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let r = predicted_alpha[i] - alpha_star[i];
        mse += r * r / 4.0;
        grad[i] = (g_l1[i] + g_giou[i]) * (kf_pred[i] - dp_pred[i]) + r / 2.0;
    }
    (LossBreakdown::new(l1, giou, mse), grad)
}

/// Loss breakdown for a single sample.
pub fn compute_losses(
    predicted_alpha: &[f64; 4],
    alpha_star: &[f64; 4],
    kf_pred: &[f64; 4],
    dp_pred: &[f64; 4],
    gt: &[f64; 4],
) -> LossBreakdown {
    sample_loss(predicted_alpha, alpha_star, kf_pred, dp_pred, gt).0
}
