//! Adaptive blending generator and the element-wise blend of the two
//! predictor boxes.

use rand_chacha::ChaCha8Rng;

use crate::cme::FEATURE_DIM;
use crate::error::{domain, Result};
use crate::geometry::BBox;
use crate::nn::{
    BatchNorm, Dense, Init, Layer, Mode, Module, Sequential, SequentialCache, StepKey, Tensor,
};

/// Per-coordinate weight on the Kalman box, `(alpha_x, alpha_y, alpha_w, alpha_h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendFactors {
    pub alpha: [f64; 4],
}

impl BlendFactors {
    pub fn new(alpha: [f64; 4]) -> Result<Self> {
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return domain(format!("blend factors must lie in [0, 1], got {alpha:?}"));
        }
        Ok(Self { alpha })
    }

    pub fn uniform(a: f64) -> Result<Self> {
        Self::new([a; 4])
    }
}

/// `alpha * kf + (1 - alpha) * dp`, coordinate by coordinate.
pub fn blend_predictions(alpha: &BlendFactors, kf_pred: &BBox, dp_pred: &BBox) -> BBox {
    BBox::from_array(blend_arrays(
        &alpha.alpha,
        &kf_pred.to_array(),
        &dp_pred.to_array(),
    ))
}

pub fn blend_arrays(alpha: &[f64; 4], kf: &[f64; 4], dp: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| {
        // Written so that alpha = 1 and alpha = 0 reproduce the inputs exactly.
        if alpha[i] == 1.0 {
            kf[i]
        } else if alpha[i] == 0.0 {
            dp[i]
        } else {
            let v = dp[i] + alpha[i] * (kf[i] - dp[i]);
            v.clamp(kf[i].min(dp[i]), kf[i].max(dp[i]))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abg {
    pub net: Sequential,
}

impl Abg {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let layers = vec![
            Layer::Dense(Dense::new(FEATURE_DIM, 256, Init::He, rng)),
            Layer::Relu,
            Layer::BatchNorm(BatchNorm::new(256)),
            Layer::dropout(0.15).expect("valid rate"),
            Layer::Dense(Dense::new(256, 128, Init::He, rng)),
            Layer::Relu,
            Layer::BatchNorm(BatchNorm::new(128)),
            Layer::dropout(0.1).expect("valid rate"),
            Layer::Dense(Dense::new(128, 4, Init::Xavier, rng)),
            Layer::Sigmoid,
        ];
        Self {
            net: Sequential::new("abg", layers, 40),
        }
    }

    pub fn forward(
        &mut self,
        f_mult: &Tensor,
        mode: Mode,
        key: &StepKey,
    ) -> Result<(Tensor, SequentialCache)> {
        if f_mult.cols() != FEATURE_DIM {
            return domain(format!("blend generator expects {FEATURE_DIM} features"));
        }
        self.net.forward(f_mult, mode, key)
    }

    pub fn infer(&self, f_mult: &Tensor) -> Result<Tensor> {
        if f_mult.cols() != FEATURE_DIM {
            return domain(format!("blend generator expects {FEATURE_DIM} features"));
        }
        self.net.infer(f_mult)
    }

    /// Eval-mode blend factors for a single feature vector.
    pub fn abg_forward(&self, f_mult: &[f64]) -> Result<BlendFactors> {
        let out = self.infer(&Tensor::from_vec(&[1, f_mult.len()], f_mult.to_vec())?)?;
        let d = out.data();
        Ok(BlendFactors {
            alpha: [d[0], d[1], d[2], d[3]],
        })
    }

    /// The final dense layer, which maps to the sigmoid logits.
    pub fn head_mut(&mut self) -> &mut Dense {
        match &mut self.net.layers[8] {
            Layer::Dense(d) => d,
            _ => unreachable!("layer 8 of the blend generator is dense"),
        }
    }
}

impl Module for Abg {
    fn named_layers(&self) -> Vec<(String, &Layer)> {
        self.net.named_layers()
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut Layer)> {
        self.net.named_layers_mut()
    }
}
