use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MotionPredictor, PredictContext, Prediction};
use crate::error::{domain, Error, Result};
use crate::geometry::{smooth_l1_grad, BBox, Tracklet, TRACKLET_LEN};
use crate::nn::{
    checkpoint, mix, AdamState, Dense, Init, Layer, Mode, Module, Sequential, Standardize, StepKey,
    Tensor,
};
use crate::train::epoch_batches;

pub const MLP_INPUT: usize = TRACKLET_LEN * 8;
const HIDDEN: usize = 128;
const INIT_STREAM: u64 = 0x6d6c_7070_7265_6400;

/// A window flattened relative to its last box, and the next-box delta,
/// both divided by the image size.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSample {
    pub features: [f64; MLP_INPUT],
    pub target: [f64; 4],
}

impl MlpSample {
    pub fn new(window: &Tracklet, gt_next: &BBox, img_w: f64, img_h: f64) -> Result<Self> {
        let features = mlp_features(window, img_w, img_h)?;
        let last = window.last_box().expect("window is non-empty");
        let s = [img_w, img_h, img_w, img_h];
        let (g, l) = (gt_next.to_array(), last.to_array());
        Ok(Self {
            features,
            target: std::array::from_fn(|i| (g[i] - l[i]) / s[i]),
        })
    }
}

/// Flattened `(box - last box, deltas)` rows of a full-length window, scaled
/// by the image size.
pub fn mlp_features(window: &Tracklet, img_w: f64, img_h: f64) -> Result<[f64; MLP_INPUT]> {
    if window.len() != TRACKLET_LEN {
        return domain(format!(
            "mlp predictor needs a {TRACKLET_LEN}-frame window, got {}",
            window.len()
        ));
    }
    if !(img_w > 0.0 && img_h > 0.0) {
        return domain("image size must be positive");
    }
    let last = window.last_box().expect("window is non-empty").to_array();
    let s = [img_w, img_h, img_w, img_h];
    let mut out = [0.0; MLP_INPUT];
    for (k, obs) in window.observations.iter().enumerate() {
        let v = obs.to_array();
        for i in 0..4 {
            out[k * 8 + i] = (v[i] - last[i]) / s[i];
            out[k * 8 + 4 + i] = v[4 + i] / s[i];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 0.001,
            batch_size: 256,
            epochs: 50,
        }
    }
}

/// Residual MLP: `40 -> 128 -> 128 -> 4` with ReLU, predicting the
/// standardized next-box delta. Input standardization and output scaling are
/// stored as fixed layers so a checkpoint is self-contained.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MlpPredictor {
    net: Option<Sequential>,
}

fn build(seed: u64, shift: Vec<f64>, scale: Vec<f64>, out_scale: Vec<f64>) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, INIT_STREAM]));
    Sequential::new(
        "mlp",
        vec![
            Layer::Standardize(Standardize { shift, scale }),
            Layer::Dense(Dense::new(MLP_INPUT, HIDDEN, Init::He, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::new(HIDDEN, HIDDEN, Init::He, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::new(HIDDEN, 4, Init::Xavier, &mut rng)),
            // Inverse of the target standardization: y * s.
            Layer::Standardize(Standardize {
                shift: vec![0.0; 4],
                scale: out_scale.iter().map(|s| 1.0 / s).collect(),
            }),
        ],
        0,
    )
}

fn mean_std(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = rows.collect();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in &rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std = var
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

impl MlpPredictor {
    pub fn untrained() -> Self {
        Self { net: None }
    }

    /// Network with the given weights layout but no training; all-zero
    /// weights make it predict the last box.
    pub fn with_network(net: Sequential) -> Self {
        Self { net: Some(net) }
    }

    pub fn network(&self) -> Option<&Sequential> {
        self.net.as_ref()
    }

    pub fn network_mut(&mut self) -> Option<&mut Sequential> {
        self.net.as_mut()
    }

    /// Untrained-weights skeleton with identity standardization.
    pub fn skeleton(seed: u64) -> Self {
        Self::with_network(build(
            seed,
            vec![0.0; MLP_INPUT],
            vec![1.0; MLP_INPUT],
            vec![1.0; 4],
        ))
    }

    pub fn train(samples: &[MlpSample], cfg: &MlpTrainConfig) -> Result<Self> {
        if samples.is_empty() {
            return domain("mlp predictor needs training samples");
        }
        if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
            return domain(format!("invalid mlp training config {cfg:?}"));
        }
        let (shift, scale) = mean_std(samples.iter().map(|s| s.features.to_vec()), MLP_INPUT);
        let (_, out_scale) = mean_std(samples.iter().map(|s| s.target.to_vec()), 4);
        let mut net = build(cfg.seed, shift, scale, out_scale.clone());
        let head = net.layers.pop().expect("output scaling layer");
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        let mut adam = AdamState::new(cfg.lr, &sizes)?;
        for epoch in 0..cfg.epochs {
            for (bi, idx) in epoch_batches(samples.len(), cfg.batch_size, cfg.seed, epoch as u64)
                .into_iter()
                .enumerate()
            {
                let b = idx.len();
                let mut x = Vec::with_capacity(b * MLP_INPUT);
                for &i in &idx {
                    x.extend_from_slice(&samples[i].features);
                }
                let x = Tensor::from_vec(&[b, MLP_INPUT], x)?;
                let key = StepKey::new(cfg.seed, epoch as u64, bi as u64);
                let (y, cache) = net.forward(&x, Mode::Train, &key)?;
                let mut grad = Vec::with_capacity(b * 4);
                let mut loss = 0.0;
                for (r, &i) in idx.iter().enumerate() {
                    let p = y.row(r);
                    let t = samples[i].target;
                    let target: [f64; 4] = std::array::from_fn(|k| t[k] / out_scale[k]);
                    let (l, g) = smooth_l1_grad(&[p[0], p[1], p[2], p[3]], &target);
                    loss += l;
                    grad.extend(g.iter().map(|v| v / b as f64));
                }
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite mlp loss in epoch {epoch}, batch {bi}"
                    )));
                }
                let (_, grads) = net.backward(&cache, &Tensor::from_vec(&[b, 4], grad)?)?;
                adam.update(net.params_mut(), &grads)?;
            }
        }
        net.layers.push(head);
        Ok(Self { net: Some(net) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match &self.net {
            Some(net) => checkpoint::save(net, path),
            None => Err(Error::Usage(
                "cannot save an untrained mlp predictor".into(),
            )),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut p = Self::skeleton(0);
        checkpoint::load(p.net.as_mut().expect("skeleton has a network"), path)?;
        Ok(p)
    }

    /// Predicted next boxes for a batch of full-length windows.
    pub fn predict_batch(
        &self,
        windows: &[&Tracklet],
        img_w: f64,
        img_h: f64,
    ) -> Result<Vec<BBox>> {
        let Some(net) = &self.net else {
            return Err(Error::Usage("mlp predictor has not been trained".into()));
        };
        if windows.is_empty() {
            return Ok(vec![]);
        }
        let mut x = Vec::with_capacity(windows.len() * MLP_INPUT);
        for w in windows {
            x.extend_from_slice(&mlp_features(w, img_w, img_h)?);
        }
        let y = net.infer(&Tensor::from_vec(&[windows.len(), MLP_INPUT], x)?)?;
        let s = [img_w, img_h, img_w, img_h];
        Ok(windows
            .iter()
            .enumerate()
            .map(|(r, w)| {
                let last = w.last_box().expect("window is non-empty").to_array();
                let d = y.row(r);
                BBox::from_array(std::array::from_fn(|i| last[i] + d[i] * s[i]))
            })
            .collect())
    }
}

impl MotionPredictor for MlpPredictor {
    fn id(&self) -> &str {
        "mlp"
    }

    fn predict_next(&self, window: &Tracklet, ctx: &PredictContext<'_>) -> Result<Prediction> {
        let window = window.to_window(TRACKLET_LEN)?;
        let b = self.predict_batch(&[&window], ctx.img_w, ctx.img_h)?[0];
        Ok(Prediction::floor(b))
    }
}
