//! Contextual motion encoder: an LSTM over the recent tracklet, two small
//! MLPs over the predictor discrepancy and the Kalman uncertainty, and a
//! fusion MLP producing one 128-dim motion feature per sample.

use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};
use crate::geometry::{normalize_box, BBox, Tracklet, TRACKLET_LEN};
use crate::nn::{
    Dense, Init, Layer, Lstm, Mode, Module, Sequential, SequentialCache, StepKey, Tensor,
};

pub const OBS_DIM: usize = 8;
pub const HIDDEN: usize = 128;
pub const LSTM_LAYERS: usize = 2;
pub const BRANCH_DIM: usize = 32;
pub const FEATURE_DIM: usize = 128;
pub const FUSION_INPUT: usize = HIDDEN + 2 * BRANCH_DIM;

/// Per-sample encoder input, all in image-normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct CmeInputs {
    /// Windowed tracklet rows `(cx, cy, w, h, dx, dy, dw, dh)`, oldest first.
    pub tracklet: [[f64; OBS_DIM]; TRACKLET_LEN],
    pub kf_pred: [f64; 4],
    pub dp_pred: [f64; 4],
    pub sigma_kf: [f64; 4],
}

impl CmeInputs {
    /// Builds inputs from pixel-space boxes. `window` must already hold
    /// exactly [`TRACKLET_LEN`] observations.
    pub fn from_pixels(
        window: &Tracklet,
        kf_pred: &BBox,
        dp_pred: &BBox,
        sigma_kf: [f64; 4],
        img_w: f64,
        img_h: f64,
    ) -> Result<Self> {
        if window.len() != TRACKLET_LEN {
            return domain(format!(
                "tracklet must hold {TRACKLET_LEN} observations, got {}",
                window.len()
            ));
        }
        if sigma_kf.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return domain(format!(
                "uncertainty must be non-negative, got {sigma_kf:?}"
            ));
        }
        let mut tracklet = [[0.0; OBS_DIM]; TRACKLET_LEN];
        for (row, obs) in tracklet.iter_mut().zip(&window.observations) {
            *row = obs.normalized(img_w, img_h);
        }
        Ok(Self {
            tracklet,
            kf_pred: normalize_box(kf_pred, img_w, img_h)?,
            dp_pred: normalize_box(dp_pred, img_w, img_h)?,
            sigma_kf,
        })
    }

    pub fn discrepancy(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.kf_pred[i] - self.dp_pred[i])
    }
}

/// Encoder inputs stacked for a batch.
#[derive(Debug, Clone)]
pub struct CmeBatch {
    pub tracklets: Tensor,
    pub discrepancy: Tensor,
    pub sigma: Tensor,
}

impl CmeBatch {
    pub fn new(samples: &[&CmeInputs]) -> Result<Self> {
        if samples.is_empty() {
            return domain("empty batch");
        }
        let b = samples.len();
        let mut seq = Vec::with_capacity(b * TRACKLET_LEN * OBS_DIM);
        let mut disc = Vec::with_capacity(b * 4);
        let mut sigma = Vec::with_capacity(b * 4);
        for s in samples {
            for row in &s.tracklet {
                seq.extend_from_slice(row);
            }
            disc.extend_from_slice(&s.discrepancy());
            sigma.extend_from_slice(&s.sigma_kf);
        }
        Ok(Self {
            tracklets: Tensor::from_vec(&[b, TRACKLET_LEN, OBS_DIM], seq)?,
            discrepancy: Tensor::from_vec(&[b, 4], disc)?,
            sigma: Tensor::from_vec(&[b, 4], sigma)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tracklets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The 128-dim fused feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPerceptiveFeature {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cme {
    pub mpm: Sequential,
    pub pdm: Sequential,
    pub uqm: Sequential,
    pub fusion: Sequential,
}

#[derive(Debug, Clone)]
pub struct CmeCache {
    mpm: SequentialCache,
    pdm: SequentialCache,
    uqm: SequentialCache,
    fusion: SequentialCache,
}

/// `in -> a -> b -> out`, ReLU after every layer and one dropout after the first.
pub(crate) fn three_layer_mlp(
    name: &str,
    dims: [usize; 4],
    dropout: f64,
    key_offset: u64,
    rng: &mut ChaCha8Rng,
) -> Sequential {
    let layers = vec![
        Layer::Dense(Dense::new(dims[0], dims[1], Init::He, rng)),
        Layer::Relu,
        Layer::dropout(dropout).expect("dropout rate is a valid constant"),
        Layer::Dense(Dense::new(dims[1], dims[2], Init::He, rng)),
        Layer::Relu,
        Layer::Dense(Dense::new(dims[2], dims[3], Init::He, rng)),
        Layer::Relu,
    ];
    Sequential::new(name, layers, key_offset)
}

impl Cme {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            mpm: Sequential::new(
                "mpm",
                vec![Layer::Lstm(Lstm::new(OBS_DIM, HIDDEN, LSTM_LAYERS, rng))],
                0,
            ),
            pdm: three_layer_mlp("pdm", [4, 64, 128, BRANCH_DIM], 0.1, 10, rng),
            uqm: three_layer_mlp("uqm", [4, 64, 128, BRANCH_DIM], 0.1, 20, rng),
            fusion: three_layer_mlp(
                "fusion",
                [FUSION_INPUT, 256, 512, FEATURE_DIM],
                0.1,
                30,
                rng,
            ),
        }
    }

    pub fn mpm_encode(&self, tracklet: &[[f64; OBS_DIM]]) -> Result<Vec<f64>> {
        if tracklet.len() != TRACKLET_LEN {
            return domain(format!(
                "tracklet must hold {TRACKLET_LEN} observations, got {}",
                tracklet.len()
            ));
        }
        let x = Tensor::from_vec(&[1, TRACKLET_LEN, OBS_DIM], tracklet.concat())?;
        Ok(self.mpm.infer(&x)?.into_data())
    }

    pub fn pdm_encode(&self, kf_pred: &[f64; 4], dp_pred: &[f64; 4]) -> Result<Vec<f64>> {
        let disc: Vec<f64> = (0..4).map(|i| kf_pred[i] - dp_pred[i]).collect();
        Ok(self
            .pdm
            .infer(&Tensor::from_vec(&[1, 4], disc)?)?
            .into_data())
    }

    pub fn uqm_encode(&self, sigma_kf: &[f64; 4]) -> Result<Vec<f64>> {
        Ok(self
            .uqm
            .infer(&Tensor::from_vec(&[1, 4], sigma_kf.to_vec())?)?
            .into_data())
    }

    pub fn fuse_features(
        &self,
        f_mpm: &[f64],
        f_pdm: &[f64],
        f_uqm: &[f64],
    ) -> Result<MultiPerceptiveFeature> {
        if f_mpm.len() != HIDDEN || f_pdm.len() != BRANCH_DIM || f_uqm.len() != BRANCH_DIM {
            return domain(format!(
                "fusion expects {HIDDEN}/{BRANCH_DIM}/{BRANCH_DIM} features, got {}/{}/{}",
                f_mpm.len(),
                f_pdm.len(),
                f_uqm.len()
            ));
        }
        let x = Tensor::from_vec(&[1, FUSION_INPUT], [f_mpm, f_pdm, f_uqm].concat())?;
        Ok(MultiPerceptiveFeature {
            values: self.fusion.infer(&x)?.into_data(),
        })
    }

    pub fn forward(
        &mut self,
        batch: &CmeBatch,
        mode: Mode,
        key: &StepKey,
    ) -> Result<(Tensor, CmeCache)> {
        let (f_mpm, mpm) = self.mpm.forward(&batch.tracklets, mode, key)?;
        let (f_pdm, pdm) = self.pdm.forward(&batch.discrepancy, mode, key)?;
        let (f_uqm, uqm) = self.uqm.forward(&batch.sigma, mode, key)?;
        let joined = concat_cols(&[&f_mpm, &f_pdm, &f_uqm])?;
        let (f, fusion) = self.fusion.forward(&joined, mode, key)?;
        Ok((
            f,
            CmeCache {
                mpm,
                pdm,
                uqm,
                fusion,
            },
        ))
    }

    pub fn infer(&self, batch: &CmeBatch) -> Result<Tensor> {
        let f_mpm = self.mpm.infer(&batch.tracklets)?;
        let f_pdm = self.pdm.infer(&batch.discrepancy)?;
        let f_uqm = self.uqm.infer(&batch.sigma)?;
        self.fusion.infer(&concat_cols(&[&f_mpm, &f_pdm, &f_uqm])?)
    }

    /// Parameter gradients in [`Module::params`] order.
    pub fn backward(&self, cache: &CmeCache, grad: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (d_joined, g_fusion) = self.fusion.backward(&cache.fusion, grad)?;
        let parts = split_cols(&d_joined, &[HIDDEN, BRANCH_DIM, BRANCH_DIM])?;
        let (_, g_mpm) = self.mpm.backward(&cache.mpm, &parts[0])?;
        let (_, g_pdm) = self.pdm.backward(&cache.pdm, &parts[1])?;
        let (_, g_uqm) = self.uqm.backward(&cache.uqm, &parts[2])?;
        Ok([g_mpm, g_pdm, g_uqm, g_fusion].concat())
    }
}

impl Module for Cme {
    fn named_layers(&self) -> Vec<(String, &Layer)> {
        [&self.mpm, &self.pdm, &self.uqm, &self.fusion]
            .into_iter()
            .flat_map(|s| s.named_layers())
            .collect()
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut Layer)> {
        let mut out = self.mpm.named_layers_mut();
        out.extend(self.pdm.named_layers_mut());
        out.extend(self.uqm.named_layers_mut());
        out.extend(self.fusion.named_layers_mut());
        out
    }
}

pub(crate) fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts[0].rows();
    if parts.iter().any(|p| p.rows() != rows) {
        return domain("concatenated tensors differ in batch size");
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::from_vec(&[rows, width], data)
}

pub(crate) fn split_cols(t: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    if widths.iter().sum::<usize>() != t.cols() {
        return domain("split widths do not cover the tensor");
    }
    let rows = t.rows();
    let mut out: Vec<Vec<f64>> = widths
        .iter()
        .map(|w| Vec::with_capacity(rows * w))
        .collect();
    for r in 0..rows {
        let row = t.row(r);
        let mut start = 0;
        for (buf, w) in out.iter_mut().zip(widths) {
            buf.extend_from_slice(&row[start..start + w]);
            start += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::from_vec(&[rows, w], d))
        .collect()
}
