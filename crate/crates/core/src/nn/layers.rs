use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{Lstm, LstmCache};
use super::tensor::{gemm, Tensor};
use super::{sigmoid, Mode, StepKey};
use crate::error::{domain, Result};

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Lstm,
    BatchNorm,
    Dropout,
    Relu,
    Sigmoid,
    /// Fixed elementwise `(x - shift) / scale`; holds buffers, no trainable weights.
    Standardize,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Dense => 0,
            LayerKind::Lstm => 1,
            LayerKind::BatchNorm => 2,
            LayerKind::Dropout => 3,
            LayerKind::Relu => 4,
            LayerKind::Sigmoid => 5,
            LayerKind::Standardize => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Dense,
            1 => LayerKind::Lstm,
            2 => LayerKind::BatchNorm,
            3 => LayerKind::Dropout,
            4 => LayerKind::Relu,
            5 => LayerKind::Sigmoid,
            6 => LayerKind::Standardize,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Lstm => "lstm",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Dropout => "dropout",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Standardize => "standardize",
        }
    }
}

/// Architecture description of a layer, independent of its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// dense: `[in, out]`; lstm: `[in, hidden, layers]`; batchnorm and
    /// standardize: `[features]`; activations and dropout: `[]`.
    pub dims: Vec<usize>,
    /// Dropout rate or batchnorm momentum, zero otherwise.
    pub train_param: f64,
}

impl LayerSpec {
    /// Canonical text used for the checkpoint network hash.
    pub fn signature(&self) -> String {
        format!("{}{:?}@{}", self.kind.name(), self.dims, self.train_param)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform with variance `2 / fan_in`, for layers feeding a ReLU.
    He,
    /// Uniform with variance `2 / (fan_in + fan_out)`.
    Xavier,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, init: Init, rng: &mut ChaCha8Rng) -> Self {
        let limit = match init {
            Init::He => (6.0 / inputs as f64).sqrt(),
            Init::Xavier => (6.0 / (inputs + outputs) as f64).sqrt(),
            Init::Zeros => 0.0,
        };
        let weight = (0..inputs * outputs)
            .map(|_| {
                if limit > 0.0 {
                    rng.random_range(-limit..limit)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    /// `xW + b` without caching.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.inputs {
            return domain(format!(
                "dense layer expects [batch, {}], got {:?}",
                self.inputs,
                x.shape()
            ));
        }
        let b = x.rows();
        let mut out = Vec::with_capacity(b * self.outputs);
        for _ in 0..b {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            b,
            self.inputs,
            self.outputs,
            1.0,
            x.data(),
            false,
            &self.weight,
            false,
            1.0,
            &mut out,
        );
        Tensor::from_vec(&[b, self.outputs], out)
    }
}

/// Batch normalization over the batch dimension of `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub features: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BATCHNORM_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardize {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Lstm(Lstm),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Relu,
    Sigmoid,
    Standardize(Standardize),
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Dense {
        input: Tensor,
    },
    Lstm(Box<LstmCache>),
    BatchNorm {
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        mask: Option<Vec<f64>>,
    },
    Relu {
        active: Vec<bool>,
    },
    Sigmoid {
        output: Tensor,
    },
    Standardize,
}

impl Layer {
    pub fn dropout(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return domain(format!("dropout rate must lie in [0, 1), got {rate}"));
        }
        Ok(Layer::Dropout(Dropout { rate }))
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Lstm(_) => LayerKind::Lstm,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Standardize(_) => LayerKind::Standardize,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        let (dims, train_param) = match self {
            Layer::Dense(d) => (vec![d.inputs, d.outputs], 0.0),
            Layer::Lstm(l) => (vec![l.inputs, l.hidden, l.layers.len()], 0.0),
            Layer::BatchNorm(b) => (vec![b.features], b.momentum),
            Layer::Dropout(d) => (vec![], d.rate),
            Layer::Relu | Layer::Sigmoid => (vec![], 0.0),
            Layer::Standardize(s) => (vec![s.shift.len()], 0.0),
        };
        LayerSpec {
            kind: self.kind(),
            dims,
            train_param,
        }
    }

    /// Forward pass. In train mode batchnorm folds the batch statistics into
    /// its running estimates and dropout draws its mask from `key`.
    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        key: &StepKey,
        index: u64,
    ) -> Result<(Tensor, Cache)> {
        let (y, cache, stats) = self.compute(x, mode, key, index)?;
        if let (Layer::BatchNorm(bn), Some((mean, var))) = (self, stats) {
            let b = x.rows() as f64;
            let m = bn.momentum;
            for f in 0..bn.features {
                let unbiased = var[f] * b / (b - 1.0);
                bn.running_mean[f] = (1.0 - m) * bn.running_mean[f] + m * mean[f];
                bn.running_var[f] = (1.0 - m) * bn.running_var[f] + m * unbiased;
            }
        }
        Ok((y, cache))
    }

    /// Eval-mode forward without a cache; never mutates the layer.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x, Mode::Eval, &StepKey::default(), 0)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn compute(
        &self,
        x: &Tensor,
        mode: Mode,
        key: &StepKey,
        index: u64,
    ) -> Result<(Tensor, Cache, Option<(Vec<f64>, Vec<f64>)>)> {
        match self {
            Layer::Dense(d) => Ok((d.apply(x)?, Cache::Dense { input: x.clone() }, None)),
            Layer::Lstm(l) => {
                let (h, cache) = l.forward(x)?;
                Ok((h, Cache::Lstm(Box::new(cache)), None))
            }
            Layer::Relu => {
                let active: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                Ok((x.map(|v| v.max(0.0)), Cache::Relu { active }, None))
            }
            Layer::Sigmoid => {
                let y = x.map(sigmoid);
                Ok((y.clone(), Cache::Sigmoid { output: y }, None))
            }
            Layer::Dropout(d) => {
                if mode == Mode::Eval || d.rate == 0.0 {
                    return Ok((x.clone(), Cache::Dropout { mask: None }, None));
                }
                let mut rng = key.rng_for_layer(index);
                let keep = 1.0 - d.rate;
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut y = x.clone();
                for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                Ok((y, Cache::Dropout { mask: Some(mask) }, None))
            }
            Layer::BatchNorm(bn) => bn_compute(bn, x, mode),
            Layer::Standardize(s) => {
                if x.shape().len() != 2 || x.cols() != s.shift.len() {
                    return domain(format!(
                        "standardize expects [batch, {}], got {:?}",
                        s.shift.len(),
                        x.shape()
                    ));
                }
                let f = s.shift.len();
                let mut y = x.clone();
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v = (*v - s.shift[i % f]) / s.scale[i % f];
                }
                Ok((y, Cache::Standardize, None))
            }
        }
    }

    /// Reverse pass: gradient with respect to the input and to each
    /// parameter block, in [`Layer::params`] order.
    pub fn backward(&self, cache: &Cache, grad: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => {
                let b = input.rows();
                let mut dx = vec![0.0; b * d.inputs];
                gemm(
                    b,
                    d.outputs,
                    d.inputs,
                    1.0,
                    grad.data(),
                    false,
                    &d.weight,
                    true,
                    0.0,
                    &mut dx,
                );
                let mut dw = vec![0.0; d.inputs * d.outputs];
                gemm(
                    d.inputs,
                    b,
                    d.outputs,
                    1.0,
                    input.data(),
                    true,
                    grad.data(),
                    false,
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0; d.outputs];
                for r in 0..b {
                    for (acc, g) in db.iter_mut().zip(grad.row(r)) {
                        *acc += g;
                    }
                }
                Ok((Tensor::from_vec(input.shape(), dx)?, vec![dw, db]))
            }
            (Layer::Lstm(l), Cache::Lstm(c)) => l.backward(c, grad),
            (Layer::Relu, Cache::Relu { active }) => {
                let mut dx = grad.clone();
                for (g, &a) in dx.data_mut().iter_mut().zip(active) {
                    if !a {
                        *g = 0.0;
                    }
                }
                Ok((dx, vec![]))
            }
            (Layer::Sigmoid, Cache::Sigmoid { output }) => {
                let mut dx = grad.clone();
                for (g, &y) in dx.data_mut().iter_mut().zip(output.data()) {
                    *g *= y * (1.0 - y);
                }
                Ok((dx, vec![]))
            }
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                let mut dx = grad.clone();
                if let Some(mask) = mask {
                    for (g, m) in dx.data_mut().iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                Ok((dx, vec![]))
            }
            (
                Layer::BatchNorm(bn),
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => bn_backward(bn, xhat, inv_std, *batch_stats, grad),
            (Layer::Standardize(s), Cache::Standardize) => {
                let f = s.scale.len();
                let mut dx = grad.clone();
                for (i, g) in dx.data_mut().iter_mut().enumerate() {
                    *g /= s.scale[i % f];
                }
                Ok((dx, vec![]))
            }
            _ => domain("cache does not belong to this layer kind"),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Lstm(l) => l.params(),
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Lstm(l) => l.params_mut(),
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => vec![],
        }
    }

    /// Non-trainable state persisted in checkpoints.
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            Layer::Standardize(s) => vec![&s.shift, &s.scale],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            Layer::Standardize(s) => vec![&mut s.shift, &mut s.scale],
            _ => vec![],
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[allow(clippy::type_complexity)]
fn bn_compute(
    bn: &BatchNorm,
    x: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache, Option<(Vec<f64>, Vec<f64>)>)> {
    let f = bn.features;
    if x.shape().len() != 2 || x.cols() != f {
        return domain(format!(
            "batchnorm expects [batch, {f}], got {:?}",
            x.shape()
        ));
    }
    let b = x.rows();
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            if b < 2 {
                return domain("batchnorm needs at least two samples in train mode");
            }
            let mut mean = vec![0.0; f];
            for r in 0..b {
                for (m, v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= b as f64);
            let mut var = vec![0.0; f];
            for r in 0..b {
                for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s /= b as f64);
            (mean, var, true)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone(), false),
    };
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt())
        .collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for (i, (h, o)) in xhat.data_mut().iter_mut().zip(y.data_mut()).enumerate() {
        let c = i % f;
        *h = (*h - mean[c]) * inv_std[c];
        *o = bn.gamma[c] * *h + bn.beta[c];
    }
    let stats = batch_stats.then_some((mean, var));
    Ok((
        y,
        Cache::BatchNorm {
            xhat,
            inv_std,
            batch_stats,
        },
        stats,
    ))
}

fn bn_backward(
    bn: &BatchNorm,
    xhat: &Tensor,
    inv_std: &[f64],
    batch_stats: bool,
    grad: &Tensor,
) -> Result<(Tensor, Vec<Vec<f64>>)> {
    let f = bn.features;
    let b = xhat.rows();
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    for r in 0..b {
        for c in 0..f {
            let g = grad.row(r)[c];
            dgamma[c] += g * xhat.row(r)[c];
            dbeta[c] += g;
        }
    }
    let mut dx = grad.clone();
    let n = b as f64;
    for r in 0..b {
        for c in 0..f {
            let i = r * f + c;
            let dxhat = grad.data()[i] * bn.gamma[c];
            dx.data_mut()[i] = if batch_stats {
                // d/dx of the batch-normalized output, with mean and variance
                // depending on every sample in the batch.
                inv_std[c] / n
                    * (n * dxhat
                        - bn.gamma[c] * dbeta[c]
                        - xhat.data()[i] * bn.gamma[c] * dgamma[c])
            } else {
                dxhat * inv_std[c]
            };
        }
    }
    Ok((dx, vec![dgamma, dbeta]))
}
