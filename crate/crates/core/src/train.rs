//! End-to-end training of the fusion network with MCAS supervision.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cme::{CmeBatch, CmeInputs};
use crate::error::{domain, Error, Result};
use crate::geometry::TRACKLET_LEN;
use crate::kalman::NIS_WINDOW;
use crate::mcas::{self, build_grid, perturb_grid, select_alpha_star, LossBreakdown};
use crate::network::PlugNet;
use crate::nn::{mix, AdamState, Mode, Module, StepKey, Tensor};

const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_6500;

/// One supervised example: encoder inputs plus the normalized true next box.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: CmeInputs,
    pub gt: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub grid_steps: usize,
    pub noise_std: f64,
    pub window_w: usize,
    pub tracklet_len: usize,
    /// Draw a fresh noisy grid for every sample instead of once per batch.
    pub per_sample_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 0.001,
            batch_size: 256,
            epochs: 50,
            lambda1: mcas::DEFAULT_LAMBDA1,
            lambda2: mcas::DEFAULT_LAMBDA2,
            grid_steps: mcas::DEFAULT_GRID_STEPS,
            noise_std: mcas::DEFAULT_NOISE_STD,
            window_w: NIS_WINDOW,
            tracklet_len: TRACKLET_LEN,
            per_sample_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return domain(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return domain("batch_size must be at least 2 for batch normalization");
        }
        if self.epochs == 0 {
            return domain("epochs must be positive");
        }
        if self.window_w == 0 {
            return domain("window_w must be positive");
        }
        if self.tracklet_len != TRACKLET_LEN {
            return domain(format!(
                "the encoder is built for tracklet_len {TRACKLET_LEN}, got {}",
                self.tracklet_len
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return domain("noise_std must be non-negative");
        }
        build_grid(self.lambda1, self.lambda2, self.grid_steps).map(|_| ())
    }
}

/// Sample-weighted mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub wall_ms: u128,
}

impl EpochRecord {
    /// Loss line without the timing, so logs of identical runs match.
    pub fn to_line(&self) -> String {
        let l = &self.losses;
        format!(
            "epoch={} smooth_l1={:.6} giou={:.6} mcas={:.6} total={:.6}",
            self.epoch, l.smooth_l1, l.giou, l.mcas, l.total
        )
    }
}

/// Batch partition of an epoch after a seeded shuffle.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[SHUFFLE_STREAM, seed, epoch]));
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// MCAS targets for a batch of samples.
pub fn alpha_targets(
    samples: &[&TrainingSample],
    cfg: &TrainConfig,
    epoch: u64,
    batch: u64,
) -> Result<Vec<[f64; 4]>> {
    let grid = build_grid(cfg.lambda1, cfg.lambda2, cfg.grid_steps)?;
    let shared = if cfg.per_sample_noise {
        None
    } else {
        let mut rng = mcas::noise_rng(cfg.seed, epoch, batch, None);
        Some(perturb_grid(&grid, cfg.noise_std, &mut rng)?)
    };
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let own;
            let cands = match &shared {
                Some(c) => c,
                None => {
                    let mut rng = mcas::noise_rng(cfg.seed, epoch, batch, Some(i as u64));
                    own = perturb_grid(&grid, cfg.noise_std, &mut rng)?;
                    &own
                }
            };
            let (a, _, _) = select_alpha_star(cands, &s.inputs.kf_pred, &s.inputs.dp_pred, &s.gt)?;
            Ok(a)
        })
        .collect()
}

/// Mean loss over a batch and its gradient with respect to the network's
/// `[batch, 4]` output.
pub fn batch_loss(
    alpha: &Tensor,
    samples: &[&TrainingSample],
    targets: &[[f64; 4]],
) -> (LossBreakdown, Tensor) {
    let b = samples.len() as f64;
    let mut sum = [0.0; 3];
    let mut grad = Vec::with_capacity(samples.len() * 4);
    for (r, (s, t)) in samples.iter().zip(targets).enumerate() {
        let a = alpha.row(r);
        let a = [a[0], a[1], a[2], a[3]];
        let (l, g) = mcas::sample_loss(&a, t, &s.inputs.kf_pred, &s.inputs.dp_pred, &s.gt);
        sum[0] += l.smooth_l1;
        sum[1] += l.giou;
        sum[2] += l.mcas;
        grad.extend(g.iter().map(|v| v / b));
    }
    let losses = LossBreakdown::new(sum[0] / b, sum[1] / b, sum[2] / b);
    let grad = Tensor::from_vec(&[samples.len(), 4], grad).expect("batch is non-empty");
    (losses, grad)
}

/// Trains a freshly initialized network. `on_epoch` sees every record as it
/// is produced.
pub fn train(
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(PlugNet, Vec<EpochRecord>)> {
    cfg.validate()?;
    if samples.len() < 2 {
        return domain("training needs at least two samples");
    }
    let mut net = PlugNet::new(cfg.seed);
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(cfg.lr, &sizes)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut sum = [0.0; 3];
        let mut seen = 0usize;
        for (bi, idx) in epoch_batches(samples.len(), cfg.batch_size, cfg.seed, epoch as u64)
            .into_iter()
            .enumerate()
        {
            // Batch normalization has no statistics for a single sample.
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<&TrainingSample> = idx.iter().map(|&i| &samples[i]).collect();
            let targets = alpha_targets(&batch, cfg, epoch as u64, bi as u64)?;
            let inputs: Vec<&CmeInputs> = batch.iter().map(|s| &s.inputs).collect();
            let key = StepKey::new(cfg.seed, epoch as u64, bi as u64);
            let (alpha, cache) = net.forward(&CmeBatch::new(&inputs)?, Mode::Train, &key)?;
            let (losses, d_alpha) = batch_loss(&alpha, &batch, &targets);
            if !losses.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss in epoch {epoch}, batch {bi}: {losses:?}"
                )));
            }
            let grads = net.backward(&cache, &d_alpha)?;
            adam.update(net.params_mut(), &grads).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            let n = batch.len() as f64;
            sum[0] += losses.smooth_l1 * n;
            sum[1] += losses.giou * n;
            sum[2] += losses.mcas * n;
            seen += batch.len();
        }
        let n = seen.max(1) as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            losses: LossBreakdown::new(sum[0] / n, sum[1] / n, sum[2] / n),
            wall_ms: start.elapsed().as_millis(),
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok((net, log))
}
