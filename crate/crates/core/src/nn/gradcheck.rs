//! Central-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode, StepKey, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(
    f: &mut impl FnMut(&[f64]) -> Result<f64>,
    x: &mut [f64],
    i: usize,
) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x)?;
    x[i] = orig - FD_STEP;
    let down = f(x)?;
    x[i] = orig;
    Ok((up - down) / (2.0 * FD_STEP))
}

fn probe_loss(y: &Tensor, probe: &[f64]) -> f64 {
    y.data().iter().zip(probe).map(|(a, b)| a * b).sum()
}

/// Worst relative error of `layer`'s backward pass over its input and every
/// parameter, for the scalar `sum(y * probe)` with a random probe. The layer
/// is cloned for each evaluation, so batchnorm running statistics are left
/// alone.
pub fn layer_gradient_error(
    layer: &Layer,
    x: &Tensor,
    mode: Mode,
    key: &StepKey,
    probe_seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let (y, cache) = layer.clone().forward(x, mode, key, 0)?;
    let probe: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (dx, dparams) = layer.backward(&cache, &Tensor::from_vec(y.shape(), probe.clone())?)?;
    let mut worst: f64 = 0.0;

    let mut input = x.data().to_vec();
    let mut f = |v: &[f64]| -> Result<f64> {
        let t = Tensor::from_vec(x.shape(), v.to_vec())?;
        Ok(probe_loss(
            &layer.clone().forward(&t, mode, key, 0)?.0,
            &probe,
        ))
    };
    for i in 0..input.len() {
        let n = central_difference(&mut f, &mut input, i)?;
        worst = worst.max(relative_error(dx.data()[i], n));
    }

    let blocks: Vec<Vec<f64>> = layer.params().iter().map(|p| p.to_vec()).collect();
    for (b, analytic) in dparams.iter().enumerate() {
        let mut values = blocks[b].clone();
        let mut f = |v: &[f64]| -> Result<f64> {
            let mut l = layer.clone();
            l.params_mut()[b].copy_from_slice(v);
            Ok(probe_loss(&l.forward(x, mode, key, 0)?.0, &probe))
        };
        for i in 0..values.len() {
            let n = central_difference(&mut f, &mut values, i)?;
            worst = worst.max(relative_error(analytic[i], n));
        }
    }
    Ok(worst)
}
