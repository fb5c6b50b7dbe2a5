//! The complete fusion network: encoder followed by blend generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::abg::{Abg, BlendFactors};
use crate::cme::{Cme, CmeBatch, CmeCache, CmeInputs};
use crate::error::Result;
use crate::nn::{mix, Layer, Mode, Module, SequentialCache, StepKey, Tensor};

const INIT_STREAM: u64 = 0x706c_7567_6e65_7400;

#[derive(Debug, Clone, PartialEq)]
pub struct PlugNet {
    pub cme: Cme,
    pub abg: Abg,
}

#[derive(Debug, Clone)]
pub struct PlugNetCache {
    cme: CmeCache,
    abg: SequentialCache,
}

impl PlugNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, INIT_STREAM]));
        let cme = Cme::new(&mut rng);
        let abg = Abg::new(&mut rng);
        Self { cme, abg }
    }

    /// Blend factors `[batch, 4]` with a cache for [`PlugNet::backward`].
    pub fn forward(
        &mut self,
        batch: &CmeBatch,
        mode: Mode,
        key: &StepKey,
    ) -> Result<(Tensor, PlugNetCache)> {
        let (f, cme) = self.cme.forward(batch, mode, key)?;
        let (alpha, abg) = self.abg.forward(&f, mode, key)?;
        Ok((alpha, PlugNetCache { cme, abg }))
    }

    pub fn infer(&self, batch: &CmeBatch) -> Result<Tensor> {
        self.abg.infer(&self.cme.infer(batch)?)
    }

    pub fn predict_alpha(&self, inputs: &[&CmeInputs]) -> Result<Vec<BlendFactors>> {
        let out = self.infer(&CmeBatch::new(inputs)?)?;
        Ok((0..out.rows())
            .map(|r| {
                let d = out.row(r);
                BlendFactors {
                    alpha: [d[0], d[1], d[2], d[3]],
                }
            })
            .collect())
    }

    /// Parameter gradients in [`Module::params`] order.
    pub fn backward(&self, cache: &PlugNetCache, d_alpha: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (d_f, g_abg) = self.abg.net.backward(&cache.abg, d_alpha)?;
        let g_cme = self.cme.backward(&cache.cme, &d_f)?;
        Ok([g_cme, g_abg].concat())
    }
}

impl Module for PlugNet {
    fn named_layers(&self) -> Vec<(String, &Layer)> {
        let mut out = self.cme.named_layers();
        out.extend(self.abg.named_layers());
        out
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut Layer)> {
        let mut out = self.cme.named_layers_mut();
        out.extend(self.abg.named_layers_mut());
        out
    }
}
