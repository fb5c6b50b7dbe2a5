use super::layers::{Cache, Layer};
use super::tensor::Tensor;
use super::{Mode, StepKey};
use crate::error::Result;

/// Anything made of named layers. Parameter and buffer order follows
/// `named_layers`, which is also the checkpoint order.
pub trait Module {
    fn named_layers(&self) -> Vec<(String, &Layer)>;
    fn named_layers_mut(&mut self) -> Vec<(String, &mut Layer)>;

    fn count_parameters(&self) -> usize {
        self.named_layers()
            .iter()
            .map(|(_, l)| l.num_params())
            .sum()
    }

    fn params(&self) -> Vec<&[f64]> {
        self.named_layers()
            .into_iter()
            .flat_map(|(_, l)| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.named_layers_mut()
            .into_iter()
            .flat_map(|(_, l)| l.params_mut())
            .collect()
    }

    /// Text describing every layer's name and shape; hashed into checkpoints
    /// to catch loading weights into the wrong network.
    fn architecture(&self) -> String {
        self.named_layers()
            .iter()
            .map(|(n, l)| format!("{n}:{}", l.spec().signature()))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub name: String,
    pub layers: Vec<Layer>,
    /// Offset added to layer positions when keying dropout streams, so that
    /// different sub-networks never share a mask.
    pub key_offset: u64,
}

#[derive(Debug, Clone)]
pub struct SequentialCache {
    caches: Vec<Cache>,
}

impl Sequential {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>, key_offset: u64) -> Self {
        Self {
            name: name.into(),
            layers,
            key_offset,
        }
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        key: &StepKey,
    ) -> Result<(Tensor, SequentialCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (y, c) = layer.forward(&h, mode, key, self.key_offset + i as u64)?;
            caches.push(c);
            h = y;
        }
        Ok((h, SequentialCache { caches }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Returns the input gradient and the parameter gradients in
    /// [`Module::params`] order.
    pub fn backward(
        &self,
        cache: &SequentialCache,
        grad: &Tensor,
    ) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad.clone();
        for (layer, c) in self.layers.iter().zip(&cache.caches).rev() {
            let (dx, pg) = layer.backward(c, &g)?;
            per_layer.push(pg);
            g = dx;
        }
        per_layer.reverse();
        Ok((g, per_layer.into_iter().flatten().collect()))
    }
}

impl Module for Sequential {
    fn named_layers(&self) -> Vec<(String, &Layer)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("{}.{i}", self.name), l))
            .collect()
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut Layer)> {
        let name = self.name.clone();
        self.layers
            .iter_mut()
            .enumerate()
            .map(|(i, l)| (format!("{name}.{i}"), l))
            .collect()
    }
}
