use super::layer::{ForwardCtx, Layer, LayerSpec};
use super::tensor::{Parameter, Tensor};
use crate::error::Result;

/// An ordered chain of layers.
#[derive(Debug, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Build layers named `{prefix}.{index}`.
    pub fn from_specs(prefix: &str, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::new(format!("{prefix}.{i}"), s.clone(), seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, ctx)?;
        }
        Ok(cur)
    }

    /// Reverse pass. Stops as soon as no earlier layer (and not the caller)
    /// needs a gradient.
    pub fn backward(&mut self, grad: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let n = self.layers.len();
        // first index from which some layer is trainable
        let first_live = self.layers.iter().position(|l| !l.is_frozen());
        let mut cur = Some(grad.clone());
        for i in (0..n).rev() {
            let g = match cur.take() {
                Some(g) => g,
                None => break,
            };
            let upstream_needed = need_input || first_live.is_some_and(|f| f < i);
            let layer = &mut self.layers[i];
            if layer.is_frozen() && !upstream_needed {
                layer.clear_recorded();
                break;
            }
            cur = layer.backward(&g, upstream_needed)?;
        }
        if need_input && n == 0 {
            return Ok(Some(grad.clone()));
        }
        Ok(if need_input { cur } else { None })
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.layers.iter_mut().for_each(|l| l.set_frozen(frozen));
    }
}
