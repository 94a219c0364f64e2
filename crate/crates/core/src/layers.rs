//! Weight layers as the pruners see them, and their mapping to OVPT containers.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensorstore::{keys, DType, GradientSet, Tensor, TensorContainer};

/// One weight tensor, flattened row-major.
///
/// `prunable` marks positions a pruner may touch at all; `mask` is the current
/// keep-mask (1 = kept). Positions with `mask == 0` are already pruned and are
/// held at zero by every later pruning step.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
    pub prunable: Vec<bool>,
    pub mask: Vec<u8>,
}

impl Layer {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, weights: Vec<f64>) -> Self {
        let n = weights.len();
        debug_assert_eq!(dims.iter().product::<usize>(), n);
        Self {
            name: name.into(),
            dims,
            weights,
            prunable: vec![true; n],
            mask: vec![1; n],
        }
    }

    pub fn flat(name: impl Into<String>, weights: Vec<f64>) -> Self {
        let n = weights.len();
        Self::new(name, vec![n], weights)
    }

    pub fn with_prunable(mut self, prunable: Vec<bool>) -> Self {
        assert_eq!(prunable.len(), self.weights.len());
        self.prunable = prunable;
        self
    }

    /// Sets the keep-mask and zeroes masked weights.
    pub fn with_mask(mut self, mask: Vec<u8>) -> Self {
        assert_eq!(mask.len(), self.weights.len());
        for (w, &m) in self.weights.iter_mut().zip(&mask) {
            if m == 0 {
                *w = 0.0;
            }
        }
        self.mask = mask;
        self
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Prunable and not yet pruned.
    pub fn selectable(&self) -> Vec<bool> {
        self.prunable
            .iter()
            .zip(&self.mask)
            .map(|(&p, &m)| p && m == 1)
            .collect()
    }

    pub fn prunable_count(&self) -> usize {
        self.prunable.iter().filter(|&&p| p).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.prunable
            .iter()
            .zip(&self.mask)
            .filter(|(&p, &m)| p && m == 0)
            .count()
    }

    /// Fraction of prunable positions that are pruned.
    pub fn sparsity(&self) -> f64 {
        let p = self.prunable_count();
        if p == 0 {
            0.0
        } else {
            self.pruned_count() as f64 / p as f64
        }
    }
}

/// Total prunable count across layers.
pub fn prunable_total(layers: &[Layer]) -> usize {
    layers.iter().map(Layer::prunable_count).sum()
}

pub fn pruned_total(layers: &[Layer]) -> usize {
    layers.iter().map(Layer::pruned_count).sum()
}

/// Number of zeros a sparsity target asks for out of `prunable` weights.
pub fn zeros_for(sparsity: f64, prunable: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity {sparsity} outside [0, 1]")));
    }
    Ok((sparsity * prunable as f64).round() as usize)
}

/// Reads every `layer.<id>.weight` (with optional `.prunable` and `.mask`).
pub fn layers_from_container(c: &TensorContainer) -> Result<Vec<Layer>> {
    let mut out = Vec::new();
    for (name, t) in c.iter() {
        let Some(id) = keys::weight_id(name) else { continue };
        if t.dtype() == DType::Mask {
            return Err(Error::Shape(format!("`{name}` must be a float tensor")));
        }
        let mut layer = Layer::new(id, t.dims().to_vec(), t.to_f64());
        if let Some(p) = c.get(&keys::prunable(id)) {
            let m = mask_of(p, &keys::prunable(id), layer.len())?;
            layer = layer.with_prunable(m.iter().map(|&v| v == 1).collect());
        }
        if let Some(m) = c.get(&keys::mask(id)) {
            let m = mask_of(m, &keys::mask(id), layer.len())?;
            layer = layer.with_mask(m.to_vec());
        }
        if layer.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: id.to_string(),
                what: "weights".into(),
            });
        }
        out.push(layer);
    }
    Ok(out)
}

fn mask_of<'a>(t: &'a Tensor, name: &str, len: usize) -> Result<&'a [u8]> {
    let m = t
        .as_mask()
        .ok_or_else(|| Error::Shape(format!("`{name}` must be a u8 mask")))?;
    if m.len() != len {
        return Err(Error::Shape(format!(
            "`{name}` has {} entries, weight has {len}",
            m.len()
        )));
    }
    Ok(m)
}

/// Reads every `layer.<id>.grads`, keyed by layer id.
pub fn grads_from_container(c: &TensorContainer) -> Result<IndexMap<String, GradientSet>> {
    let mut out = IndexMap::new();
    for (name, t) in c.iter() {
        if let Some(id) = keys::grads_id(name) {
            out.insert(id.to_string(), GradientSet::from_tensor(id, t)?);
        }
    }
    Ok(out)
}

/// Gradients ordered like `layers`; layers with nothing selectable may lack them.
pub fn match_grads<'a>(
    layers: &[Layer],
    grads: &'a IndexMap<String, GradientSet>,
) -> Result<Vec<Option<&'a GradientSet>>> {
    layers
        .iter()
        .map(|l| match grads.get(&l.name) {
            Some(g) if g.dim() != l.len() => Err(Error::Shape(format!(
                "layer `{}`: gradients have dimension {}, weight has {}",
                l.name,
                g.dim(),
                l.len()
            ))),
            Some(g) => Ok(Some(g)),
            None if l.selectable().iter().any(|&s| s) => Err(Error::MissingGradients { layer: l.name.clone() }),
            None => Ok(None),
        })
        .collect()
}

/// Writes layers back, preserving the dtype of an existing weight tensor in `template`.
pub fn layers_to_container(layers: &[Layer], template: Option<&TensorContainer>) -> TensorContainer {
    let mut c = TensorContainer::new();
    for l in layers {
        let wkey = keys::weight(&l.name);
        let weight = match template.and_then(|t| t.get(&wkey)) {
            Some(t) if t.dims() == l.dims.as_slice() => t.with_values(&l.weights),
            _ => Tensor::f64(l.dims.clone(), l.weights.clone()),
        }
        .expect("layer dims match weights");
        c.set(wkey, weight);
        c.set(
            keys::mask(&l.name),
            Tensor::mask(l.dims.clone(), l.mask.clone()).expect("mask dims"),
        );
        if l.prunable.iter().any(|&p| !p) {
            let p = l.prunable.iter().map(|&p| u8::from(p)).collect();
            c.set(
                keys::prunable(&l.name),
                Tensor::mask(l.dims.clone(), p).expect("prunable dims"),
            );
        }
    }
    c
}
