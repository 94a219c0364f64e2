pub mod eval;
pub mod hidden;
pub mod prune;
pub mod toy;

use std::path::Path;

use obsprune::layers::{grads_from_container, layers_from_container, Layer};
use obsprune::tensorstore::{read_container, GradientSet, TensorContainer};

use crate::CliError;

pub fn load_layers(path: &Path) -> Result<(TensorContainer, Vec<Layer>), CliError> {
    let c = read_container(path)?;
    let layers = layers_from_container(&c)?;
    if layers.is_empty() {
        return Err(CliError::runtime(format!(
            "{}: no layer.<id>.weight tensors",
            path.display()
        )));
    }
    Ok((c, layers))
}

pub fn load_grads(path: &Path) -> Result<Vec<GradientSet>, CliError> {
    let c = read_container(path)?;
    Ok(grads_from_container(&c)?.into_values().collect())
}

/// Copies `input` and overwrites every layer tensor from `layers`.
pub fn merged_container(input: &TensorContainer, layers: &[Layer]) -> TensorContainer {
    let mut c = input.clone();
    for (name, t) in obsprune::layers::layers_to_container(layers, Some(input)).iter() {
        c.set(name, t.clone());
    }
    c
}
