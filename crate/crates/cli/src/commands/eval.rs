use std::fmt::Write as _;

use obsprune::obs::loss_increase;
use obsprune::pruners::Target;
use obsprune::solver::nm_violations;
use obsprune::Error;

use super::{load_grads, load_layers};
use crate::args::{parse_nm, EvalCmd};
use crate::{CliError, EXIT_COMPLIANCE, EXIT_OK};

pub fn run(cmd: &EvalCmd, out: &mut String) -> Result<u8, CliError> {
    let nm = cmd.nm.as_deref().map(parse_nm).transpose()?;
    let (_, before) = load_layers(&cmd.weights_before)?;
    let (_, after) = load_layers(&cmd.weights_after)?;
    let grads = load_grads(&cmd.grads)?;
    if before.len() != after.len() {
        return Err(Error::Shape(format!("{} layers before, {} after", before.len(), after.len())).into());
    }

    let _ = write!(out, "layer\tsparsity\tincrease");
    if nm.is_some() {
        let _ = write!(out, "\tnm_violations");
    }
    let _ = writeln!(out);
    let (mut total, mut zeros, mut prunable, mut violations) = (0.0, 0usize, 0usize, 0usize);
    for (b, a) in before.iter().zip(&after) {
        if b.name != a.name || b.dims != a.dims {
            return Err(Error::Shape(format!(
                "layer `{}` {:?} does not match layer `{}` {:?}",
                b.name, b.dims, a.name, a.dims
            ))
            .into());
        }
        let inc = match grads.iter().find(|g| g.layer() == b.name) {
            Some(g) => loss_increase(&b.weights, &a.weights, &g.truncated(cmd.num_grads), cmd.damp)?,
            None if b.weights == a.weights => 0.0,
            None => return Err(Error::MissingGradients { layer: b.name.clone() }.into()),
        };
        total += inc;
        zeros += a.pruned_count();
        prunable += a.prunable_count();
        let _ = write!(out, "{}\t{:.6}\t{:.9e}", a.name, a.sparsity(), inc);
        if let Some(Target::NM { n, m }) = nm {
            let v = if a.len() % m == 0 {
                nm_violations(&a.mask, n, m)
            } else {
                a.len().div_ceil(m)
            };
            violations += v;
            let _ = write!(out, "\t{v}");
        }
        let _ = writeln!(out);
    }
    let sparsity = if prunable == 0 {
        0.0
    } else {
        zeros as f64 / prunable as f64
    };
    let _ = write!(out, "total\t{sparsity:.6}\t{total:.9e}");
    if nm.is_some() {
        let _ = write!(out, "\t{violations}");
    }
    let _ = writeln!(out);
    Ok(if violations > 0 { EXIT_COMPLIANCE } else { EXIT_OK })
}
