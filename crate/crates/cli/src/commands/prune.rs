use std::fmt::Write as _;

use obsprune::obs::block_loss_increase;
use obsprune::pruners::{align_grads, prune_with_recompute, Target};
use obsprune::solver::nm_violations;
use obsprune::tensorstore::write_container;

use super::{load_grads, load_layers, merged_container};
use crate::args::{parse_nm, parse_sparsity, PruneCmd};
use crate::{CliError, EXIT_COMPLIANCE, EXIT_OK};

pub fn run(cmd: &PruneCmd, out: &mut String) -> Result<u8, CliError> {
    let target = match (&cmd.sparsity, &cmd.nm) {
        (Some(s), None) => parse_sparsity(*s)?,
        (None, Some(nm)) => parse_nm(nm)?,
        _ => return Err(CliError::usage("give exactly one of --sparsity or --nm")),
    };
    let spec = cmd.pruner.spec()?;
    let (input, layers) = load_layers(&cmd.weights)?;
    let grads = load_grads(&cmd.grads)?;
    // Without a model there are no fresh gradients; every recomputation reuses the file.
    let res = prune_with_recompute(&spec, &layers, |_| Ok(grads.clone()), target)?;

    // `predicted` is the block-diagonal quadratic of the applied change, the same
    // model for every method; `estimate` is the method's own figure (for wf the
    // sum of independent saliencies, which ignores correlations).
    let aligned = align_grads(&layers, &grads)?;
    let _ = writeln!(out, "layer\tsparsity\tpredicted\testimate");
    let mut code = EXIT_OK;
    let mut total = Some(0.0);
    for ((l, before), g) in res.layers.iter().zip(&layers).zip(&aligned) {
        let quad = match g {
            Some(g) => Some(block_loss_increase(&before.weights, &l.weights, g, &spec.fisher)?),
            None => None,
        };
        total = total.zip(quad).map(|(t, q)| t + q);
        let _ = write!(
            out,
            "{}\t{:.6}\t{}\t{:.9e}",
            l.name,
            l.sparsity(),
            fmt_opt(quad),
            l.predicted
        );
        if let Target::NM { n, m } = target {
            let v = nm_violations(&l.mask, n, m);
            let _ = write!(out, "\tviolations={v}");
            if v > 0 {
                code = EXIT_COMPLIANCE;
            }
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(
        out,
        "total\t{:.6}\t{}\t{:.9e}",
        res.sparsity(),
        fmt_opt(total),
        res.predicted_loss_increase
    );
    if res.clamped > 0 {
        let _ = writeln!(out, "warning\tclamped_pivots\t{}", res.clamped);
    }
    if let Some(path) = &cmd.out {
        let layers = res.into_layers();
        write_container(path, &merged_container(&input, &layers))?;
    }
    Ok(code)
}

/// `-` when a layer has no gradients to evaluate against.
fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.9e}"))
}
