//! Reproduction helpers kept out of `--help`.

use std::fmt::Write as _;

use clap::Parser;
use obsprune::layers::Layer;
use obsprune::oracle::{dense_fisher, exhaustive_best_subset, sparse_regression_min};
use obsprune::pipeline::{ToyConfig, ToyModel};
use obsprune::tensorstore::{keys, write_container, GradientSet, Tensor, TensorContainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{load_grads, load_layers};
use crate::args::{Cli, GenFixtureCmd, OracleCmd};
use crate::{CliError, EXIT_OK};

pub fn run_oracle(cmd: &OracleCmd, out: &mut String) -> Result<u8, CliError> {
    let (_, layers) = load_layers(&cmd.weights)?;
    let layer: &Layer = match &cmd.layer {
        Some(name) => layers
            .iter()
            .find(|l| &l.name == name)
            .ok_or_else(|| CliError::usage(format!("no layer `{name}`")))?,
        None => &layers[0],
    };
    let grads = load_grads(&cmd.grads)?;
    let g = grads.iter().find(|g| g.layer() == layer.name).ok_or_else(|| {
        CliError::from(obsprune::Error::MissingGradients {
            layer: layer.name.clone(),
        })
    })?;
    let (q, rho) = exhaustive_best_subset(&layer.weights, &dense_fisher(g, cmd.damp), cmd.k)?;
    let reg = sparse_regression_min(g, &layer.weights, cmd.k, cmd.damp)?;
    let _ = writeln!(out, "exhaustive\t{q:?}\t{rho:.12e}");
    let _ = writeln!(out, "regression\t{:?}\t{:.12e}", reg.zeros, reg.error);
    let _ = writeln!(out, "agree\t{}", q == reg.zeros);
    Ok(EXIT_OK)
}

/// Single 8x8 layer whose gradients mix coordinates strongly, so the Fisher is
/// far from diagonal.
fn correlated_fixture() -> (TensorContainer, TensorContainer) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let (d, n, c) = (64usize, 256usize, 1.5);
    let mix: Vec<f64> = (0..d * d)
        .map(|k| f64::from(u8::from(k / d == k % d)) + c * normal() / (d as f64).sqrt())
        .collect();
    let weights: Vec<f64> = (0..d).map(|_| normal()).collect();
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| normal()).collect();
        for r in 0..d {
            rows.push((0..d).map(|k| mix[r * d + k] * z[k]).sum::<f64>());
        }
    }
    let mut w = TensorContainer::new();
    w.set(keys::weight("0"), Tensor::f64(vec![8, 8], weights).expect("8x8"));
    let mut g = TensorContainer::new();
    let grads = GradientSet::new("0", n, d, rows).expect("consistent");
    g.set(keys::grads("0"), grads.to_tensor());
    (w, g)
}

pub const GOLDEN_TOY_ARGS: &[&str] = &[
    "obsprune",
    "toy",
    "--seed",
    "1",
    "--method",
    "ovit",
    "--sparsity",
    "0.9",
];

pub fn run_gen_fixture(cmd: &GenFixtureCmd, out: &mut String) -> Result<u8, CliError> {
    let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", cmd.dir.display()));
    std::fs::create_dir_all(cmd.dir.join("golden")).map_err(io)?;

    let mut model = ToyModel::build(&ToyConfig::new(1, vec![16, 8, 4]))?; // CLI toy defaults
    obsprune::pipeline::toy_train(&mut model, 3000, 0.1)?;
    let files = [
        ("toy.weights.ovpt", model.weights_container()),
        ("toy.grads.ovpt", model.grads_container(model.data.len())),
    ];
    let (cw, cg) = correlated_fixture();
    for (name, c) in files
        .into_iter()
        .chain([("correlated.weights.ovpt", cw), ("correlated.grads.ovpt", cg)])
    {
        write_container(cmd.dir.join(name), &c)?;
        let _ = writeln!(out, "wrote\t{name}");
    }
    if cmd.bless_golden {
        let cli = Cli::try_parse_from(GOLDEN_TOY_ARGS).map_err(|e| CliError::usage(e.to_string()))?;
        let crate::args::Command::Toy(toy) = &cli.command else {
            unreachable!("golden args name the toy command")
        };
        let mut report = String::new();
        super::toy::run_toy(toy, &mut report)?;
        std::fs::write(cmd.dir.join("golden/toy_ovit_0.9.txt"), report).map_err(io)?;
        let _ = writeln!(out, "wrote\tgolden/toy_ovit_0.9.txt");
    }
    Ok(EXIT_OK)
}
