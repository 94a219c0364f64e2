use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use obsprune::layers::layers_from_container;
use obsprune::pipeline::{
    extra_recovery_budget, parse_dims, run_gradual, run_oneshot_finetune, toy_train, GradualOptions, RunConfig,
    RunReport, ToyConfig, ToyModel,
};
use obsprune::pruners::Target;
use obsprune::schedules::{parse_targets, LrSchedule, ScheduleConfig, SweepPlan};
use obsprune::tensorstore::{read_container, write_container};

use crate::args::{parse_nm, parse_sparsity, PrunerArgs, SweepCmd, ToyArgs, ToyCmd};
use crate::{CliError, EXIT_OK};

const DEFAULT_STEPS: usize = 3000;
const DEFAULT_LR: f64 = 0.1;
const DEFAULT_INTERVAL: usize = 20;
/// Peak-to-floor learning-rate ratio of the reference schedule (5e-4 / 1e-5).
const LR_RATIO: f64 = 50.0;

/// Flags resolved against the optional config file (flags win).
struct Resolved {
    lr_max: f64,
    lr_min: f64,
    period: Option<usize>,
    interval: usize,
    targets: Option<Vec<f64>>,
}

fn resolve(toy: &ToyArgs, targets_flag: Option<&str>) -> Result<Resolved, CliError> {
    let cfg = match &toy.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            ScheduleConfig::parse(&text)?
        }
        None => ScheduleConfig::default(),
    };
    let lr_max = toy.lr_max.or(cfg.lr.max).unwrap_or(DEFAULT_LR);
    let lr_min = toy.lr_min.or(cfg.lr.min).unwrap_or(lr_max / LR_RATIO);
    let targets = match targets_flag {
        Some(t) => Some(parse_targets(t)?),
        None => cfg.sweep.targets,
    };
    Ok(Resolved {
        lr_max,
        lr_min,
        period: toy.period.or(cfg.lr.period),
        interval: toy.interval.or(cfg.sweep.interval).unwrap_or(DEFAULT_INTERVAL),
        targets,
    })
}

fn schedule(r: &Resolved, acyclic: bool, run_steps: usize) -> Result<LrSchedule, CliError> {
    let period = if acyclic {
        run_steps.max(1)
    } else {
        r.period.unwrap_or(r.interval).max(1)
    };
    Ok(LrSchedule::new(r.lr_max, r.lr_min, period)?)
}

/// Builds the toy model, loads or trains its weights and logs the training.
fn prepare(toy: &ToyArgs, lr: f64, out: &mut String) -> Result<ToyModel, CliError> {
    let mut cfg = ToyConfig::new(toy.seed, parse_dims(&toy.dims)?);
    cfg.inputs = toy.inputs;
    cfg.noise = toy.noise;
    let mut model = ToyModel::build(&cfg)?;
    if let Some(path) = &toy.weights {
        let layers = layers_from_container(&read_container(path)?)?;
        let fits = layers.len() == model.layers.len()
            && layers
                .iter()
                .zip(&model.layers)
                .all(|(a, b)| a.name == b.name && a.dims == b.dims);
        if !fits {
            return Err(CliError::usage(format!(
                "{} does not hold a {} toy model",
                path.display(),
                toy.dims
            )));
        }
        model.set_layers(layers);
    }
    let steps = toy
        .steps
        .unwrap_or(if toy.weights.is_some() { 0 } else { DEFAULT_STEPS });
    let rep = toy_train(&mut model, steps, lr)?;
    let _ = writeln!(out, "train\tsteps\t{}", rep.steps);
    let _ = writeln!(out, "train\tloss\t{:.9e}", rep.loss);
    let _ = writeln!(out, "train\tgrad_norm\t{:.9e}", rep.grad_norm);
    Ok(model)
}

fn finish(report: &RunReport, toy: &ToyArgs, out: &mut String) -> Result<(), CliError> {
    out.push_str(&report.render());
    if let Some(path) = &toy.csv {
        let file = std::fs::File::create(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        report
            .write_csv(file)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn checkpoint_path(prefix: &Path, sparsity: f64) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{sparsity}.ovpt"));
    PathBuf::from(s)
}

fn gradual(
    toy: &ToyArgs,
    pruner: &PrunerArgs,
    r: &Resolved,
    targets: Vec<f64>,
    prefix: Option<&Path>,
    out: &mut String,
) -> Result<u8, CliError> {
    let spec = pruner.spec()?;
    let plan = SweepPlan::new(targets, r.interval)?;
    let lr = schedule(r, toy.acyclic, plan.total_steps())?;
    let mut model = prepare(toy, r.lr_max, out)?;
    let opts = GradualOptions {
        extra_recovery: if toy.extra_recovery {
            extra_recovery_budget(plan.total_steps())
        } else {
            0
        },
    };
    let (report, checkpoints) = run_gradual(&mut model, &RunConfig::new(spec, pruner.num_grads), &plan, &lr, opts)?;
    for ck in &checkpoints {
        let _ = writeln!(out, "checkpoint\t{}\t{}", ck.target, ck.step);
        if let Some(prefix) = prefix {
            write_container(checkpoint_path(prefix, ck.target), &ck.container)?;
        }
    }
    finish(&report, toy, out)?;
    Ok(EXIT_OK)
}

pub fn run_sweep(cmd: &SweepCmd, out: &mut String) -> Result<u8, CliError> {
    let r = resolve(&cmd.toy, cmd.targets.as_deref())?;
    let targets = r
        .targets
        .clone()
        .ok_or_else(|| CliError::usage("sweep needs --targets or sweep.targets in --config"))?;
    gradual(&cmd.toy, &cmd.pruner, &r, targets, cmd.out.as_deref(), out)
}

pub fn run_toy(cmd: &ToyCmd, out: &mut String) -> Result<u8, CliError> {
    let r = resolve(&cmd.toy, cmd.targets.as_deref())?;
    let target = match (cmd.sparsity, &cmd.nm) {
        (Some(s), None) => Some(parse_sparsity(s)?),
        (None, Some(nm)) => Some(parse_nm(nm)?),
        _ => None,
    };
    let Some(target) = target else {
        let targets = r
            .targets
            .clone()
            .ok_or_else(|| CliError::usage("give --sparsity, --nm or --targets"))?;
        return gradual(&cmd.toy, &cmd.pruner, &r, targets, cmd.out.as_deref(), out);
    };
    let spec = cmd.pruner.spec()?;
    let lr = schedule(&r, cmd.toy.acyclic, r.interval)?;
    let mut model = prepare(&cmd.toy, r.lr_max, out)?;
    let report = run_oneshot_finetune(
        &mut model,
        &RunConfig::new(spec, cmd.pruner.num_grads),
        target,
        r.interval,
        &lr,
    )?;
    if let Target::NM { n, m } = target {
        for l in &model.layers {
            let _ = writeln!(
                out,
                "pattern\t{}\t{}",
                l.name,
                obsprune::solver::nm_violations(&l.mask, n, m)
            );
        }
    }
    if let Some(path) = &cmd.out {
        write_container(path, &model.weights_container())?;
    }
    finish(&report, &cmd.toy, out)?;
    Ok(EXIT_OK)
}
