//! End-to-end drivers on the toy models: one-shot pruning, one-shot plus
//! mask-frozen recovery, and gradual sparsity sweeps that emit one checkpoint
//! per target.

mod toy;

use std::fmt::Write as _;

pub use toy::{collect_grads, parse_dims, toy_train, Dataset, ToyConfig, ToyKind, ToyModel, TrainReport};

use crate::error::Result;
use crate::layers::Layer;
use crate::pruners::{prune_with_recompute, PrunerSpec, Target};
use crate::schedules::{LrSchedule, SweepPlan};
use crate::tensorstore::TensorContainer;

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub step: usize,
    pub target: Target,
    /// Achieved sparsity over prunable weights after the event.
    pub sparsity: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub predicted: f64,
    /// Loss after the recovery window, if one ran.
    pub recovered_loss: Option<f64>,
}

impl EventRecord {
    pub fn true_delta(&self) -> f64 {
        self.loss_after - self.loss_before
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub events: Vec<EventRecord>,
    pub masks: Vec<(String, Vec<u8>)>,
    pub final_loss: f64,
}

impl RunReport {
    /// `step<TAB>field<TAB>value` lines followed by a summary table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let target = match e.target {
                Target::Sparsity(v) => format!("{v}"),
                Target::NM { n, m } => format!("{n}:{m}"),
            };
            let _ = writeln!(s, "{}\ttarget\t{}", e.step, target);
            let _ = writeln!(s, "{}\tsparsity\t{:.6}", e.step, e.sparsity);
            let _ = writeln!(s, "{}\tloss_before\t{:.9e}", e.step, e.loss_before);
            let _ = writeln!(s, "{}\tloss_after\t{:.9e}", e.step, e.loss_after);
            let _ = writeln!(s, "{}\ttrue_delta\t{:.9e}", e.step, e.true_delta());
            let _ = writeln!(s, "{}\tpredicted\t{:.9e}", e.step, e.predicted);
            if let Some(r) = e.recovered_loss {
                let _ = writeln!(s, "{}\trecovered_loss\t{:.9e}", e.step, r);
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>6} {:>9} {:>14} {:>14} {:>14} {:>14}",
            "step", "sparsity", "true_delta", "predicted", "loss_after", "recovered"
        );
        for e in &self.events {
            let rec = e.recovered_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
            let _ = writeln!(
                s,
                "{:>6} {:>9.4} {:>14.6e} {:>14.6e} {:>14.6e} {:>14}",
                e.step,
                e.sparsity,
                e.true_delta(),
                e.predicted,
                e.loss_after,
                rec
            );
        }
        let _ = writeln!(s, "final_loss {:.9e}", self.final_loss);
        s
    }

    /// CSV rows for plotting.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step",
            "sparsity",
            "loss_before",
            "loss_after",
            "true_delta",
            "predicted",
            "recovered_loss",
        ])?;
        for e in &self.events {
            w.write_record([
                e.step.to_string(),
                format!("{:.6}", e.sparsity),
                format!("{:.9e}", e.loss_before),
                format!("{:.9e}", e.loss_after),
                format!("{:.9e}", e.true_delta()),
                format!("{:.9e}", e.predicted),
                e.recovered_loss.map_or_else(String::new, |v| format!("{v:.9e}")),
            ])?;
        }
        w.flush()
    }
}

/// Model-independent settings shared by the drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: PrunerSpec,
    /// Gradient rows collected per pruning event.
    pub num_grads: usize,
}

impl RunConfig {
    pub fn new(spec: PrunerSpec, num_grads: usize) -> Self {
        Self { spec, num_grads }
    }
}

fn masks_of(layers: &[Layer]) -> Vec<(String, Vec<u8>)> {
    layers.iter().map(|l| (l.name.clone(), l.mask.clone())).collect()
}

fn sparsity_of(layers: &[Layer]) -> f64 {
    let p = crate::layers::prunable_total(layers);
    if p == 0 {
        0.0
    } else {
        crate::layers::pruned_total(layers) as f64 / p as f64
    }
}

/// Prunes `model` in place, collecting fresh gradients for every recomputation.
fn prune_event(model: &mut ToyModel, cfg: &RunConfig, target: Target, step: usize) -> Result<EventRecord> {
    let loss_before = model.loss();
    let snapshot = model.clone();
    let res = prune_with_recompute(
        &cfg.spec,
        &model.layers,
        |layers| Ok(collect_grads(&snapshot.with_layers(layers), cfg.num_grads)),
        target,
    )?;
    let predicted = res.predicted_loss_increase;
    model.set_layers(res.into_layers());
    Ok(EventRecord {
        step,
        target,
        sparsity: sparsity_of(&model.layers),
        loss_before,
        loss_after: model.loss(),
        predicted,
        recovered_loss: None,
    })
}

/// Mask-frozen gradient descent; `lr` is indexed by `first_step + t`.
pub fn recover(model: &mut ToyModel, steps: usize, lr: &LrSchedule, first_step: usize) -> Result<f64> {
    for t in 0..steps {
        model.step(lr.lr_at(first_step + t));
    }
    let loss = model.loss();
    if !loss.is_finite() {
        return Err(crate::error::Error::Diverged {
            step: first_step + steps,
            loss,
        });
    }
    Ok(loss)
}

pub fn run_oneshot(model: &mut ToyModel, cfg: &RunConfig, target: Target) -> Result<RunReport> {
    let ev = prune_event(model, cfg, target, 0)?;
    Ok(RunReport {
        final_loss: ev.loss_after,
        events: vec![ev],
        masks: masks_of(&model.layers),
    })
}

pub fn run_oneshot_finetune(
    model: &mut ToyModel,
    cfg: &RunConfig,
    target: Target,
    recovery_steps: usize,
    lr: &LrSchedule,
) -> Result<RunReport> {
    let mut report = run_oneshot(model, cfg, target)?;
    if recovery_steps > 0 {
        let loss = recover(model, recovery_steps, lr, 0)?;
        report.events[0].recovered_loss = Some(loss);
        report.final_loss = loss;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub target: f64,
    pub step: usize,
    pub container: TensorContainer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradualOptions {
    /// Extra mask-frozen recovery per checkpoint, in steps, applied to a copy.
    pub extra_recovery: usize,
}

/// Gradual sweep: at each event prune to the next target with fresh gradients,
/// recover for `plan.interval()` steps, then checkpoint. Masks only grow.
pub fn run_gradual(
    model: &mut ToyModel,
    cfg: &RunConfig,
    plan: &SweepPlan,
    lr: &LrSchedule,
    opts: GradualOptions,
) -> Result<(RunReport, Vec<Checkpoint>)> {
    let mut events = Vec::new();
    let mut checkpoints = Vec::new();
    for ev in plan.events() {
        let mut rec = prune_event(model, cfg, Target::Sparsity(ev.sparsity), ev.step)?;
        let loss = recover(model, plan.interval(), lr, ev.step)?;
        rec.recovered_loss = Some(loss);
        let mut snapshot = model.clone();
        if opts.extra_recovery > 0 {
            recover(&mut snapshot, opts.extra_recovery, lr, 0)?;
        }
        checkpoints.push(Checkpoint {
            target: ev.sparsity,
            step: ev.step + plan.interval(),
            container: snapshot.weights_container(),
        });
        events.push(rec);
    }
    let final_loss = model.loss();
    Ok((
        RunReport {
            events,
            masks: masks_of(&model.layers),
            final_loss,
        },
        checkpoints,
    ))
}

/// Budget of the optional extra fine-tuning: `total · 100 / 300`.
pub fn extra_recovery_budget(total_steps: usize) -> usize {
    (total_steps * 100).div_ceil(300)
}
