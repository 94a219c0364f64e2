//! Cyclic linear learning-rate schedule and sparsity sweep plans.
//!
//! Both are pure functions of the step index, so a run can be resumed at any
//! step. Units (steps or epochs) are up to the caller.

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub max: f64,
    pub min: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn new(max: f64, min: f64, period: usize) -> Result<Self> {
        if !(min > 0.0 && max > min && max.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < min < max, got min {min}, max {max}"
            )));
        }
        if period == 0 {
            return Err(Error::Config("learning-rate period must be positive".into()));
        }
        Ok(Self { max, min, period })
    }

    /// `max − (max − min) · (t mod T) / T`
    pub fn lr_at(&self, t: usize) -> f64 {
        let phase = (t % self.period) as f64 / self.period as f64;
        self.max - (self.max - self.min) * phase
    }
}

pub fn lr_at(s: &LrSchedule, t: usize) -> f64 {
    s.lr_at(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    targets: Vec<f64>,
    interval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneEvent {
    pub step: usize,
    pub sparsity: f64,
}

impl SweepPlan {
    pub fn new(targets: Vec<f64>, interval: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Config("sweep needs at least one target".into()));
        }
        if let Some(bad) = targets.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config(format!("sweep target {bad} outside (0, 1)")));
        }
        if targets.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(
                "sweep targets must be strictly increasing without duplicates".into(),
            ));
        }
        if interval == 0 {
            return Err(Error::Config("sweep interval must be positive".into()));
        }
        Ok(Self { targets, interval })
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn initial_target(&self) -> f64 {
        self.targets[0]
    }

    /// Event `i` prunes to `targets[i]` at step `i · interval`; its checkpoint is
    /// taken after the following recovery window of `interval` steps.
    pub fn events(&self) -> Vec<PruneEvent> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, &s)| PruneEvent {
                step: i * self.interval,
                sparsity: s,
            })
            .collect()
    }

    /// Total steps including the last recovery window.
    pub fn total_steps(&self) -> usize {
        self.targets.len() * self.interval
    }
}

pub fn plan_sweep(targets: &[f64], interval: usize) -> Result<(SweepPlan, Vec<PruneEvent>)> {
    let plan = SweepPlan::new(targets.to_vec(), interval)?;
    let events = plan.events();
    Ok((plan, events))
}

/// Parses a comma-separated target list like `"0.5,0.6,0.75"`.
pub fn parse_targets(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad sparsity target `{t}`")))
        })
        .collect()
}

/// Schedule settings read from a TOML file with dotted keys:
///
/// ```toml
/// lr.max = 5e-4
/// lr.min = 1e-5
/// lr.period = 20
/// sweep.targets = [0.4, 0.5, 0.6, 0.75, 0.8, 0.9]
/// sweep.interval = 20
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub lr: LrSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSection {
    pub max: Option<f64>,
    pub min: Option<f64>,
    pub period: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub targets: Option<Vec<f64>>,
    pub interval: Option<usize>,
}

impl ScheduleConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("schedule config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table5() -> LrSchedule {
        LrSchedule::new(5e-4, 1e-5, 20).unwrap()
    }

    #[test]
    fn cyclic_values() {
        let s = table5();
        assert_eq!(s.lr_at(0), 5e-4);
        assert!((s.lr_at(10) - 2.55e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(20), 5e-4);
    }

    #[test]
    fn stays_in_half_open_range() {
        let s = table5();
        for t in 0..200 {
            let v = s.lr_at(t);
            assert!(v > s.min && v <= s.max, "t={t} lr={v}");
        }
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(LrSchedule::new(1e-5, 5e-4, 20).is_err());
        assert!(LrSchedule::new(5e-4, 0.0, 20).is_err());
        assert!(LrSchedule::new(5e-4, 1e-5, 0).is_err());
    }

    #[test]
    fn sweep_events() {
        let (_, ev) = plan_sweep(&[0.4, 0.5, 0.6, 0.75, 0.8, 0.9], 20).unwrap();
        let steps: Vec<usize> = ev.iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![0, 20, 40, 60, 80, 100]);
        assert_eq!(ev[3].sparsity, 0.75);
        let (_, one) = plan_sweep(&[0.9], 7).unwrap();
        assert_eq!(one, vec![PruneEvent { step: 0, sparsity: 0.9 }]);
    }

    #[test]
    fn sweep_rejects_unsorted() {
        assert!(plan_sweep(&[0.5, 0.4], 10).is_err());
        assert!(plan_sweep(&[0.5, 0.5], 10).is_err());
        assert!(plan_sweep(&[0.0], 10).is_err());
        assert!(plan_sweep(&[], 10).is_err());
    }

    #[test]
    fn config_file() {
        let cfg = ScheduleConfig::parse(
            "lr.max = 5e-4\nlr.min = 1e-5\nlr.period = 20\n# comment\nsweep.targets = [0.4, 0.5]\nsweep.interval = 20\n",
        )
        .unwrap();
        assert_eq!(cfg.lr.max, Some(5e-4));
        assert_eq!(cfg.sweep.targets, Some(vec![0.4, 0.5]));
        assert!(ScheduleConfig::parse("lr.speed = 1").is_err());
    }

    #[test]
    fn target_list() {
        assert_eq!(parse_targets("0.5, 0.6").unwrap(), vec![0.5, 0.6]);
        assert!(parse_targets("0.5,x").is_err());
    }
}
