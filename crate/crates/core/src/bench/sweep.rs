//! Drop-rate and sampling-rate sweeps against a shared baseline arm.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::median;
use crate::data::Dataset;
use crate::error::{LdbError, Result};
use crate::network::{build_preset, PresetOptions};
use crate::scheduler::{LdbConfig, LrSchedule};
use crate::trainer::{TrainOptions, TrainReport, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    P,
    S,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::P => "p",
            SweepAxis::S => "s",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = LdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(SweepAxis::P),
            "s" => Ok(SweepAxis::S),
            other => Err(LdbError::Config(format!("axis must be p or s, got {other:?}"))),
        }
    }
}

/// What every arm trains: the same preset, data, seeds and epoch budget.
#[derive(Debug, Clone)]
pub struct SweepTask<'a> {
    pub preset: String,
    pub preset_opts: PresetOptions,
    pub dataset: &'a Dataset,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    /// Timed repetitions per arm; the median wall time is reported.
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    /// Axis value; `None` for the baseline arm.
    pub value: Option<f64>,
    /// NaN (null in JSON) when the arm failed before finishing a run.
    #[serde(with = "nan_as_null")]
    pub val_accuracy: f64,
    /// Training wall time, validation excluded: the sum over all steps of
    /// each step's median across repetitions.
    #[serde(with = "nan_as_null")]
    pub wall_ms: f64,
    /// Total training wall time of each repetition.
    pub wall_ms_reps: Vec<f64>,
    /// Per epoch share of `wall_ms`.
    pub epoch_ms_median: Vec<f64>,
    /// `1 - wall_ms / baseline.wall_ms`.
    #[serde(with = "nan_as_null")]
    pub speedup: f64,
    pub failed: Option<String>,
    /// Degenerate configuration expected to reproduce the baseline exactly.
    pub equivalence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub baseline: ArmResult,
    pub arms: Vec<ArmResult>,
    pub repetitions: usize,
}

impl SweepResult {
    pub fn any_failed(&self) -> bool {
        self.baseline.failed.is_some() || self.arms.iter().any(|a| a.failed.is_some())
    }

    pub fn arm(&self, value: f64) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.value == Some(value))
    }
}

pub fn sweep_drop_rate(values: &[f64], cfg: &LdbConfig, task: &SweepTask<'_>) -> Result<SweepResult> {
    if let Some(&bad) = values.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(LdbError::Config(format!("p must be in (0,1], got {bad}")));
    }
    let arms = values
        .iter()
        .map(|&p| {
            let equivalence = p == 1.0;
            let cfg = LdbConfig {
                p,
                kappa: if equivalence { 1.0 } else { cfg.kappa },
                ..cfg.clone()
            };
            (format!("p={p}"), p, cfg, equivalence)
        })
        .collect();
    run_sweep(SweepAxis::P, arms, cfg, task)
}

pub fn sweep_sampling_rate(values: &[f64], cfg: &LdbConfig, task: &SweepTask<'_>) -> Result<SweepResult> {
    if let Some(&bad) = values.iter().find(|&&s| !(s >= 1.0 && s.fract() == 0.0)) {
        return Err(LdbError::Config(format!("s must be a positive integer, got {bad}")));
    }
    let arms = values
        .iter()
        .map(|&s| {
            let cfg = LdbConfig {
                s: s as usize,
                ..cfg.clone()
            };
            // No Drop epoch can fire when s >= epochs.
            let equivalence = cfg.s >= task.epochs.max(1);
            (format!("s={s}"), s, cfg, equivalence)
        })
        .collect();
    run_sweep(SweepAxis::S, arms, cfg, task)
}

type ArmSpec = (String, f64, LdbConfig, bool);

struct ArmRuns {
    accuracy: Option<f64>,
    /// Per repetition, per epoch, per step training milliseconds.
    step_ms: Vec<Vec<Vec<f64>>>,
    failed: Option<String>,
}

impl ArmRuns {
    /// Per epoch, the sum over step positions of that step's median across
    /// repetitions. Step counts are identical across repetitions, so the
    /// positions line up; the per-step median discards the occasional
    /// scheduler stall that a median of whole-epoch totals would keep.
    fn epoch_medians(&self) -> Vec<f64> {
        if self.failed.is_some() || self.step_ms.is_empty() {
            return Vec::new();
        }
        let first = &self.step_ms[0];
        (0..first.len())
            .map(|e| {
                (0..first[e].len())
                    .map(|j| median(&self.step_ms.iter().map(|r| r[e][j]).collect::<Vec<_>>()))
                    .sum()
            })
            .collect()
    }

    fn wall_ms(&self) -> f64 {
        let m = self.epoch_medians();
        if m.is_empty() {
            f64::NAN
        } else {
            m.iter().sum()
        }
    }

    fn new() -> Self {
        ArmRuns {
            accuracy: None,
            step_ms: Vec::new(),
            failed: None,
        }
    }

    fn record(&mut self, report: &TrainReport) {
        self.accuracy.get_or_insert(report.final_val_accuracy());
        let mut steps = report.step_ms.iter().map(|&(_, ms)| ms);
        self.step_ms.push(
            report
                .records
                .iter()
                .map(|rec| steps.by_ref().take(rec.steps).collect())
                .collect(),
        );
    }

    fn finish(self, label: String, value: Option<f64>, base_ms: f64, equivalence: bool) -> ArmResult {
        let wall_ms = self.wall_ms();
        ArmResult {
            label,
            value,
            val_accuracy: self.accuracy.unwrap_or(f64::NAN),
            wall_ms,
            wall_ms_reps: self.step_ms.iter().map(|r| r.iter().flatten().sum()).collect(),
            epoch_ms_median: self.epoch_medians(),
            speedup: 1.0 - wall_ms / base_ms,
            failed: self.failed,
            equivalence,
        }
    }
}

/// Arms never run concurrently. Within a repetition they advance one
/// mini-batch at a time in rotating order, so machine load that drifts over
/// seconds lands on every arm alike instead of on whichever arm happened to
/// be running. Validation runs between steps and is not timed.
fn run_sweep(axis: SweepAxis, arms: Vec<ArmSpec>, cfg: &LdbConfig, task: &SweepTask<'_>) -> Result<SweepResult> {
    cfg.validate()?;
    if task.repetitions == 0 {
        return Err(LdbError::Config("repetitions must be >= 1".into()));
    }
    for (_, _, c, _) in &arms {
        c.validate()?;
    }
    let ds = task.dataset;
    let template = build_preset(&task.preset, ds.sample_shape(), ds.classes(), &task.preset_opts)?;
    let opts = TrainOptions {
        epochs: task.epochs,
        schedule: task.schedule,
        momentum: task.momentum,
        ..TrainOptions::default()
    };

    // Slot 0 is the baseline.
    let mut runs: Vec<ArmRuns> = (0..=arms.len()).map(|_| ArmRuns::new()).collect();
    for _ in 0..task.repetitions {
        let mut trainers: Vec<Option<Trainer<'_>>> = Vec::with_capacity(runs.len());
        trainers.push(Some(Trainer::baseline(template.clone(), ds, cfg.base_lr, cfg.base_batch, &opts)?));
        for (_, _, arm_cfg, _) in &arms {
            trainers.push(Some(Trainer::new(template.clone(), ds, arm_cfg, &opts)?));
        }
        for (i, r) in runs.iter().enumerate() {
            if r.failed.is_some() {
                trainers[i] = None;
            }
        }
        let n = trainers.len();
        let mut round = 0;
        while trainers.iter().flatten().any(|t| !t.is_done()) {
            for k in 0..n {
                let i = (round + k) % n;
                let Some(t) = trainers[i].as_mut().filter(|t| !t.is_done()) else { continue };
                let outcome = match t.train_next_step() {
                    Ok(Some(_)) => Ok(()),
                    Ok(None) => t.finish_epoch().map(|_| ()),
                    Err(e) => Err(e),
                };
                match outcome {
                    Ok(()) => {}
                    Err(e @ LdbError::Diverged { .. }) => {
                        runs[i].failed = Some(e.to_string());
                        trainers[i] = None;
                    }
                    Err(e) => return Err(e),
                }
            }
            round += 1;
        }
        for (t, r) in trainers.into_iter().zip(&mut runs) {
            if let Some(t) = t {
                r.record(t.report());
            }
        }
    }

    let mut runs = runs.into_iter();
    let base = runs.next().unwrap();
    let base_ms = base.wall_ms();
    let baseline = base.finish("baseline".into(), None, base_ms, false);
    let arms = arms
        .into_iter()
        .zip(runs)
        .map(|((label, v, _, eq), r)| r.finish(label, Some(v), base_ms, eq))
        .collect();
    Ok(SweepResult {
        axis,
        baseline,
        arms,
        repetitions: task.repetitions,
    })
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
