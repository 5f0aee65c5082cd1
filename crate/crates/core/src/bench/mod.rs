//! Phase-resolved timing and the experiment drivers built on it.

mod sweep;
mod timer;

pub use sweep::{
    sweep_drop_rate, sweep_sampling_rate, ArmResult, SweepAxis, SweepResult, SweepTask,
};
pub use timer::{Phase, PhaseTimer};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{LdbError, Result};
use crate::network::{LayerSet, Network};
use std::time::Instant;

use crate::trainer::{train_step, OptimizerState};

pub const WARMUP_STEPS: usize = 5;
pub const MIN_MEASURED_STEPS: usize = 30;

/// Share of each step phase in `forward + backward_dx + backward_dw + update`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub forward: f64,
    pub backward_dx: f64,
    pub backward_dw: f64,
    pub update: f64,
    /// Absolute accumulated milliseconds per phase, same order.
    pub ms: [f64; 4],
    /// Wall time of each measured step, milliseconds.
    pub step_ms: Vec<f64>,
    pub steps: usize,
}

impl PhaseSplit {
    pub fn backward(&self) -> f64 {
        self.backward_dx + self.backward_dw
    }

    pub fn median_step_ms(&self) -> f64 {
        median(&self.step_ms)
    }

    fn from_timer(t: &PhaseTimer, step_ms: Vec<f64>, steps: usize) -> Result<Self> {
        if t.saw_non_monotonic_clock() {
            return Err(LdbError::Measurement("clock went backwards during measurement".into()));
        }
        let ms = Phase::STEP.map(|p| t.millis(p));
        let total: f64 = ms.iter().sum();
        if !(total > 0.0) {
            return Err(LdbError::Measurement("no time accumulated".into()));
        }
        Ok(PhaseSplit {
            forward: ms[0] / total,
            backward_dx: ms[1] / total,
            backward_dw: ms[2] / total,
            update: ms[3] / total,
            ms,
            step_ms,
            steps,
        })
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `steps` training steps of `batch` samples with weight gradients for
/// `selected` only, after `WARMUP_STEPS` untimed steps.
///
/// The network is trained in place with a small fixed learning rate; pass a
/// clone if the caller needs the original weights.
pub fn measure_phase_split(
    net: &mut Network,
    ds: &Dataset,
    steps: usize,
    batch: usize,
    selected: &LayerSet,
) -> Result<PhaseSplit> {
    if steps < MIN_MEASURED_STEPS {
        return Err(LdbError::Config(format!(
            "phase measurement needs at least {MIN_MEASURED_STEPS} steps, got {steps}"
        )));
    }
    if ds.indices(Split::Train).is_empty() {
        return Err(LdbError::Data("training split is empty".into()));
    }
    let mut opt = OptimizerState::new(net, 0.9);
    let mut timer = PhaseTimer::new();
    let mut step_ms = Vec::with_capacity(steps);
    let n_train = ds.indices(Split::Train).len();
    // Full batches only, so every measured step does the same work.
    let batch = batch.clamp(1, n_train);
    let mut done = 0usize;
    let mut epoch = 0u64;
    'outer: loop {
        let order = ds.epoch_order(Split::Train, epoch);
        for chunk in order.chunks_exact(batch) {
            if done == steps + WARMUP_STEPS {
                break 'outer;
            }
            let b = ds.gather(chunk)?;
            let mut t = PhaseTimer::new();
            let t0 = Instant::now();
            train_step(net, &b, 1e-3, selected, &mut opt, &mut t)?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            if done >= WARMUP_STEPS {
                timer.merge(&t);
                step_ms.push(ms);
            }
            done += 1;
        }
        epoch += 1;
    }
    PhaseSplit::from_timer(&timer, step_ms, steps)
}
