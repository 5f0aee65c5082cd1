use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Forward,
    BackwardDx,
    BackwardDw,
    Update,
    Eval,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Forward,
        Phase::BackwardDx,
        Phase::BackwardDw,
        Phase::Update,
        Phase::Eval,
    ];

    /// The four phases of a training step; evaluation is kept apart.
    pub const STEP: [Phase; 4] = [Phase::Forward, Phase::BackwardDx, Phase::BackwardDw, Phase::Update];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Forward => "forward",
            Phase::BackwardDx => "backward_dx",
            Phase::BackwardDw => "backward_dw",
            Phase::Update => "update",
            Phase::Eval => "eval",
        }
    }
}

/// Per-phase wall-clock accumulators.
///
/// Phases never nest. Untimed glue between phases (batch assembly, loss)
/// is not attributed to any phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseTimer {
    nanos: [u128; 5],
    counts: [u64; 5],
    non_monotonic: bool,
}

impl PhaseTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&self) -> Instant {
        Instant::now()
    }

    pub fn stop(&mut self, phase: Phase, started: Instant) {
        match Instant::now().checked_duration_since(started) {
            Some(d) => self.add(phase, d),
            None => self.non_monotonic = true,
        }
    }

    pub fn add(&mut self, phase: Phase, d: Duration) {
        self.nanos[phase.index()] += d.as_nanos();
        self.counts[phase.index()] += 1;
    }

    pub fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let t = self.start();
        let out = f();
        self.stop(phase, t);
        out
    }

    pub fn nanos(&self, phase: Phase) -> u128 {
        self.nanos[phase.index()]
    }

    pub fn millis(&self, phase: Phase) -> f64 {
        self.nanos[phase.index()] as f64 / 1e6
    }

    pub fn count(&self, phase: Phase) -> u64 {
        self.counts[phase.index()]
    }

    pub fn saw_non_monotonic_clock(&self) -> bool {
        self.non_monotonic
    }

    pub fn merge(&mut self, other: &PhaseTimer) {
        for i in 0..5 {
            self.nanos[i] += other.nanos[i];
            self.counts[i] += other.counts[i];
        }
        self.non_monotonic |= other.non_monotonic;
    }

    pub fn reset(&mut self) {
        *self = PhaseTimer::default();
    }

    /// Sum of the four step phases, in milliseconds.
    pub fn step_millis(&self) -> f64 {
        Phase::STEP.iter().map(|&p| self.millis(p)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulators_are_monotone() {
        let mut t = PhaseTimer::new();
        let mut last = 0;
        for _ in 0..10 {
            t.time(Phase::Forward, || std::hint::black_box((0..1000).sum::<u64>()));
            assert!(t.nanos(Phase::Forward) >= last);
            last = t.nanos(Phase::Forward);
        }
        assert_eq!(t.count(Phase::Forward), 10);
        assert_eq!(t.count(Phase::Update), 0);
        assert!(!t.saw_non_monotonic_clock());
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = PhaseTimer::new();
        a.add(Phase::Update, Duration::from_millis(2));
        let mut b = PhaseTimer::new();
        b.add(Phase::Update, Duration::from_millis(3));
        a.merge(&b);
        assert_eq!(a.count(Phase::Update), 2);
        assert_eq!(a.millis(Phase::Update), 5.0);
    }
}
