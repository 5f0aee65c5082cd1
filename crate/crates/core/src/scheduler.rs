//! LayerDropBack decision logic: which epochs drop, which layers stay
//! selected, and how learning rate and batch size are rescaled.
//!
//! Everything here is a pure function of its inputs. Layer selection draws
//! from a per-epoch stream, see [`selection_stream`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LdbError, Result};
use crate::network::LayerSet;
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdbConfig {
    /// Selection probability: a droppable layer is selected iff `u < p`.
    pub p: f64,
    /// Sampling rate: every `s`-th epoch (after epoch 0) is a drop epoch.
    pub s: usize,
    /// Batch multiplier for drop epochs.
    pub kappa: f64,
    pub base_lr: f64,
    pub base_batch: usize,
    /// Leading parameterized layers that are always selected.
    pub keep_head: usize,
    /// Trailing parameterized layers that are always selected.
    pub keep_tail: usize,
    pub selection_seed: u64,
    /// Redraw the selected set before every mini-batch instead of once per epoch.
    pub reselect_every_step: bool,
}

impl Default for LdbConfig {
    fn default() -> Self {
        LdbConfig {
            p: 0.3,
            s: 2,
            kappa: 2.0,
            base_lr: 0.1,
            base_batch: 128,
            keep_head: 4,
            keep_tail: 1,
            selection_seed: 0,
            reselect_every_step: false,
        }
    }
}

impl LdbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(LdbError::Config(format!("p must be in (0,1], got {}", self.p)));
        }
        if self.s < 1 {
            return Err(LdbError::Config("s must be at least 1".into()));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(LdbError::Config(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(LdbError::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if self.base_batch < 1 {
            return Err(LdbError::Config("base_batch must be at least 1".into()));
        }
        Ok(())
    }

    /// Configuration under which every drop epoch behaves like a standard one.
    pub fn is_degenerate(&self) -> bool {
        self.p == 1.0 && self.kappa == 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "standard")]
    StandardSgd,
    #[serde(rename = "drop")]
    Drop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StandardSgd => "standard",
            Mode::Drop => "drop",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Drop iff `e mod s == 0` and `e > 0`.
pub fn mode_for_epoch(epoch: usize, s: usize) -> Mode {
    debug_assert!(s >= 1);
    if epoch > 0 && epoch % s == 0 {
        Mode::Drop
    } else {
        Mode::StandardSgd
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub layers: LayerSet,
    /// Head and tail exclusions covered every layer; nothing was sampled.
    pub exclusions_cover_all: bool,
}

/// Samples the selected layer set.
///
/// The first `keep_head` and last `keep_tail` ids are always selected. Every
/// other id, in forward order, consumes exactly one uniform draw `u` and is
/// selected iff `u < p`. If that leaves the set empty (possible only with no
/// exclusions), the id with the smallest draw is selected.
pub fn select_layers(param_ids: &[usize], cfg: &LdbConfig, rng: &mut RngStream) -> Selection {
    assert!(!param_ids.is_empty(), "select_layers on a network without parameters");
    let n = param_ids.len();
    let head = cfg.keep_head.min(n);
    let tail_start = n.saturating_sub(cfg.keep_tail).max(head);

    let mut layers: LayerSet = param_ids[..head].iter().chain(&param_ids[tail_start..]).copied().collect();
    let droppable = &param_ids[head..tail_start];
    let mut smallest: Option<(f64, usize)> = None;
    for &id in droppable {
        let u = rng.next_uniform();
        if u < cfg.p {
            layers.insert(id);
        }
        if smallest.is_none_or(|(best, _)| u < best) {
            smallest = Some((u, id));
        }
    }
    if layers.is_empty() {
        if let Some((_, id)) = smallest {
            layers.insert(id);
        }
    }
    Selection {
        layers,
        exclusions_cover_all: droppable.is_empty(),
    }
}

/// Returns `(lr, batch)` for the epoch.
pub fn adjust_hyperparams(mode: Mode, scheduled_lr: f64, cfg: &LdbConfig) -> (f64, usize) {
    match mode {
        Mode::StandardSgd => (scheduled_lr, cfg.base_batch),
        Mode::Drop => (scheduled_lr / cfg.p, round_half_up(cfg.kappa * cfg.base_batch as f64)),
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(1.0) as usize
}

/// Selection stream for `epoch`: a fresh stream per epoch, so a plan depends
/// only on `(cfg, epoch)`.
pub fn selection_stream(cfg: &LdbConfig, epoch: usize) -> RngStream {
    RngStream::derive(cfg.selection_seed, Purpose::Selection, epoch as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub epoch: usize,
    pub mode: Mode,
    pub lr: f64,
    pub batch: usize,
    pub selected: LayerSet,
    pub exclusions_cover_all: bool,
}

pub fn plan_epoch(
    epoch: usize,
    param_ids: &[usize],
    cfg: &LdbConfig,
    scheduled_lr: f64,
    rng: &mut RngStream,
) -> EpochPlan {
    let mode = mode_for_epoch(epoch, cfg.s);
    let (lr, batch) = adjust_hyperparams(mode, scheduled_lr, cfg);
    let (selected, exclusions_cover_all) = match mode {
        Mode::StandardSgd => (param_ids.iter().copied().collect(), false),
        Mode::Drop => {
            let sel = select_layers(param_ids, cfg, rng);
            (sel.layers, sel.exclusions_cover_all)
        }
    };
    EpochPlan {
        epoch,
        mode,
        lr,
        batch,
        selected,
        exclusions_cover_all,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Learning rate for `epoch` of `total` before any drop-epoch scaling.
    pub fn lr(self, base: f64, epoch: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = epoch as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (PI * t).cos())
            }
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = LdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(LdbError::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(p: f64) -> LdbConfig {
        LdbConfig { p, ..LdbConfig::default() }
    }

    #[test]
    fn epoch_zero_is_standard() {
        assert_eq!(mode_for_epoch(0, 5), Mode::StandardSgd);
        assert_eq!(mode_for_epoch(0, 1), Mode::StandardSgd);
    }

    #[test]
    fn mode_follows_modulus() {
        assert_eq!(mode_for_epoch(5, 5), Mode::Drop);
        assert_eq!(mode_for_epoch(7, 5), Mode::StandardSgd);
        assert_eq!(mode_for_epoch(3, 1), Mode::Drop);
    }

    #[test]
    fn p_one_selects_everything() {
        let ids: Vec<usize> = (0..10).map(|i| i * 2).collect();
        let sel = select_layers(&ids, &cfg(1.0), &mut RngStream::new(3));
        assert_eq!(sel.layers, ids.iter().copied().collect());
    }

    #[test]
    fn tiny_p_keeps_only_exclusions() {
        let ids: Vec<usize> = (0..10).collect();
        let sel = select_layers(&ids, &cfg(f64::MIN_POSITIVE), &mut RngStream::new(3));
        assert_eq!(sel.layers, [0, 1, 2, 3, 9].into_iter().collect());
        assert!(!sel.exclusions_cover_all);
    }

    #[test]
    fn selection_replays_documented_draw_order() {
        let ids: Vec<usize> = (0..10).collect();
        let c = LdbConfig {
            p: 0.3,
            selection_seed: 7,
            ..LdbConfig::default()
        };
        let got = select_layers(&ids, &c, &mut selection_stream(&c, 0));

        // Replay: one draw per droppable id (4..=8), forward order.
        let mut replay = RngStream::derive(7, Purpose::Selection, 0);
        let mut want: LayerSet = [0, 1, 2, 3, 9].into_iter().collect();
        for id in 4..9 {
            if replay.next_uniform() < 0.3 {
                want.insert(id);
            }
        }
        assert_eq!(got.layers, want);
    }

    #[test]
    fn exclusions_covering_everything_are_flagged() {
        let ids = [0, 2, 4];
        let sel = select_layers(&ids, &cfg(0.3), &mut RngStream::new(0));
        assert_eq!(sel.layers, ids.iter().copied().collect());
        assert!(sel.exclusions_cover_all);
    }

    #[test]
    fn never_empty_without_exclusions() {
        let c = LdbConfig {
            p: f64::MIN_POSITIVE,
            keep_head: 0,
            keep_tail: 0,
            ..LdbConfig::default()
        };
        let ids: Vec<usize> = (0..6).collect();
        let sel = select_layers(&ids, &c, &mut RngStream::new(1));
        assert_eq!(sel.layers.len(), 1);
    }

    #[test]
    fn drop_scaling() {
        let c = LdbConfig {
            p: 0.3,
            kappa: 2.0,
            base_batch: 128,
            ..LdbConfig::default()
        };
        let (lr, b) = adjust_hyperparams(Mode::Drop, 0.1, &c);
        assert_eq!(lr, 0.1 / 0.3);
        assert_eq!(b, 256);
        assert_eq!(adjust_hyperparams(Mode::StandardSgd, 0.05, &c), (0.05, 128));
    }

    #[test]
    fn batch_rounds_half_up() {
        let c = LdbConfig {
            kappa: 1.5,
            base_batch: 3,
            ..LdbConfig::default()
        };
        assert_eq!(adjust_hyperparams(Mode::Drop, 1.0, &c).1, 5);
    }

    #[test]
    fn validation_messages() {
        let err = cfg(0.0).validate().unwrap_err().to_string();
        assert!(err.contains("p must be in (0,1]"), "{err}");
        assert!(cfg(1.5).validate().is_err());
        assert!(LdbConfig { s: 0, ..LdbConfig::default() }.validate().is_err());
        assert!(LdbConfig { kappa: 0.5, ..LdbConfig::default() }.validate().is_err());
        assert!(LdbConfig::default().validate().is_ok());
    }

    #[test]
    fn plan_at_epoch_zero_is_full() {
        let ids: Vec<usize> = (0..8).collect();
        let c = LdbConfig { s: 1, ..LdbConfig::default() };
        let plan = plan_epoch(0, &ids, &c, 0.1, &mut selection_stream(&c, 0));
        assert_eq!(plan.mode, Mode::StandardSgd);
        assert_eq!(plan.selected.len(), 8);
        assert_eq!((plan.lr, plan.batch), (0.1, 128));
    }

    #[test]
    fn degenerate_drop_plan_matches_standard() {
        let ids: Vec<usize> = (0..8).collect();
        let c = LdbConfig {
            p: 1.0,
            kappa: 1.0,
            s: 3,
            ..LdbConfig::default()
        };
        let drop = plan_epoch(3, &ids, &c, 0.07, &mut selection_stream(&c, 3));
        let std = plan_epoch(2, &ids, &c, 0.07, &mut selection_stream(&c, 2));
        assert_eq!(drop.mode, Mode::Drop);
        assert_eq!((drop.lr, drop.batch, &drop.selected), (std.lr, std.batch, &std.selected));
    }

    #[test]
    fn drop_plan_uses_replayed_selection() {
        let ids: Vec<usize> = (0..10).collect();
        let c = LdbConfig {
            p: 0.3,
            s: 2,
            selection_seed: 12,
            ..LdbConfig::default()
        };
        let plan = plan_epoch(2, &ids, &c, 0.1, &mut selection_stream(&c, 2));
        let mut replay = RngStream::derive(12, Purpose::Selection, 2);
        let mut want: LayerSet = [0, 1, 2, 3, 9].into_iter().collect();
        for id in 4..9 {
            if replay.next_uniform() < 0.3 {
                want.insert(id);
            }
        }
        assert_eq!(plan.mode, Mode::Drop);
        assert_eq!(plan.selected, want);
        assert_eq!(plan.lr, 0.1 / 0.3);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Cosine.lr(0.1, 0, 10), 0.1);
        assert!((LrSchedule::Cosine.lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.lr(0.1, 7, 10), 0.1);
    }

    proptest! {
        #[test]
        fn drop_epoch_count_is_floor(e_total in 1usize..200, s in 1usize..20) {
            let drops = (0..e_total).filter(|&e| mode_for_epoch(e, s) == Mode::Drop).count();
            // epochs 0..E: drop epochs are the positive multiples of s below E
            prop_assert_eq!(drops, (e_total - 1) / s);
        }

        #[test]
        fn exclusions_always_present(seed in any::<u64>(), n in 1usize..30, p in 0.01f64..1.0) {
            let ids: Vec<usize> = (0..n).collect();
            let c = LdbConfig { p, ..LdbConfig::default() };
            let sel = select_layers(&ids, &c, &mut RngStream::new(seed));
            for id in ids.iter().take(4).chain(ids.last()) {
                prop_assert!(sel.layers.contains(id));
            }
        }

        #[test]
        fn degenerate_config_passes_hyperparams_through(lr in 1e-6f64..10.0, b in 1usize..1024) {
            let c = LdbConfig { p: 1.0, kappa: 1.0, base_batch: b, ..LdbConfig::default() };
            for mode in [Mode::Drop, Mode::StandardSgd] {
                prop_assert_eq!(adjust_hyperparams(mode, lr, &c), (lr, b));
            }
        }
    }
}
