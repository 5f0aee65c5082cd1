//! Training loop: momentum SGD with per-epoch mode alternation, selective
//! backward and masked updates.

use std::path::PathBuf;
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::{Phase, PhaseTimer};
use crate::data::{Batch, Batches, Dataset, Split};
use crate::error::{LdbError, Result};
use crate::network::{cross_entropy_loss, save_checkpoint, LayerSet, Network};
use crate::scheduler::{plan_epoch, select_layers, selection_stream, EpochPlan, LdbConfig, LrSchedule, Mode};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Velocity per parameterized layer, indexed by layer id.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<(Tensor, Tensor)>>,
}

impl OptimizerState {
    pub fn new(net: &Network, momentum: f64) -> Self {
        let velocity = net
            .layers()
            .iter()
            .map(|l| Some((Tensor::zeros(l.weights.as_ref()?.shape()), Tensor::zeros(l.bias.as_ref()?.shape()))))
            .collect();
        OptimizerState {
            momentum,
            weight_decay: 0.0,
            velocity,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn velocity(&self, layer: usize) -> Option<(&Tensor, &Tensor)> {
        self.velocity.get(layer)?.as_ref().map(|(w, b)| (w, b))
    }
}

fn momentum_step(param: &mut Tensor, vel: &mut Tensor, grad: &Tensor, lr: f64, mu: f64, wd: f64) {
    assert_eq!(param.shape(), grad.shape(), "parameter/gradient shape drift");
    assert_eq!(param.shape(), vel.shape(), "parameter/velocity shape drift");
    for ((w, v), g) in param.data_mut().iter_mut().zip(vel.data_mut()).zip(grad.data()) {
        *v = mu * *v - lr * g;
        if wd != 0.0 {
            *w -= lr * wd * *w;
        }
        *w += *v;
    }
}

/// Momentum update restricted to `selected`; every other layer's weights and
/// velocity are left untouched.
pub fn apply_update(net: &mut Network, lr: f64, selected: &LayerSet, opt: &mut OptimizerState) {
    let (mu, wd) = (opt.momentum, opt.weight_decay);
    for &id in selected {
        let layer = net.layer_mut(id);
        let (vw, vb) = opt.velocity[id].as_mut().expect("velocity for parameterized layer");
        let (Some(w), Some(gw)) = (layer.weights.as_mut(), layer.weight_grad.as_ref()) else {
            panic!("layer {id} selected but has no weights/gradient");
        };
        momentum_step(w, vw, gw, lr, mu, wd);
        let (Some(b), Some(gb)) = (layer.bias.as_mut(), layer.bias_grad.as_ref()) else {
            panic!("layer {id} selected but has no bias/gradient");
        };
        momentum_step(b, vb, gb, lr, mu, 0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: Mode,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub selected: Vec<usize>,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub ms_forward: f64,
    pub ms_backward_dx: f64,
    pub ms_backward_dw: f64,
    pub ms_update: f64,
    pub ms_eval: f64,
    /// Epoch wall time excluding validation.
    pub ms_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub step_losses: Vec<StepLoss>,
    /// Per-step wall time in milliseconds, tagged with the epoch mode.
    pub step_ms: Vec<(Mode, f64)>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn best_val_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.val_accuracy).fold(0.0, f64::max)
    }

    pub fn final_val_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.val_accuracy)
    }

    /// Training wall time, validation excluded.
    pub fn total_wall_ms(&self) -> f64 {
        self.records.iter().map(|r| r.ms_train).sum()
    }

    pub fn drop_epochs(&self) -> usize {
        self.records.iter().filter(|r| r.mode == Mode::Drop).count()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Write a checkpoint every `k` epochs into `checkpoint_dir`.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Assemble batches on a background thread.
    pub prefetch: bool,
    pub eval_batch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            schedule: LrSchedule::Cosine,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: 0.0,
            checkpoint_every: None,
            checkpoint_dir: None,
            prefetch: false,
            eval_batch: 256,
        }
    }
}

/// Fraction of samples in `split` whose argmax logit equals the label.
/// An empty split scores 0.
pub fn evaluate(net: &Network, ds: &Dataset, split: Split) -> Result<f64> {
    let n = ds.indices(split).len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for batch in ds.sequential_batches(split, 256) {
        let logits = net.infer(&batch.features)?;
        correct += logits
            .argmax_rows()
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / n as f64)
}

#[derive(Debug, Clone, Default)]
pub struct EpochOutcome {
    pub mean_loss: f64,
    pub steps: usize,
    pub step_losses: Vec<f64>,
    pub step_ms: Vec<f64>,
}

/// One step: forward, loss, selective backward, masked update. Returns the
/// batch loss.
pub fn train_step(
    net: &mut Network,
    batch: &Batch,
    lr: f64,
    selected: &LayerSet,
    opt: &mut OptimizerState,
    timer: &mut PhaseTimer,
) -> Result<f64> {
    let logits = timer.time(Phase::Forward, || net.forward(&batch.features))?;
    let (loss, grad) = cross_entropy_loss(&logits, &batch.labels)?;
    if !loss.is_finite() {
        net.clear_cache();
        return Err(LdbError::Diverged { epoch: 0, step: 0, loss });
    }
    net.backward_selective(&grad, selected, Some(&mut *timer))?;
    timer.time(Phase::Update, || apply_update(net, lr, selected, opt));
    Ok(loss)
}

/// Selection redraw state for per-step reselection.
pub struct Reselect<'a> {
    pub cfg: &'a LdbConfig,
    pub rng: crate::rng::RngStream,
}

/// Runs one epoch of mini-batch steps under `plan`.
pub fn run_epoch(
    net: &mut Network,
    ds: &Dataset,
    plan: &EpochPlan,
    opt: &mut OptimizerState,
    timer: &mut PhaseTimer,
    mut reselect: Option<Reselect<'_>>,
    prefetch: bool,
) -> Result<EpochOutcome> {
    let batches = ds.batches(Split::Train, plan.batch, plan.epoch as u64);
    let mut out = EpochOutcome::default();
    let mut total = 0.0;
    let mut seen = 0usize;
    let mut selected = plan.selected.clone();
    let param_ids = net.param_layer_ids().to_vec();

    let mut step = |net: &mut Network, batch: Batch, out: &mut EpochOutcome| -> Result<()> {
        if out.steps > 0 && plan.mode == Mode::Drop {
            if let Some(r) = reselect.as_mut() {
                selected = select_layers(&param_ids, r.cfg, &mut r.rng).layers;
            }
        }
        let t0 = Instant::now();
        let loss = train_step(net, &batch, plan.lr, &selected, opt, timer).map_err(|e| match e {
            LdbError::Diverged { loss, .. } => LdbError::Diverged {
                epoch: plan.epoch,
                step: out.steps,
                loss,
            },
            e => e,
        })?;
        out.step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        out.step_losses.push(loss);
        total += loss * batch.len() as f64;
        seen += batch.len();
        out.steps += 1;
        Ok(())
    };

    if prefetch {
        std::thread::scope(|s| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Batch>(2);
            s.spawn(move || {
                for b in batches {
                    if tx.send(b).is_err() {
                        break;
                    }
                }
            });
            for b in rx {
                step(net, b, &mut out)?;
            }
            Ok(())
        })?;
    } else {
        for b in batches {
            step(net, b, &mut out)?;
        }
    }
    out.mean_loss = if seen > 0 { total / seen as f64 } else { 0.0 };
    Ok(out)
}

/// Epoch being trained one step at a time.
struct OpenEpoch<'a> {
    plan: EpochPlan,
    batches: Batches<'a>,
    reselect: Option<crate::rng::RngStream>,
    selected: LayerSet,
    timer: PhaseTimer,
    outcome: EpochOutcome,
    loss_sum: f64,
    seen: usize,
    ms_train: f64,
}

/// Epoch-at-a-time training state. [`train`] and [`train_baseline`] drive
/// one to completion; the sweeps interleave several, either by epoch or by
/// single steps through [`Trainer::train_next_step`].
pub struct Trainer<'a> {
    net: Network,
    ds: &'a Dataset,
    cfg: LdbConfig,
    opts: TrainOptions,
    force_standard: bool,
    opt: OptimizerState,
    report: TrainReport,
    param_ids: Vec<usize>,
    epoch: usize,
    open: Option<OpenEpoch<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: Network, ds: &'a Dataset, cfg: &LdbConfig, opts: &TrainOptions) -> Result<Self> {
        Self::build(net, ds, cfg.clone(), opts, false)
    }

    /// Every epoch StandardSGD at `(base_lr, base_batch)`.
    pub fn baseline(net: Network, ds: &'a Dataset, base_lr: f64, base_batch: usize, opts: &TrainOptions) -> Result<Self> {
        let cfg = LdbConfig {
            p: 1.0,
            kappa: 1.0,
            base_lr,
            base_batch,
            ..LdbConfig::default()
        };
        Self::build(net, ds, cfg, opts, true)
    }

    fn build(net: Network, ds: &'a Dataset, cfg: LdbConfig, opts: &TrainOptions, force_standard: bool) -> Result<Self> {
        cfg.validate()?;
        if ds.indices(Split::Train).is_empty() {
            return Err(LdbError::Data("training split is empty".into()));
        }
        if net.classes() != ds.classes() || net.input_shape() != ds.sample_shape() {
            return Err(LdbError::Config(format!(
                "network maps {:?} -> {} classes, dataset has {:?} -> {} classes",
                net.input_shape(),
                net.classes(),
                ds.sample_shape(),
                ds.classes()
            )));
        }
        let opt = OptimizerState::new(&net, opts.momentum).with_weight_decay(opts.weight_decay);
        let param_ids = net.param_layer_ids().to_vec();
        Ok(Trainer {
            net,
            ds,
            cfg,
            opts: opts.clone(),
            force_standard,
            opt,
            report: TrainReport::default(),
            param_ids,
            epoch: 0,
            open: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.opts.epochs
    }

    /// Index of the epoch currently being (or next to be) trained.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn into_parts(self) -> (Network, TrainReport) {
        (self.net, self.report)
    }

    pub fn plan_next(&self) -> EpochPlan {
        let epoch = self.epoch;
        let scheduled = self.opts.schedule.lr(self.cfg.base_lr, epoch, self.opts.epochs);
        if self.force_standard {
            EpochPlan {
                epoch,
                mode: Mode::StandardSgd,
                lr: scheduled,
                batch: self.cfg.base_batch,
                selected: self.param_ids.iter().copied().collect(),
                exclusions_cover_all: false,
            }
        } else {
            plan_epoch(epoch, &self.param_ids, &self.cfg, scheduled, &mut selection_stream(&self.cfg, epoch))
        }
    }

    fn open_epoch(&mut self) -> OpenEpoch<'a> {
        let plan = self.plan_next();
        if plan.exclusions_cover_all {
            self.report.warnings.push(format!(
                "epoch {}: head/tail exclusions cover all {} layers; nothing is dropped",
                plan.epoch,
                self.param_ids.len()
            ));
        }
        let reselect = (self.cfg.reselect_every_step && plan.mode == Mode::Drop).then(|| selection_stream(&self.cfg, plan.epoch));
        OpenEpoch {
            batches: self.ds.batches(Split::Train, plan.batch, plan.epoch as u64),
            selected: plan.selected.clone(),
            plan,
            reselect,
            timer: PhaseTimer::new(),
            outcome: EpochOutcome::default(),
            loss_sum: 0.0,
            seen: 0,
            ms_train: 0.0,
        }
    }

    /// Trains the next mini-batch of the current epoch, opening the epoch if
    /// needed. Returns `None` once the epoch has no batches left; call
    /// [`Trainer::finish_epoch`] to validate and record it.
    pub fn train_next_step(&mut self) -> Result<Option<f64>> {
        assert!(!self.is_done(), "all {} epochs already trained", self.opts.epochs);
        if self.open.is_none() {
            self.open = Some(self.open_epoch());
        }
        let ep = self.open.as_mut().unwrap();
        let t0 = Instant::now();
        let Some(batch) = ep.batches.next() else {
            return Ok(None);
        };
        if ep.outcome.steps > 0 {
            if let Some(rng) = ep.reselect.as_mut() {
                ep.selected = select_layers(&self.param_ids, &self.cfg, rng).layers;
            }
        }
        let loss = train_step(&mut self.net, &batch, ep.plan.lr, &ep.selected, &mut self.opt, &mut ep.timer).map_err(|e| match e {
            LdbError::Diverged { loss, .. } => LdbError::Diverged {
                epoch: ep.plan.epoch,
                step: ep.outcome.steps,
                loss,
            },
            e => e,
        })?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        ep.ms_train += ms;
        ep.outcome.step_ms.push(ms);
        ep.outcome.step_losses.push(loss);
        ep.loss_sum += loss * batch.len() as f64;
        ep.seen += batch.len();
        ep.outcome.steps += 1;
        Ok(Some(loss))
    }

    /// Trains whatever remains of the current epoch, validates, checkpoints
    /// if due, and returns the epoch's record.
    pub fn finish_epoch(&mut self) -> Result<&EpochRecord> {
        while self.train_next_step()?.is_some() {}
        let mut ep = self.open.take().expect("epoch opened by train_next_step");
        ep.outcome.mean_loss = if ep.seen > 0 { ep.loss_sum / ep.seen as f64 } else { 0.0 };
        self.close_epoch(ep.plan, ep.outcome, ep.timer, ep.ms_train)
    }

    /// Trains one full epoch. With prefetch enabled batches are assembled on
    /// a background thread.
    pub fn step_epoch(&mut self) -> Result<&EpochRecord> {
        if !self.opts.prefetch || self.open.is_some() {
            return self.finish_epoch();
        }
        assert!(!self.is_done(), "all {} epochs already trained", self.opts.epochs);
        let ep = self.open_epoch();
        let reselect = ep.reselect.map(|rng| Reselect { cfg: &self.cfg, rng });
        let mut timer = PhaseTimer::new();
        let t0 = Instant::now();
        let outcome = run_epoch(&mut self.net, self.ds, &ep.plan, &mut self.opt, &mut timer, reselect, true)?;
        let ms_train = t0.elapsed().as_secs_f64() * 1e3;
        self.close_epoch(ep.plan, outcome, timer, ms_train)
    }

    fn close_epoch(&mut self, plan: EpochPlan, outcome: EpochOutcome, mut timer: PhaseTimer, ms_train: f64) -> Result<&EpochRecord> {
        let epoch = plan.epoch;
        let val_accuracy = timer.time(Phase::Eval, || evaluate(&self.net, self.ds, Split::Val))?;
        let record = EpochRecord {
            epoch,
            mode: plan.mode,
            lr: plan.lr,
            batch: plan.batch,
            steps: outcome.steps,
            selected: plan.selected.iter().copied().collect(),
            train_loss: outcome.mean_loss,
            val_accuracy,
            ms_forward: timer.millis(Phase::Forward),
            ms_backward_dx: timer.millis(Phase::BackwardDx),
            ms_backward_dw: timer.millis(Phase::BackwardDw),
            ms_update: timer.millis(Phase::Update),
            ms_eval: timer.millis(Phase::Eval),
            ms_train,
        };
        self.report.step_losses.extend(
            outcome
                .step_losses
                .iter()
                .enumerate()
                .map(|(step, &loss)| StepLoss { epoch, step, loss }),
        );
        self.report.step_ms.extend(outcome.step_ms.iter().map(|&ms| (plan.mode, ms)));

        if let (Some(k), Some(dir)) = (self.opts.checkpoint_every, self.opts.checkpoint_dir.as_ref()) {
            if k > 0 && (epoch + 1) % k == 0 {
                save_checkpoint(&self.net, &dir.join(format!("ckpt_epoch{:04}.bin", epoch)))?;
            }
        }
        self.report.records.push(record);
        self.epoch += 1;
        Ok(self.report.records.last().unwrap())
    }
}

fn run(
    net: &mut Network,
    trainer: Result<Trainer<'_>>,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Network, &OptimizerState),
) -> Result<TrainReport> {
    let mut t = trainer?;
    let outcome = (|| {
        while !t.is_done() {
            t.step_epoch()?;
            on_epoch(t.report.records.last().unwrap(), &t.net, &t.opt);
        }
        Ok(())
    })();
    let (trained, report) = t.into_parts();
    *net = trained;
    outcome.map(|()| report)
}

/// LayerDropBack training.
pub fn train(net: &mut Network, ds: &Dataset, cfg: &LdbConfig, opts: &TrainOptions) -> Result<TrainReport> {
    train_with_callback(net, ds, cfg, opts, &mut |_, _, _| {})
}

/// As [`train`], calling `on_epoch` after every epoch (post-validation).
pub fn train_with_callback(
    net: &mut Network,
    ds: &Dataset,
    cfg: &LdbConfig,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Network, &OptimizerState),
) -> Result<TrainReport> {
    run(net, Trainer::new(net.clone(), ds, cfg, opts), on_epoch)
}

/// Plain mini-batch SGD with momentum: every epoch is a standard epoch.
pub fn train_baseline(
    net: &mut Network,
    ds: &Dataset,
    base_lr: f64,
    base_batch: usize,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    train_baseline_with_callback(net, ds, base_lr, base_batch, opts, &mut |_, _, _| {})
}

pub fn train_baseline_with_callback(
    net: &mut Network,
    ds: &Dataset,
    base_lr: f64,
    base_batch: usize,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Network, &OptimizerState),
) -> Result<TrainReport> {
    run(net, Trainer::baseline(net.clone(), ds, base_lr, base_batch, opts), on_epoch)
}
