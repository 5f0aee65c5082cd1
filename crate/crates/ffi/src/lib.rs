//! C ABI over `ldb-core`.
//!
//! Networks, datasets and training reports cross the boundary as opaque
//! handles created and freed by this library. Every fallible call returns an
//! [`LdbStatus`]; on failure [`ldb_last_error_message`] describes the cause
//! for the calling thread. Panics never unwind into C: they surface as
//! `LDB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ldb_core::config::RunConfig;
use ldb_core::data::{load_csv, load_idx_images, synth_blobs, Dataset, Split};
use ldb_core::gradcheck::{gradcheck_preset, GradcheckOptions};
use ldb_core::network::{build_preset, load_checkpoint, save_checkpoint, PresetOptions};
use ldb_core::report::{emit_report, write_epoch_csv};
use ldb_core::scheduler::{adjust_hyperparams, mode_for_epoch, LrSchedule};
use ldb_core::trainer::{evaluate, train, train_baseline, TrainOptions, TrainReport};
use ldb_core::{LdbConfig, LdbError, Mode, Network, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Layer = 5,
    Data = 6,
    Format = 7,
    Io = 8,
    Diverged = 9,
    Measurement = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdbMode {
    StandardSgd = 0,
    Drop = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdbSchedule {
    Cosine = 0,
    Constant = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdbSplit {
    Train = 0,
    Val = 1,
}

/// Training configuration. Enum-typed settings are passed as their integer
/// values so that out-of-range input is reported instead of trusted.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdbTrainConfig {
    pub p: f64,
    pub s: u32,
    pub kappa: f64,
    pub base_lr: f64,
    pub base_batch: u32,
    pub keep_head: u32,
    pub keep_tail: u32,
    pub selection_seed: u64,
    pub reselect_every_step: bool,
    pub epochs: u32,
    /// An `LdbSchedule` value.
    pub schedule: u32,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdbEpochSummary {
    pub epoch: u32,
    pub mode: LdbMode,
    pub lr: f64,
    pub batch: u32,
    pub steps: u32,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub ms_forward: f64,
    pub ms_backward_dx: f64,
    pub ms_backward_dw: f64,
    pub ms_update: f64,
    pub ms_train: f64,
}

pub struct LdbNetwork {
    net: Network,
}

pub struct LdbDataset {
    ds: Dataset,
}

pub struct LdbReport {
    report: TrainReport,
}

struct Failure {
    status: LdbStatus,
    message: String,
}

impl Failure {
    fn new(status: LdbStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<LdbError> for Failure {
    fn from(e: LdbError) -> Self {
        let status = match e {
            LdbError::Shape { .. } => LdbStatus::Shape,
            LdbError::Layer { .. } => LdbStatus::Layer,
            LdbError::Config(_) => LdbStatus::Config,
            LdbError::Data(_) => LdbStatus::Data,
            LdbError::Format { .. } => LdbStatus::Format,
            LdbError::Diverged { .. } => LdbStatus::Diverged,
            LdbError::Measurement(_) => LdbStatus::Measurement,
            LdbError::Io { .. } => LdbStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> LdbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LdbStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            LdbStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(LdbStatus::NullArgument, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(LdbStatus::NullArgument, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(LdbStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(LdbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(Failure::new(LdbStatus::NullArgument, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn split(v: u32) -> Result<Split, Failure> {
    match v {
        0 => Ok(Split::Train),
        1 => Ok(Split::Val),
        _ => Err(Failure::new(LdbStatus::InvalidArgument, format!("bad split {v}"))),
    }
}

fn mode_to_c(m: Mode) -> LdbMode {
    match m {
        Mode::StandardSgd => LdbMode::StandardSgd,
        Mode::Drop => LdbMode::Drop,
    }
}

impl LdbTrainConfig {
    fn ldb(&self) -> LdbConfig {
        LdbConfig {
            p: self.p,
            s: self.s as usize,
            kappa: self.kappa,
            base_lr: self.base_lr,
            base_batch: self.base_batch as usize,
            keep_head: self.keep_head as usize,
            keep_tail: self.keep_tail as usize,
            selection_seed: self.selection_seed,
            reselect_every_step: self.reselect_every_step,
        }
    }

    fn options(&self) -> Result<TrainOptions, Failure> {
        let schedule = match self.schedule {
            0 => LrSchedule::Cosine,
            1 => LrSchedule::Constant,
            v => return Err(Failure::new(LdbStatus::InvalidArgument, format!("bad schedule {v}"))),
        };
        if self.epochs == 0 {
            return Err(Failure::new(LdbStatus::Config, "epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Failure::new(LdbStatus::Config, format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        Ok(TrainOptions {
            epochs: self.epochs as usize,
            schedule,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            ..TrainOptions::default()
        })
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ldb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length plus
/// one, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ldb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Fills `out` with the default configuration.
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn ldb_config_default(out: *mut LdbTrainConfig) -> LdbStatus {
    guard(|| {
        let rc = RunConfig::default();
        let c = rc.ldb();
        let cfg = LdbTrainConfig {
            p: c.p,
            s: c.s as u32,
            kappa: c.kappa,
            base_lr: c.base_lr,
            base_batch: c.base_batch as u32,
            keep_head: c.keep_head as u32,
            keep_tail: c.keep_tail as u32,
            selection_seed: c.selection_seed,
            reselect_every_step: c.reselect_every_step,
            epochs: rc.epochs as u32,
            schedule: match rc.schedule {
                LrSchedule::Cosine => LdbSchedule::Cosine as u32,
                LrSchedule::Constant => LdbSchedule::Constant as u32,
            },
            momentum: rc.momentum,
            weight_decay: rc.weight_decay,
        };
        write(out, cfg, "out")
    })
}

/// Drop or standard mode for `epoch` under sampling rate `s` (`s >= 1`).
#[no_mangle]
pub extern "C" fn ldb_mode_for_epoch(epoch: u32, s: u32) -> LdbMode {
    mode_to_c(mode_for_epoch(epoch as usize, s.max(1) as usize))
}

/// Learning rate and batch size for an epoch in `mode` (an `LdbMode` value).
///
/// # Safety
/// `cfg` must be null or valid; `out_lr` and `out_batch` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_adjust_hyperparams(
    mode: u32,
    scheduled_lr: f64,
    cfg: *const LdbTrainConfig,
    out_lr: *mut f64,
    out_batch: *mut u32,
) -> LdbStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?.ldb();
        cfg.validate()?;
        let mode = match mode {
            0 => Mode::StandardSgd,
            1 => Mode::Drop,
            v => return Err(Failure::new(LdbStatus::InvalidArgument, format!("bad mode {v}"))),
        };
        let (lr, batch) = adjust_hyperparams(mode, scheduled_lr, &cfg);
        write(out_lr, lr, "out_lr")?;
        write(out_batch, batch as u32, "out_batch")
    })
}

/// Builds a preset network (`mlp-<depth>`, `cnn-small`, `resnet-toy`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `input_shape` must point to
/// `rank` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_from_preset(
    name: *const c_char,
    input_shape: *const usize,
    rank: usize,
    classes: usize,
    width: usize,
    init_seed: u64,
    out: *mut *mut LdbNetwork,
) -> LdbStatus {
    guard(|| {
        let name = string(name, "name")?;
        if input_shape.is_null() || rank == 0 {
            return Err(Failure::new(LdbStatus::NullArgument, "input_shape is null or empty"));
        }
        let shape = std::slice::from_raw_parts(input_shape, rank);
        let net = build_preset(name, shape, classes, &PresetOptions { width, init_seed })?;
        write(out, Box::into_raw(Box::new(LdbNetwork { net })), "out")
    })
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_free(net: *mut LdbNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of input values per sample; 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_input_len(net: *const LdbNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_shape().iter().product())
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_classes(net: *const LdbNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.classes())
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_param_layer_count(net: *const LdbNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.param_layer_ids().len())
}

/// Inference on `batch` samples laid out row-major in `x`; writes
/// `batch * classes` logits to `out`.
///
/// # Safety
/// `x` must hold `batch * ldb_network_input_len(net)` values and `out`
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_forward(
    net: *const LdbNetwork,
    x: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> LdbStatus {
    guard(|| {
        let net = &deref(net, "net")?.net;
        if x.is_null() || out.is_null() {
            return Err(Failure::new(LdbStatus::NullArgument, "x or out is null"));
        }
        let need = batch * net.classes();
        if out_len < need {
            return Err(Failure::new(LdbStatus::BufferTooSmall, format!("out needs {need} values, got {out_len}")));
        }
        let per: usize = net.input_shape().iter().product();
        let mut shape = vec![batch];
        shape.extend_from_slice(net.input_shape());
        let input = Tensor::new(shape, std::slice::from_raw_parts(x, batch * per).to_vec())?;
        let logits = net.infer(&input)?;
        ptr::copy_nonoverlapping(logits.data().as_ptr(), out, need);
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_save(net: *const LdbNetwork, path: *const c_char) -> LdbStatus {
    guard(|| Ok(save_checkpoint(&deref(net, "net")?.net, Path::new(string(path, "path")?))?))
}

/// Loads parameters into an existing network of the same architecture.
///
/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ldb_network_load(net: *mut LdbNetwork, path: *const c_char) -> LdbStatus {
    guard(|| Ok(load_checkpoint(&mut deref_mut(net, "net")?.net, Path::new(string(path, "path")?))?))
}

unsafe fn dataset_out(out: *mut *mut LdbDataset, ds: Dataset) -> Outcome {
    write(out, Box::into_raw(Box::new(LdbDataset { ds })), "out")
}

/// Synthetic Gaussian blobs with an 80/20 train/validation split.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_dataset_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut LdbDataset,
) -> LdbStatus {
    guard(|| dataset_out(out, synth_blobs(n, classes, dim, noise_sigma, seed)?))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_dataset_load_csv(path: *const c_char, split_seed: u64, out: *mut *mut LdbDataset) -> LdbStatus {
    guard(|| dataset_out(out, load_csv(Path::new(string(path, "path")?), None, split_seed)?))
}

/// # Safety
/// `images` and `labels` must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_dataset_load_idx(
    images: *const c_char,
    labels: *const c_char,
    out: *mut *mut LdbDataset,
) -> LdbStatus {
    guard(|| {
        let ds = load_idx_images(Path::new(string(images, "images")?), Path::new(string(labels, "labels")?))?;
        dataset_out(out, ds)
    })
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ldb_dataset_free(ds: *mut LdbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Samples in `split` (an `LdbSplit` value); 0 for a null handle or an
/// unknown split.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_dataset_len(ds: *const LdbDataset, split_id: u32) -> usize {
    match (ds.as_ref(), split(split_id)) {
        (Some(d), Ok(s)) => d.ds.indices(s).len(),
        _ => 0,
    }
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_dataset_classes(ds: *const LdbDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.ds.classes())
}

/// Fraction of `split` classified correctly.
///
/// # Safety
/// `net` and `ds` must be live handles and `out_accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_evaluate(
    net: *const LdbNetwork,
    ds: *const LdbDataset,
    split_id: u32,
    out_accuracy: *mut f64,
) -> LdbStatus {
    guard(|| {
        let acc = evaluate(&deref(net, "net")?.net, &deref(ds, "ds")?.ds, split(split_id)?)?;
        write(out_accuracy, acc, "out_accuracy")
    })
}

unsafe fn run_training(
    net: *mut LdbNetwork,
    ds: *const LdbDataset,
    cfg: *const LdbTrainConfig,
    out: *mut *mut LdbReport,
    baseline: bool,
) -> LdbStatus {
    guard(|| {
        let net = &mut deref_mut(net, "net")?.net;
        let ds = &deref(ds, "ds")?.ds;
        let cfg = deref(cfg, "cfg")?;
        if out.is_null() {
            return Err(Failure::new(LdbStatus::NullArgument, "out is null"));
        }
        let opts = cfg.options()?;
        let ldb = cfg.ldb();
        let report = if baseline {
            train_baseline(net, ds, ldb.base_lr, ldb.base_batch, &opts)?
        } else {
            train(net, ds, &ldb, &opts)?
        };
        write(out, Box::into_raw(Box::new(LdbReport { report })), "out")
    })
}

/// Trains `net` in place and returns a report handle.
///
/// # Safety
/// `net` and `ds` must be live handles, `cfg` valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_train(
    net: *mut LdbNetwork,
    ds: *const LdbDataset,
    cfg: *const LdbTrainConfig,
    out: *mut *mut LdbReport,
) -> LdbStatus {
    run_training(net, ds, cfg, out, false)
}

/// Plain SGD at `cfg.base_lr` and `cfg.base_batch`; the drop settings are
/// ignored.
///
/// # Safety
/// As [`ldb_train`].
#[no_mangle]
pub unsafe extern "C" fn ldb_train_baseline(
    net: *mut LdbNetwork,
    ds: *const LdbDataset,
    cfg: *const LdbTrainConfig,
    out: *mut *mut LdbReport,
) -> LdbStatus {
    run_training(net, ds, cfg, out, true)
}

/// # Safety
/// `report` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_free(report: *mut LdbReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_epoch_count(report: *const LdbReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.records.len())
}

/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_epoch(report: *const LdbReport, index: usize, out: *mut LdbEpochSummary) -> LdbStatus {
    guard(|| {
        let r = &deref(report, "report")?.report;
        let rec = r
            .records
            .get(index)
            .ok_or_else(|| Failure::new(LdbStatus::InvalidArgument, format!("epoch {index} of {}", r.records.len())))?;
        let summary = LdbEpochSummary {
            epoch: rec.epoch as u32,
            mode: mode_to_c(rec.mode),
            lr: rec.lr,
            batch: rec.batch as u32,
            steps: rec.steps as u32,
            train_loss: rec.train_loss,
            val_accuracy: rec.val_accuracy,
            ms_forward: rec.ms_forward,
            ms_backward_dx: rec.ms_backward_dx,
            ms_backward_dw: rec.ms_backward_dw,
            ms_update: rec.ms_update,
            ms_train: rec.ms_train,
        };
        write(out, summary, "out")
    })
}

/// Final validation accuracy; NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_final_val_accuracy(report: *const LdbReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.final_val_accuracy())
}

/// Training wall time in milliseconds, validation excluded; NaN for a null
/// handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_total_wall_ms(report: *const LdbReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.total_wall_ms())
}

/// Writes the per-epoch CSV.
///
/// # Safety
/// `report` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_write_csv(report: *const LdbReport, path: *const c_char) -> LdbStatus {
    guard(|| Ok(write_epoch_csv(&deref(report, "report")?.report, Path::new(string(path, "path")?))?))
}

/// Writes `<stem>_epochs.csv`, `<stem>_summary.json` and `<stem>_loss.csv`
/// into `dir`. `baseline` may be null.
///
/// # Safety
/// `report` must be a live handle, `baseline` null or live, `dir` and
/// `stem` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ldb_report_emit(
    report: *const LdbReport,
    baseline: *const LdbReport,
    dir: *const c_char,
    stem: *const c_char,
) -> LdbStatus {
    guard(|| {
        let r = &deref(report, "report")?.report;
        let b = baseline.as_ref().map(|b| &b.report);
        emit_report(r, b, Path::new(string(dir, "dir")?), string(stem, "stem")?)?;
        Ok(())
    })
}

/// Finite-difference check of selective weight gradients on a small instance
/// of `preset`. `out_passed` is set when every relative error is within
/// tolerance and no unselected layer received a gradient.
///
/// # Safety
/// `preset` must be a NUL-terminated string; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldb_gradcheck(
    preset: *const c_char,
    seed: u64,
    out_max_rel_error: *mut f64,
    out_passed: *mut bool,
) -> LdbStatus {
    guard(|| {
        let r = gradcheck_preset(string(preset, "preset")?, &GradcheckOptions { seed, ..Default::default() })?;
        write(out_max_rel_error, r.max_rel_error, "out_max_rel_error")?;
        write(out_passed, r.passed(), "out_passed")
    })
}
