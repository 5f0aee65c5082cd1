use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ldb_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = [0 as c_char; 512];
    let n = unsafe { ldb_last_error_message(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn config(epochs: u32) -> LdbTrainConfig {
    let mut cfg = unsafe { std::mem::zeroed::<LdbTrainConfig>() };
    assert_eq!(unsafe { ldb_config_default(&mut cfg) }, LdbStatus::Ok);
    cfg.epochs = epochs;
    cfg
}

fn blobs() -> *mut LdbDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { ldb_dataset_blobs(300, 3, 6, 0.5, 1, &mut ds) }, LdbStatus::Ok);
    ds
}

fn mlp(seed: u64) -> *mut LdbNetwork {
    let mut net = ptr::null_mut();
    let shape = [6usize];
    let st = unsafe { ldb_network_from_preset(cstr("mlp-8").as_ptr(), shape.as_ptr(), 1, 3, 16, seed, &mut net) };
    assert_eq!(st, LdbStatus::Ok, "{}", last_error());
    net
}

#[test]
fn defaults_and_schedule_logic() {
    let cfg = config(30);
    assert_eq!((cfg.p, cfg.s, cfg.kappa, cfg.base_batch), (0.3, 2, 2.0, 128));
    assert_eq!(ldb_mode_for_epoch(0, 2), LdbMode::StandardSgd);
    assert_eq!(ldb_mode_for_epoch(4, 2), LdbMode::Drop);
    let (mut lr, mut batch) = (0.0, 0u32);
    let st = unsafe { ldb_adjust_hyperparams(LdbMode::Drop as u32, 0.1, &cfg, &mut lr, &mut batch) };
    assert_eq!(st, LdbStatus::Ok);
    assert_eq!((lr, batch), (0.1 / 0.3, 256));
    let st = unsafe { ldb_adjust_hyperparams(7, 0.1, &cfg, &mut lr, &mut batch) };
    assert_eq!(st, LdbStatus::InvalidArgument);
}

#[test]
fn train_evaluate_and_report() {
    let ds = blobs();
    let net = mlp(1);
    let cfg = config(4);
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { ldb_train(net, ds, &cfg, &mut report) }, LdbStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { ldb_report_epoch_count(report) }, 4);
    let mut e = unsafe { std::mem::zeroed::<LdbEpochSummary>() };
    assert_eq!(unsafe { ldb_report_epoch(report, 2, &mut e) }, LdbStatus::Ok);
    assert_eq!(e.mode, LdbMode::Drop);
    assert_eq!(e.batch, 256);
    assert_eq!(unsafe { ldb_report_epoch(report, 9, &mut e) }, LdbStatus::InvalidArgument);

    let mut acc = 0.0;
    assert_eq!(unsafe { ldb_evaluate(net, ds, LdbSplit::Val as u32, &mut acc) }, LdbStatus::Ok);
    assert_eq!(acc, unsafe { ldb_report_final_val_accuracy(report) });
    assert!(unsafe { ldb_report_total_wall_ms(report) } > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let d = cstr(dir.path().to_str().unwrap());
    assert_eq!(unsafe { ldb_report_emit(report, ptr::null(), d.as_ptr(), cstr("run").as_ptr()) }, LdbStatus::Ok);
    assert!(dir.path().join("run_summary.json").exists());

    unsafe {
        ldb_report_free(report);
        ldb_network_free(net);
        ldb_dataset_free(ds);
    }
}

#[test]
fn baseline_matches_degenerate_drop_config() {
    let ds = blobs();
    let (a, b) = (mlp(2), mlp(2));
    let mut cfg = config(3);
    cfg.p = 1.0;
    cfg.kappa = 1.0;
    cfg.s = 1;
    let (mut ra, mut rb) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(ldb_train(a, ds, &cfg, &mut ra), LdbStatus::Ok);
        assert_eq!(ldb_train_baseline(b, ds, &cfg, &mut rb), LdbStatus::Ok);
    }
    let x = [0.25; 6 * 4];
    let (mut la, mut lb) = ([0.0; 12], [0.0; 12]);
    unsafe {
        assert_eq!(ldb_network_forward(a, x.as_ptr(), 4, la.as_mut_ptr(), 12), LdbStatus::Ok);
        assert_eq!(ldb_network_forward(b, x.as_ptr(), 4, lb.as_mut_ptr(), 12), LdbStatus::Ok);
        ldb_report_free(ra);
        ldb_report_free(rb);
        ldb_network_free(a);
        ldb_network_free(b);
        ldb_dataset_free(ds);
    }
    assert_eq!(la.map(f64::to_bits), lb.map(f64::to_bits));
}

#[test]
fn checkpoint_round_trip() {
    let (a, b) = (mlp(3), mlp(4));
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path().join("n.bin").to_str().unwrap());
    let x = [0.5, -1.0, 2.0, 0.0, 1.0, -0.5];
    let (mut la, mut lb) = ([0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(ldb_network_save(a, path.as_ptr()), LdbStatus::Ok);
        assert_eq!(ldb_network_load(b, path.as_ptr()), LdbStatus::Ok);
        ldb_network_forward(a, x.as_ptr(), 1, la.as_mut_ptr(), 3);
        ldb_network_forward(b, x.as_ptr(), 1, lb.as_mut_ptr(), 3);
        assert_eq!(ldb_network_load(b, cstr("/nonexistent/n.bin").as_ptr()), LdbStatus::Io);
        ldb_network_free(a);
        ldb_network_free(b);
    }
    assert_eq!(la, lb);
}

#[test]
fn errors_map_to_status_codes() {
    let mut net = ptr::null_mut();
    let shape = [6usize];
    unsafe {
        assert_eq!(
            ldb_network_from_preset(cstr("vgg").as_ptr(), shape.as_ptr(), 1, 3, 8, 0, &mut net),
            LdbStatus::Config
        );
        assert!(last_error().contains("unknown preset"));
        assert_eq!(
            ldb_network_from_preset(ptr::null(), shape.as_ptr(), 1, 3, 8, 0, &mut net),
            LdbStatus::NullArgument
        );
        let mut ds = ptr::null_mut();
        assert_eq!(ldb_dataset_load_csv(cstr("/nonexistent.csv").as_ptr(), 0, &mut ds), LdbStatus::Io);
        assert_eq!(ldb_dataset_blobs(10, 1, 2, 0.5, 0, &mut ds), LdbStatus::Config);

        let ds = blobs();
        let net = mlp(0);
        let mut cfg = config(2);
        cfg.p = 0.0;
        let mut report = ptr::null_mut();
        assert_eq!(ldb_train(net, ds, &cfg, &mut report), LdbStatus::Config);
        assert!(report.is_null());
        let mut cfg = config(5);
        cfg.base_lr = 1e100;
        assert_eq!(ldb_train(net, ds, &cfg, &mut report), LdbStatus::Diverged);
        cfg = config(2);
        cfg.schedule = 9;
        assert_eq!(ldb_train(net, ds, &cfg, &mut report), LdbStatus::InvalidArgument);
        assert_eq!(ldb_dataset_len(ds, LdbSplit::Train as u32) + ldb_dataset_len(ds, LdbSplit::Val as u32), 300);
        assert_eq!(ldb_dataset_len(ds, 5), 0);
        ldb_network_free(net);
        ldb_dataset_free(ds);

        ldb_network_free(ptr::null_mut());
        assert_eq!(ldb_network_classes(ptr::null()), 0);
        assert!(ldb_report_final_val_accuracy(ptr::null()).is_nan());
    }
    let mut cfg = config(1);
    assert_eq!(unsafe { ldb_config_default(&mut cfg) }, LdbStatus::Ok);
    assert_eq!(unsafe { ldb_last_error_message(ptr::null_mut(), 0) }, 0);
}

#[test]
fn gradcheck_through_the_abi() {
    let (mut err, mut ok) = (f64::NAN, false);
    assert_eq!(unsafe { ldb_gradcheck(cstr("mlp-3").as_ptr(), 0, &mut err, &mut ok) }, LdbStatus::Ok);
    assert!(ok && err <= 1e-4, "{err}");
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ldb.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct LdbNetwork LdbNetwork;",
        "LDB_STATUS_DIVERGED = 9",
        "ldb_train(",
        "ldb_network_forward(",
        "ldb_last_error_message(",
        "ldb_dataset_load_idx(",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

/// Compiles a C program against the generated header and the static library
/// and runs it. Skipped when no C compiler is on PATH.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libldb_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("version "));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
