//! Acceptance suite. Runs every criterion in order, one at a time, and prints
//! a PASS/FAIL line for each. Serial execution matters: criteria 8 and 9 time
//! training steps and would be skewed by anything running beside them.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ldb_core::bench::{measure_phase_split, median, sweep_sampling_rate, PhaseSplit, SweepTask};
use ldb_core::config::RunConfig;
use ldb_core::data::{synth_blobs, Dataset, Split};
use ldb_core::gradcheck::{gradcheck_preset, GradcheckOptions};
use ldb_core::network::{build_preset, load_checkpoint, save_checkpoint, write_checkpoint, PresetOptions};
use ldb_core::scheduler::{adjust_hyperparams, mode_for_epoch, select_layers, selection_stream, LrSchedule};
use ldb_core::trainer::{evaluate, train, train_baseline, TrainOptions, Trainer};
use ldb_core::{LdbConfig, Mode, Network};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn blobs() -> Dataset {
    synth_blobs(2000, 3, 16, 0.5, 0).unwrap()
}

fn mlp8(ds: &Dataset, width: usize) -> Network {
    build_preset("mlp-8", ds.sample_shape(), ds.classes(), &PresetOptions { width, init_seed: 0 }).unwrap()
}

fn checkpoint_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).unwrap();
    buf
}

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let opts = GradcheckOptions::default();
    check(opts.step == 1e-5 && opts.tolerance == 1e-4 && opts.sets == 10, "gradcheck defaults drifted")?;
    let mut worst = 0.0f64;
    for preset in ["mlp-8", "cnn-small", "resnet-toy"] {
        let r = gradcheck_preset(preset, &opts).map_err(|e| e.to_string())?;
        check(r.sets.len() == 10, format!("{preset}: {} sets", r.sets.len()))?;
        check(r.passed(), format!("{preset}: max rel {:.3e}, worst {:?}, leaked {:?}", r.max_rel_error, r.worst, r.leaked_layers))?;
        worst = worst.max(r.max_rel_error);
    }
    within(t0.elapsed(), 60)?;
    Ok(format!("max rel error {worst:.2e} over 3 presets x 10 sets in {:.1}s", t0.elapsed().as_secs_f64()))
}

fn masking() -> Outcome {
    let t0 = Instant::now();
    let ds = blobs();
    let cfg = LdbConfig { s: 1, base_lr: 0.02, ..LdbConfig::default() };
    let opts = TrainOptions { epochs: 2, ..TrainOptions::default() };
    let mut t = Trainer::new(mlp8(&ds, 32), &ds, &cfg, &opts).map_err(|e| e.to_string())?;
    t.step_epoch().map_err(|e| e.to_string())?;

    let plan = t.plan_next();
    check(plan.mode == Mode::Drop, "epoch 1 with s=1 must be a drop epoch")?;
    let before_net = t.network().clone();
    let before_opt = t.optimizer().clone();
    t.step_epoch().map_err(|e| e.to_string())?;

    let ids = before_net.param_layer_ids().to_vec();
    check(plan.selected.len() < ids.len(), format!("S = {:?} drops nothing", plan.selected))?;
    for &id in &ids {
        let (a, b) = (before_net.layer(id), t.network().layer(id));
        let (va, vb) = (before_opt.velocity(id).unwrap(), t.optimizer().velocity(id).unwrap());
        let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
        let params_same = same(a.weights.as_ref().unwrap().data(), b.weights.as_ref().unwrap().data())
            && same(a.bias.as_ref().unwrap().data(), b.bias.as_ref().unwrap().data());
        let vel_same = same(va.0.data(), vb.0.data()) && same(va.1.data(), vb.1.data());
        if plan.selected.contains(&id) {
            check(!params_same && !vel_same, format!("selected layer {id} did not change"))?;
        } else {
            check(params_same && vel_same, format!("unselected layer {id} changed"))?;
        }
    }
    within(t0.elapsed(), 10)?;
    Ok(format!("S = {:?} of {:?}", plan.selected, ids))
}

fn baseline_equivalence() -> Outcome {
    let t0 = Instant::now();
    let ds = blobs();
    let cfg = LdbConfig { p: 1.0, kappa: 1.0, s: 1, base_lr: 0.02, ..LdbConfig::default() };
    let opts = TrainOptions { epochs: 5, ..TrainOptions::default() };
    let net = mlp8(&ds, 32);
    let mut ldb = Trainer::new(net.clone(), &ds, &cfg, &opts).map_err(|e| e.to_string())?;
    let mut base = Trainer::baseline(net, &ds, cfg.base_lr, cfg.base_batch, &opts).map_err(|e| e.to_string())?;
    let mut drops = 0;
    for e in 0..5 {
        drops += usize::from(ldb.step_epoch().map_err(|e| e.to_string())?.mode == Mode::Drop);
        base.step_epoch().map_err(|e| e.to_string())?;
        check(
            checkpoint_bytes(ldb.network()) == checkpoint_bytes(base.network()),
            format!("checkpoints differ after epoch {e}"),
        )?;
    }
    check(drops == 4, format!("expected 4 drop epochs, ran {drops}"))?;
    within(t0.elapsed(), 30)?;
    Ok(format!("5 epochs ({drops} in drop mode) bit-identical"))
}

fn schedule_law() -> Outcome {
    const E: usize = 40;
    check(mode_for_epoch(0, 1) == Mode::StandardSgd, "e=0 is drop for s=1")?;
    let mut counts = Vec::new();
    for s in 1..=8usize {
        check(mode_for_epoch(0, s) == Mode::StandardSgd, format!("e=0 is drop for s={s}"))?;
        let count = (1..=E).filter(|&e| mode_for_epoch(e, s) == Mode::Drop).count();
        // Multiples of s in 1..=E, by repeated subtraction.
        let mut want = 0;
        let mut left = E;
        while left >= s {
            left -= s;
            want += 1;
        }
        check(count == want, format!("s={s}: {count} drop epochs, want {want}"))?;
        counts.push(count);
    }
    Ok(format!("drop counts for s=1..8: {counts:?}"))
}

fn selection_statistics() -> Outcome {
    let t0 = Instant::now();
    let net = build_preset("mlp-20", &[4], 2, &PresetOptions { width: 4, init_seed: 0 }).unwrap();
    let ids = net.param_layer_ids().to_vec();
    check(ids.len() == 20, format!("mlp-20 has {} parameterized layers", ids.len()))?;
    let cfg = LdbConfig::default();
    const N: usize = 10_000;
    let mut hits = vec![0usize; ids.len()];
    for draw in 0..N {
        let cfg = LdbConfig { selection_seed: draw as u64, ..cfg.clone() };
        let sel = select_layers(&ids, &cfg, &mut selection_stream(&cfg, 1)).layers;
        for (k, id) in ids.iter().enumerate() {
            hits[k] += usize::from(sel.contains(id));
        }
    }
    let mut worst: f64 = 0.0;
    for (k, &h) in hits.iter().enumerate() {
        let f = h as f64 / N as f64;
        if k < cfg.keep_head || k >= ids.len() - cfg.keep_tail {
            check(f == 1.0, format!("excluded layer {k} frequency {f}"))?;
        } else {
            check((f - cfg.p).abs() <= 0.02, format!("layer {k} frequency {f}"))?;
            worst = worst.max((f - cfg.p).abs());
        }
    }
    within(t0.elapsed(), 5)?;
    Ok(format!("max |freq - p| = {worst:.4} over {} droppable layers", ids.len() - 5))
}

fn hyperparameter_scaling() -> Outcome {
    let cfg = LdbConfig { p: 0.3, kappa: 2.0, base_batch: 128, ..LdbConfig::default() };
    let (lr, batch) = adjust_hyperparams(Mode::Drop, 0.1, &cfg);
    let third = 1.0f64 / 3.0;
    let ulps = (lr.to_bits() as i64 - third.to_bits() as i64).abs();
    check(lr == 0.1 / 0.3, format!("lr {lr:e} is not 0.1/0.3"))?;
    check(ulps <= 1, format!("lr {lr:e} is {ulps} ulps from 1/3"))?;
    check(batch == 256, format!("batch {batch}"))?;
    let (lr_std, batch_std) = adjust_hyperparams(Mode::StandardSgd, 0.1, &cfg);
    check(lr_std == 0.1 && batch_std == 128, "standard epoch must keep (lr, batch)")?;
    Ok(format!("lr' = {lr:?} ({ulps} ulp from 1/3), batch' = {batch}"))
}

fn inference_identity() -> Outcome {
    let t0 = Instant::now();
    let ds = blobs();
    let mut net = mlp8(&ds, 32);
    let cfg = LdbConfig { base_lr: 0.02, ..LdbConfig::default() };
    train(&mut net, &ds, &cfg, &TrainOptions { epochs: 3, ..TrainOptions::default() }).map_err(|e| e.to_string())?;
    let acc = evaluate(&net, &ds, Split::Val).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.bin");
    save_checkpoint(&net, &path).map_err(|e| e.to_string())?;
    let mut loaded = build_preset("mlp-8", ds.sample_shape(), ds.classes(), &PresetOptions { width: 32, init_seed: 99 }).unwrap();
    load_checkpoint(&mut loaded, &path).map_err(|e| e.to_string())?;

    let idx: Vec<usize> = ds.indices(Split::Val)[..32].to_vec();
    let x = ds.gather(&idx).unwrap().features;
    let (a, b) = (net.infer(&x).unwrap(), loaded.infer(&x).unwrap());
    check(
        a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()),
        "logits differ after reload",
    )?;
    let acc2 = evaluate(&loaded, &ds, Split::Val).map_err(|e| e.to_string())?;
    check(acc == acc2, format!("accuracy {acc} vs {acc2}"))?;
    within(t0.elapsed(), 10)?;
    Ok(format!("val accuracy {acc:.4} before and after reload; 32x{} logits bit-identical", a.shape()[1]))
}

fn backward_dominance() -> Outcome {
    let t0 = Instant::now();
    let ds = blobs();
    let net = mlp8(&ds, 256);
    let full = net.all_param_layers();
    let cfg = LdbConfig::default();
    let drop_set = select_layers(net.param_layer_ids(), &cfg, &mut selection_stream(&cfg, 1)).layers;
    check(drop_set.len() < full.len(), format!("S = {drop_set:?} is not a proper subset"))?;
    let (mut f, mut d): (Vec<PhaseSplit>, Vec<PhaseSplit>) = (Vec::new(), Vec::new());
    for _ in 0..5 {
        f.push(measure_phase_split(&mut net.clone(), &ds, 30, 128, &full).map_err(|e| e.to_string())?);
        d.push(measure_phase_split(&mut net.clone(), &ds, 30, 128, &drop_set).map_err(|e| e.to_string())?);
    }
    let med = |v: &[PhaseSplit], g: fn(&PhaseSplit) -> f64| median(&v.iter().map(g).collect::<Vec<_>>());
    let (bwd, fwd) = (med(&f, PhaseSplit::backward), med(&f, |s| s.forward));
    let (ms_std, ms_drop) = (med(&f, PhaseSplit::median_step_ms), med(&d, PhaseSplit::median_step_ms));
    check(bwd > fwd, format!("backward share {bwd:.3} <= forward share {fwd:.3}"))?;
    check(ms_drop < ms_std, format!("drop step {ms_drop:.2} ms >= standard step {ms_std:.2} ms"))?;
    within(t0.elapsed(), 120)?;
    Ok(format!(
        "backward {bwd:.3} vs forward {fwd:.3}; step ms standard {ms_std:.2} drop {ms_drop:.2} (S = {drop_set:?})"
    ))
}

fn sweep_monotonicity() -> Outcome {
    let t0 = Instant::now();
    let ds = blobs();
    let cfg = LdbConfig { base_lr: 0.02, ..LdbConfig::default() };
    let task = SweepTask {
        preset: "mlp-8".into(),
        preset_opts: PresetOptions { width: 256, init_seed: 0 },
        dataset: &ds,
        epochs: 13,
        schedule: LrSchedule::Cosine,
        momentum: 0.9,
        repetitions: 5,
    };
    let r = sweep_sampling_rate(&[1.0, 2.0, 4.0, 8.0], &cfg, &task).map_err(|e| e.to_string())?;
    check(!r.any_failed(), "an arm failed")?;
    let speedups: Vec<f64> = r.arms.iter().map(|a| a.speedup).collect();
    for w in speedups.windows(2) {
        check(w[0] >= w[1], format!("speedup not nonincreasing in s: {speedups:?}"))?;
    }
    check(speedups.iter().all(|&s| s <= speedups[0]), format!("s=1 is not the maximum: {speedups:?}"))?;
    for a in &r.arms {
        check(
            (a.val_accuracy - r.baseline.val_accuracy).abs() <= 0.03,
            format!("{} accuracy {} vs baseline {}", a.label, a.val_accuracy, r.baseline.val_accuracy),
        )?;
    }
    within(t0.elapsed(), 600)?;
    let s: Vec<String> = speedups.iter().map(|v| format!("{:+.1}%", v * 100.0)).collect();
    Ok(format!("speedups for s=1,2,4,8: {} in {:.0}s", s.join(" "), t0.elapsed().as_secs_f64()))
}

fn end_to_end_quality() -> Outcome {
    let t0 = Instant::now();
    let rc = RunConfig::default();
    check(rc.blobs_n == 2000 && rc.blobs_sigma == 0.5 && rc.epochs == 30 && rc.preset == "mlp-8", "defaults drifted")?;
    let ldb_cfg = rc.ldb();
    check(ldb_cfg.p == 0.3 && ldb_cfg.s == 2 && ldb_cfg.kappa == 2.0, "default p/s/kappa drifted")?;
    let ds = rc.load_dataset().map_err(|e| e.to_string())?;
    let init = rc.build_network(&ds).map_err(|e| e.to_string())?;
    let opts = rc.train_options();
    let ldb = train(&mut init.clone(), &ds, &ldb_cfg, &opts).map_err(|e| e.to_string())?;
    let base = train_baseline(&mut init.clone(), &ds, rc.base_lr, rc.base_batch, &opts).map_err(|e| e.to_string())?;
    let (a, b) = (ldb.final_val_accuracy(), base.final_val_accuracy());
    check(b >= 0.97, format!("baseline accuracy {b}"))?;
    check((a - b).abs() <= 0.02, format!("ldb {a} vs baseline {b}"))?;
    within(t0.elapsed(), 180)?;
    Ok(format!("ldb {a:.4} baseline {b:.4} ({} drop epochs)", ldb.drop_epochs()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("masking of unselected layers", masking),
        ("baseline equivalence", baseline_equivalence),
        ("schedule law", schedule_law),
        ("selection statistics", selection_statistics),
        ("hyperparameter scaling", hyperparameter_scaling),
        ("forward/inference identity", inference_identity),
        ("backward dominance", backward_dominance),
        ("sweep monotonicity", sweep_monotonicity),
        ("end-to-end quality", end_to_end_quality),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
