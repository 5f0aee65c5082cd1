use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ldb_core::bench::{measure_phase_split, median, sweep_drop_rate, sweep_sampling_rate, PhaseSplit, SweepAxis, SweepTask};
use ldb_core::config::RunConfig;
use ldb_core::gradcheck::{gradcheck_preset, GradcheckOptions};
use ldb_core::report::{emit_report, emit_sweep, summarize};
use ldb_core::scheduler::{select_layers, selection_stream};
use ldb_core::trainer::{train_baseline_with_callback, train_with_callback, EpochRecord};
use ldb_core::{LdbError, Result};

#[derive(Parser)]
#[command(name = "ldb", version, about = "LayerDropBack training, verification and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset, optionally alongside the plain SGD baseline.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also train the baseline from the same initial weights.
        #[arg(long)]
        baseline: bool,
    },
    /// Finite-difference check of selective weight gradients.
    Gradcheck {
        #[arg(long, default_value = "mlp-8")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<f64>,
    },
    /// Sweep the drop rate or the sampling rate against a baseline arm.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Measure the forward/backward/update split of a training step.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_select: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
}

impl Common {
    /// File values first, then flag overrides; the result is validated and
    /// echoed to `effective_config.json` in the output directory.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.seed_data {
            cfg.seed_data = v;
        }
        if let Some(v) = self.seed_init {
            cfg.seed_init = v;
        }
        if let Some(v) = self.seed_select {
            cfg.seed_select = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = &self.preset {
            cfg.preset = v.clone();
        }
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| LdbError::io(&cfg.out_dir, e))?;
        cfg.save(&cfg.out_dir.join("effective_config.json"))?;
        Ok(cfg)
    }
}

fn prefetch_allowed() -> bool {
    std::env::var("LDB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .is_some_and(|n| n >= 2)
}

fn print_epoch(arm: &str, r: &EpochRecord) {
    println!(
        "{arm} epoch {:>3} {:<8} lr {:.5} batch {:>4} loss {:.5} val_acc {:.4} train_ms {:.1}",
        r.epoch,
        r.mode.as_str(),
        r.lr,
        r.batch,
        r.train_loss,
        r.val_accuracy,
        r.ms_train
    );
}

fn write_json<T: Serialize>(path: &std::path::Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| LdbError::io(path, e))
}

fn cmd_train(common: &Common, baseline: bool) -> Result<ExitCode> {
    let cfg = common.resolve()?;
    let ds = cfg.load_dataset()?;
    let initial = cfg.build_network(&ds)?;
    let mut opts = cfg.train_options();
    opts.prefetch = prefetch_allowed();
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| LdbError::io(dir, e))?;
    }

    let mut net = initial.clone();
    let report = train_with_callback(&mut net, &ds, &cfg.ldb(), &opts, &mut |r, _, _| print_epoch("ldb", r))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let base = if baseline {
        let mut net = initial.clone();
        opts.checkpoint_dir = opts.checkpoint_dir.map(|d| d.join("baseline"));
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| LdbError::io(dir, e))?;
        }
        let b = train_baseline_with_callback(&mut net, &ds, cfg.base_lr, cfg.base_batch, &opts, &mut |r, _, _| {
            print_epoch("baseline", r)
        })?;
        emit_report(&b, None, &cfg.out_dir, "baseline")?;
        Some(b)
    } else {
        None
    };
    emit_report(&report, base.as_ref(), &cfg.out_dir, "ldb")?;
    let s = summarize(&report, base.as_ref());
    print!("final val_acc {:.4} best {:.4} train_ms {:.1}", s.final_val_accuracy, s.best_val_accuracy, s.total_wall_ms);
    match &s.baseline {
        Some(b) => println!(" | baseline val_acc {:.4} train_ms {:.1} speedup {:.4}", b.final_val_accuracy, b.total_wall_ms, b.speedup),
        None => println!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(preset: &str, seed: u64, fault: Option<f64>) -> Result<ExitCode> {
    let opts = GradcheckOptions {
        seed,
        dense_grad_fault: fault,
        ..Default::default()
    };
    let r = gradcheck_preset(preset, &opts)?;
    println!(
        "{preset}: {} sets, {} comparisons, max rel error {:.3e} (tolerance {:.0e})",
        r.sets.len(),
        r.compared,
        r.max_rel_error,
        r.tolerance
    );
    if let Some(w) = &r.worst {
        println!("worst: {w}");
    }
    if !r.leaked_layers.is_empty() {
        println!("unselected layers with nonzero gradient: {:?}", r.leaked_layers);
    }
    if r.passed() {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::from(1))
    }
}

fn cmd_sweep(common: &Common, axis: SweepAxis, values: &[f64]) -> Result<ExitCode> {
    let cfg = common.resolve()?;
    let ds = cfg.load_dataset()?;
    let task = SweepTask {
        preset: cfg.preset.clone(),
        preset_opts: cfg.preset_options(),
        dataset: &ds,
        epochs: cfg.epochs,
        schedule: cfg.schedule,
        momentum: cfg.momentum,
        repetitions: cfg.repetitions,
    };
    let result = match axis {
        SweepAxis::P => sweep_drop_rate(values, &cfg.ldb(), &task)?,
        SweepAxis::S => sweep_sampling_rate(values, &cfg.ldb(), &task)?,
    };
    for a in std::iter::once(&result.baseline).chain(&result.arms) {
        let mut line = format!(
            "{:<10} val_acc {:.4} train_ms {:>9.1} speedup {:+.4}",
            a.label, a.val_accuracy, a.wall_ms, a.speedup
        );
        if a.equivalence {
            line.push_str(" [equivalence]");
        }
        if let Some(f) = &a.failed {
            line.push_str(&format!(" FAILED: {f}"));
        }
        println!("{line}");
    }
    let (csv, json) = emit_sweep(&result, &cfg.out_dir)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(if result.any_failed() { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

#[derive(Serialize)]
struct BenchOutput {
    schema_version: u32,
    preset: String,
    batch: usize,
    steps: usize,
    repetitions: usize,
    drop_selected: Vec<usize>,
    full: Vec<PhaseSplit>,
    drop: Vec<PhaseSplit>,
    median_backward_share: f64,
    median_forward_share: f64,
    median_step_ms_full: f64,
    median_step_ms_drop: f64,
}

fn cmd_bench(common: &Common) -> Result<ExitCode> {
    let cfg = common.resolve()?;
    let ds = cfg.load_dataset()?;
    let net = cfg.build_network(&ds)?;
    let full_set = net.all_param_layers();
    let ldb = cfg.ldb();
    let drop_set = select_layers(net.param_layer_ids(), &ldb, &mut selection_stream(&ldb, 1)).layers;
    let (mut full, mut drop) = (Vec::new(), Vec::new());
    for _ in 0..cfg.repetitions {
        full.push(measure_phase_split(&mut net.clone(), &ds, cfg.bench_steps, cfg.bench_batch, &full_set)?);
        drop.push(measure_phase_split(&mut net.clone(), &ds, cfg.bench_steps, cfg.bench_batch, &drop_set)?);
    }
    let med = |v: &[PhaseSplit], f: fn(&PhaseSplit) -> f64| median(&v.iter().map(f).collect::<Vec<_>>());
    let out = BenchOutput {
        schema_version: ldb_core::report::SCHEMA_VERSION,
        preset: cfg.preset.clone(),
        batch: cfg.bench_batch,
        steps: cfg.bench_steps,
        repetitions: cfg.repetitions,
        drop_selected: drop_set.iter().copied().collect(),
        median_backward_share: med(&full, PhaseSplit::backward),
        median_forward_share: med(&full, |s| s.forward),
        median_step_ms_full: med(&full, PhaseSplit::median_step_ms),
        median_step_ms_drop: med(&drop, PhaseSplit::median_step_ms),
        full,
        drop,
    };
    let f = &out.full[0];
    println!(
        "shares (rep 0): forward {:.3} backward_dx {:.3} backward_dw {:.3} update {:.3}",
        f.forward, f.backward_dx, f.backward_dw, f.update
    );
    println!(
        "median over {} reps: backward {:.3} forward {:.3}; step ms full {:.3} drop {:.3} (selected {:?})",
        out.repetitions, out.median_backward_share, out.median_forward_share, out.median_step_ms_full, out.median_step_ms_drop, out.drop_selected
    );
    let path = cfg.out_dir.join("bench.json");
    write_json(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, baseline } => cmd_train(common, *baseline),
        Command::Gradcheck { preset, seed, inject_fault } => cmd_gradcheck(preset, *seed, *inject_fault),
        Command::Sweep { common, axis, values } => cmd_sweep(common, *axis, values),
        Command::Bench { common } => cmd_bench(common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
