//! `tmamba` — verification suites, scaling benchmarks, ablations, and the
//! toy diffusion training/sampling loops.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage error.

mod outio;
mod plot;
mod verify;

use clap::{Parser, Subcommand};
use outio::{fmt, run_dir, write_atomic, Csv};
use std::path::PathBuf;
use std::process::ExitCode;
use tmamba_core::config::ExperimentConfig;
use tmamba_core::diffusion::{
    ddim_inversion, ddim_update, make_synthetic_dataset, sample_ddim, smoothed, time_grid, train,
    validation_loss, ConditionSet, DataSpec, DenoiserConfig, DiffusionSchedule, ToyDenoiser,
    TrainOptions,
};
use tmamba_core::timing::{log_log_slope, time_attention, time_selective_scan};
use tmamba_core::{Error, Rng};

#[derive(Parser)]
#[command(name = "tmamba", version, about = "temporal-aware video blocks: verification and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every oracle suite and write per-check CSV rows.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Deliberately break a named stage to prove the suite catches it.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Time the selective scan and quadratic attention across lengths.
    Bench {
        /// Comma-separated sequence lengths, ascending.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one model axis with short training runs.
    Ablate {
        /// depth | rank | padding | phi
        #[arg(long)]
        axis: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 150)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy denoiser from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample videos from a trained checkpoint.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint archive; defaults to <out>/checkpoint.tsa from training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        guidance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument { .. } | Error::Io(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> tmamba_core::Result<ExitCode> {
    match cli.command {
        Command::Verify {
            seed,
            out,
            inject_fault,
        } => cmd_verify(seed, out, inject_fault.as_deref()),
        Command::Bench {
            lengths,
            repeats,
            seed,
            out,
        } => cmd_bench(lengths, repeats, seed, out),
        Command::Ablate {
            axis,
            seed,
            steps,
            out,
        } => cmd_ablate(&axis, seed, steps, out),
        Command::Train { config, seed, out } => cmd_train(&config, seed, out),
        Command::Sample {
            config,
            checkpoint,
            seed,
            guidance,
            out,
        } => cmd_sample(&config, checkpoint, seed, guidance, out),
    }
}

fn write_manifest(dir: &std::path::Path, body: String) -> tmamba_core::Result<()> {
    write_atomic(&dir.join("manifest.toml"), body.as_bytes())
}

fn cmd_verify(
    seed: u64,
    out: Option<PathBuf>,
    inject_fault: Option<&str>,
) -> tmamba_core::Result<ExitCode> {
    let dir = run_dir(&out, "verify");
    std::fs::create_dir_all(&dir)?;
    let report = verify::run(seed, inject_fault)?;
    verify::write_reports(&report, &dir)?;
    write_manifest(
        &dir,
        format!(
            "command = \"verify\"\nseed = {seed}\ninject_fault = \"{}\"\n",
            inject_fault.unwrap_or("none")
        ),
    )?;
    for r in &report.rows {
        println!(
            "{} {} (metric {:.3e}, threshold {:.3e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.metric,
            r.threshold
        );
    }
    let failed = report.failed();
    if failed.is_empty() {
        println!("verify: all {} checks passed", report.rows.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verify: failing checks: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(
    lengths: Option<Vec<usize>>,
    repeats: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> tmamba_core::Result<ExitCode> {
    let lengths = lengths.unwrap_or_else(|| (8..=14).map(|p| 1usize << p).collect());
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("bench", "lengths must be strictly ascending"));
    }
    let dir = run_dir(&out, "bench");
    std::fs::create_dir_all(&dir)?;

    let scan = time_selective_scan(&lengths, 16, 16, repeats, seed);
    let attn = time_attention(&lengths, 8, repeats, seed);
    let scan_slope = log_log_slope(&scan);
    let attn_slope = log_log_slope(&attn);

    let mut csv = Csv::new(&["kind", "length", "median_seconds"]);
    for &(l, s) in &scan {
        csv.row(&["scan".into(), fmt(l), fmt(s)]);
    }
    for &(l, s) in &attn {
        csv.row(&["attention".into(), fmt(l), fmt(s)]);
    }
    csv.save(&dir.join("bench.csv"))?;

    let slope_str = |s: Option<f64>| s.map(|v| fmt(v)).unwrap_or_else(|| "na".into());
    let mut slopes = Csv::new(&["kind", "loglog_slope"]);
    slopes.row(&["scan".into(), slope_str(scan_slope)]);
    slopes.row(&["attention".into(), slope_str(attn_slope)]);
    slopes.save(&dir.join("slopes.csv"))?;

    let svg = plot::line_plot(
        "wall time vs sequence length",
        "length",
        "seconds",
        &[
            plot::Series {
                name: "selective scan",
                points: scan.clone(),
            },
            plot::Series {
                name: "attention",
                points: attn.clone(),
            },
        ],
        true,
    );
    write_atomic(&dir.join("bench.svg"), svg.as_bytes())?;
    write_manifest(
        &dir,
        format!(
            "command = \"bench\"\nseed = {seed}\nrepeats = {repeats}\nlengths = {lengths:?}\n"
        ),
    )?;
    println!(
        "bench: scan slope {}, attention slope {}",
        slope_str(scan_slope),
        slope_str(attn_slope)
    );
    Ok(ExitCode::SUCCESS)
}

struct AblateRun {
    label: String,
    cfg: ExperimentConfig,
}

fn ablate_runs(axis: &str) -> tmamba_core::Result<Vec<AblateRun>> {
    let mut base = ExperimentConfig::default();
    // short-run shape: small video, few samples
    base.data.frames = 4;
    base.data.height = 16;
    base.data.width = 16;
    base.data.samples_per_class = 2;
    base.data.classes = 2;
    let mk = |label: &str, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        AblateRun {
            label: label.to_string(),
            cfg,
        }
    };
    Ok(match axis {
        "depth" => vec![
            mk("1", &|c| c.model.mamba_depth = 1),
            mk("2", &|c| c.model.mamba_depth = 2),
            mk("4", &|c| c.model.mamba_depth = 4),
        ],
        "rank" => vec![
            mk("4", &|c| c.model.rank = 4),
            mk("8", &|c| c.model.rank = 8),
            mk("12", &|c| c.model.rank = 12),
        ],
        "padding" => vec![
            mk("none", &|c| c.model.padding = "none".into()),
            mk("fixed", &|c| c.model.padding = "fixed".into()),
            mk("learnable", &|c| c.model.padding = "learnable".into()),
        ],
        "phi" => vec![
            mk("0", &|c| c.model.phi = 0.0),
            mk("0.5", &|c| c.model.phi = 0.5),
            mk("1", &|c| c.model.phi = 1.0),
            mk("learnable", &|c| {
                c.model.phi = 0.5;
                c.model.phi_learnable = true;
            }),
        ],
        other => {
            return Err(Error::arg(
                "ablate",
                format!("unknown axis {other:?} (expected depth | rank | padding | phi)"),
            ))
        }
    })
}

/// Train one configuration and report (final smoothed train loss,
/// validation loss, round-trip reconstruction error).
fn ablate_single(
    cfg: &ExperimentConfig,
    steps: usize,
    seed: u64,
) -> tmamba_core::Result<(f64, f64, f64)> {
    let spec = DataSpec {
        frames: cfg.data.frames,
        height: cfg.data.height,
        width: cfg.data.width,
        classes: cfg.data.classes,
        samples_per_class: cfg.data.samples_per_class,
    };
    let mut rng = Rng::new(seed);
    let data = make_synthetic_dataset(&spec, &mut rng)?;
    let conds = ConditionSet::new(cfg.data.classes, 8);
    let schedule = DiffusionSchedule::default_toy();
    let mut den = ToyDenoiser::init(DenoiserConfig::from_experiment(cfg), &mut rng)?;
    let result = train(
        &mut den,
        &data,
        &conds,
        &schedule,
        &TrainOptions {
            steps,
            lr: cfg.train.lr,
            freeze_backbone: cfg.train.freeze_backbone,
            cond_drop_prob: cfg.train.cond_drop_prob,
            seed: seed ^ 0x7EA1,
        },
    )?;
    let (_, tail) = smoothed(&result.losses, 20);
    let val = validation_loss(&den, &data, &conds, &schedule, seed ^ 0xE7A1)?;

    // round trip on the first training video
    let (z0, class) = &data[0];
    let cond = &conds.embeddings[*class];
    let z_t = ddim_inversion(&den, z0, cond, 25, &schedule)?;
    let grid = time_grid(schedule.t_steps(), 25);
    let mut z = z_t;
    for win in grid.windows(2) {
        let eps = den.predict(&z, win[0].max(1), cond)?;
        z = ddim_update(&z, &eps, win[0], win[1], &schedule);
    }
    let roundtrip = z.tensor().sub(z0.tensor()).frob_norm() / z0.tensor().frob_norm();
    Ok((tail, val, roundtrip))
}

fn cmd_ablate(
    axis: &str,
    seed: u64,
    steps: usize,
    out: Option<PathBuf>,
) -> tmamba_core::Result<ExitCode> {
    let runs = ablate_runs(axis)?;
    let dir = run_dir(&out, &format!("ablate-{axis}"));
    std::fs::create_dir_all(&dir)?;

    let mut csv = Csv::new(&[
        "axis",
        "value",
        "train_loss_smoothed",
        "val_loss",
        "roundtrip_rel_err",
    ]);
    let mut series = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let (train_loss, val_loss, roundtrip) = ablate_single(&run.cfg, steps, seed)?;
        println!(
            "ablate {axis} = {}: train {train_loss:.4}, val {val_loss:.4}, roundtrip {roundtrip:.4}",
            run.label
        );
        csv.row(&[
            axis.to_string(),
            run.label.clone(),
            fmt(train_loss),
            fmt(val_loss),
            fmt(roundtrip),
        ]);
        series.push((i as f64 + 1.0, val_loss));
    }
    csv.save(&dir.join("ablate.csv"))?;
    let svg = plot::line_plot(
        &format!("validation loss across {axis}"),
        axis,
        "val loss",
        &[plot::Series {
            name: "val_loss",
            points: series,
        }],
        false,
    );
    write_atomic(&dir.join("ablate.svg"), svg.as_bytes())?;
    write_manifest(
        &dir,
        format!("command = \"ablate\"\naxis = \"{axis}\"\nseed = {seed}\nsteps = {steps}\n"),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &std::path::Path) -> tmamba_core::Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "config file {} does not exist",
            path.display()
        )));
    }
    ExperimentConfig::load(path)
}

fn cmd_train(
    config: &std::path::Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> tmamba_core::Result<ExitCode> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = run_dir(&out, "train");
    std::fs::create_dir_all(&dir)?;

    let spec = DataSpec {
        frames: cfg.data.frames,
        height: cfg.data.height,
        width: cfg.data.width,
        classes: cfg.data.classes,
        samples_per_class: cfg.data.samples_per_class,
    };
    let mut rng = Rng::new(cfg.seed);
    let data = make_synthetic_dataset(&spec, &mut rng)?;
    let conds = ConditionSet::new(cfg.data.classes, 8);
    let schedule = DiffusionSchedule::default_toy();
    let mut den = ToyDenoiser::init(DenoiserConfig::from_experiment(&cfg), &mut rng)?;
    let result = train(
        &mut den,
        &data,
        &conds,
        &schedule,
        &TrainOptions {
            steps: cfg.train.steps,
            lr: cfg.train.lr,
            freeze_backbone: cfg.train.freeze_backbone,
            cond_drop_prob: cfg.train.cond_drop_prob,
            seed: cfg.seed ^ 0x7EA1,
        },
    )?;

    let mut csv = Csv::new(&["step", "loss"]);
    for (i, l) in result.losses.iter().enumerate() {
        csv.row(&[i.to_string(), fmt(*l)]);
    }
    csv.save(&dir.join("loss.csv"))?;
    let mut bytes = Vec::new();
    den.to_archive().write(&mut bytes)?;
    write_atomic(&dir.join("checkpoint.tsa"), &bytes)?;
    write_manifest(&dir, cfg.to_toml_string())?;

    let (head, tail) = smoothed(&result.losses, 50);
    println!(
        "train: {} steps, smoothed loss {head:.4} -> {tail:.4}",
        result.losses.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(
    config: &std::path::Path,
    checkpoint: Option<PathBuf>,
    seed: Option<u64>,
    guidance: Option<f64>,
    out: Option<PathBuf>,
) -> tmamba_core::Result<ExitCode> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = run_dir(&out, "sample");
    std::fs::create_dir_all(&dir)?;

    let mut rng = Rng::new(cfg.seed);
    let mut den = ToyDenoiser::init(DenoiserConfig::from_experiment(&cfg), &mut rng)?;
    if let Some(ck) = &checkpoint {
        let archive = tmamba_core::io::Archive::load(ck)?;
        den.load_from_archive(&archive)?;
    }
    let conds = ConditionSet::new(cfg.data.classes, 8);
    let schedule = DiffusionSchedule::default_toy();
    let scale = guidance.unwrap_or(cfg.train.guidance_scale);
    let shape = (cfg.data.frames, 3, cfg.data.height, cfg.data.width);
    for class in 0..cfg.data.classes {
        let mut sample_rng = Rng::new(cfg.seed ^ ((class as u64) << 32));
        let video = sample_ddim(
            &den,
            shape,
            &conds.embeddings[class],
            &conds.null,
            scale,
            cfg.train.sample_steps,
            &schedule,
            &mut sample_rng,
        )?;
        let path = dir.join(format!("sample_class{class}.tsr"));
        let mut bytes = Vec::new();
        tmamba_core::io::write_tensor(&mut bytes, video.tensor())?;
        write_atomic(&path, &bytes)?;
        println!("sample: wrote {}", path.display());
    }
    let mut manifest = cfg.to_toml_string();
    manifest.push_str(&format!("\n# resolved guidance = {scale}\n"));
    write_manifest(&dir, manifest)?;
    Ok(ExitCode::SUCCESS)
}
