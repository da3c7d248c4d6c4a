use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fastusct::harness::config::{ExperimentConfig, Scale};
use fastusct::harness::container::{
    load_container, load_frames, load_medium, load_model, save_bmode, save_frames, save_medium, Payload,
};
use fastusct::harness::experiment::{run_experiment, train_models};
use fastusct::harness::export::save_bmode_image;
use fastusct::harness::setup::{duplicate_mixed, Setup};
use fastusct::quality::{mssim, psnr, rf_mse, MSSIM_WINDOW};
use fastusct::separation::separate_acquisition;
use fastusct::FiringPlan;

#[derive(Parser)]
#[command(name = "fastusct", version, about = "Parallel-transmission ring-array USCT toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML). Defaults to the preset of `--scale`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the phantom seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    scale: ScaleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Small,
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Parallel,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom and save it as `medium.usct`.
    Phantom,
    /// Acquire RF frames for an (N, P) firing plan.
    Simulate {
        #[arg(long)]
        medium: PathBuf,
        #[arg(long, short = 'n')]
        n: usize,
        #[arg(long, short = 'p', default_value_t = 1)]
        p: usize,
        #[arg(long, value_enum, default_value = "both")]
        mode: Mode,
    },
    /// Band-pass, mask and normalise saved frames.
    Preprocess {
        #[arg(long)]
        frames: PathBuf,
    },
    /// Train a separation model for P simultaneous transmitters.
    Train {
        #[arg(long, short = 'p')]
        p: usize,
    },
    /// Split mixed frames into single-transmitter frames.
    Separate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frames: PathBuf,
    },
    /// Delay-and-sum reconstruction and B-mode postprocessing.
    Reconstruct {
        #[arg(long)]
        frames: PathBuf,
    },
    /// Compare two B-mode images or two frame sets.
    Evaluate {
        candidate: PathBuf,
        reference: PathBuf,
    },
    /// Train, acquire, reconstruct and score every configured variant.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path).context("config")?,
        None => ExperimentConfig::preset(match g.scale {
            ScaleArg::Small => Scale::Small,
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }),
    };
    if let Some(seed) = g.seed {
        cfg.seeds.phantom = seed;
    }
    Ok(cfg)
}

fn setup(g: &Global) -> Result<Setup> {
    Setup::new(load_config(g)?).context("config")
}

fn out_file(g: &Global, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    Ok(g.out.join(name))
}

fn frames_from(path: &Path, stage: &str) -> Result<Vec<fastusct::RfFrame>> {
    load_frames(path).with_context(|| format!("{stage}: reading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("--threads")?;
    }
    let started = Instant::now();
    let mut log = |s: &str| eprintln!("[{:8.1}s] {s}", started.elapsed().as_secs_f64());

    match cli.command {
        Command::Phantom => {
            let s = setup(g)?;
            let seed = s.config.seeds.phantom;
            let medium = s.phantom(seed).context("phantom")?;
            let path = out_file(g, "medium.usct")?;
            save_medium(&path, &medium, Some(seed)).with_context(|| format!("phantom: writing {}", path.display()))?;
            log(&format!("wrote {}", path.display()));
        }
        Command::Simulate { medium, n, p, mode } => {
            let s = setup(g)?;
            let m = load_medium(&medium).with_context(|| format!("simulate: reading {}", medium.display()))?;
            let plan = s.plan(n, p).context("simulate")?;
            if matches!(mode, Mode::Sequential | Mode::Both) {
                let sets: Vec<Vec<usize>> = plan.transmitters().map(|t| vec![t]).collect();
                let frames = s.simulate(&m, &sets).context("simulate")?;
                let path = out_file(g, "sequential.usct")?;
                save_frames(&path, &frames).with_context(|| format!("simulate: writing {}", path.display()))?;
                log(&format!("wrote {} sequential frames to {}", frames.len(), path.display()));
            }
            if matches!(mode, Mode::Parallel | Mode::Both) {
                let frames = s.simulate(&m, &plan.groups).context("simulate")?;
                let path = out_file(g, "parallel.usct")?;
                save_frames(&path, &frames).with_context(|| format!("simulate: writing {}", path.display()))?;
                log(&format!("wrote {} parallel frames to {}", frames.len(), path.display()));
            }
        }
        Command::Preprocess { frames } => {
            let s = setup(g)?;
            let raw = frames_from(&frames, "preprocess")?;
            let pre = s.preprocess(&raw).context("preprocess")?;
            let stem = frames.file_stem().and_then(|x| x.to_str()).unwrap_or("frames");
            let path = out_file(g, &format!("{stem}_pre.usct"))?;
            save_frames(&path, &pre).with_context(|| format!("preprocess: writing {}", path.display()))?;
            log(&format!("wrote {}", path.display()));
        }
        Command::Train { p } => {
            let s = setup(g)?;
            std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
            let (_, summaries) = train_models(&s, &[p], Some(&g.out), &mut log).context("train")?;
            for t in summaries {
                log(&format!(
                    "P={} final train loss {:?}, val loss {:?}",
                    t.p, t.final_train_loss, t.final_val_loss
                ));
            }
        }
        Command::Separate { model, frames } => {
            let m = load_model(&model).with_context(|| format!("separate: reading {}", model.display()))?;
            let mixed = frames_from(&frames, "separate")?;
            let plan = plan_of(&mixed).context("separate")?;
            let out = separate_acquisition(&m, &mixed, &plan).context("separate")?;
            let path = out_file(g, "separated.usct")?;
            save_frames(&path, &out).with_context(|| format!("separate: writing {}", path.display()))?;
            log(&format!("wrote {} frames to {}", out.len(), path.display()));
        }
        Command::Reconstruct { frames } => {
            let s = setup(g)?;
            // Mixed frames without separation are used as-is for each of their transmitters.
            let f: Vec<_> = frames_from(&frames, "reconstruct")?.iter().flat_map(duplicate_mixed).collect();
            let image = s.bmode(&f).context("reconstruct")?;
            let path = out_file(g, "image.usct")?;
            save_bmode(&path, &image).with_context(|| format!("reconstruct: writing {}", path.display()))?;
            let png = out_file(g, "image.png")?;
            save_bmode_image(&png, &image).with_context(|| format!("reconstruct: writing {}", png.display()))?;
            log(&format!("wrote {} and {}", path.display(), png.display()));
        }
        Command::Evaluate { candidate, reference } => {
            let (a, _) = load_container(&candidate).with_context(|| format!("evaluate: reading {}", candidate.display()))?;
            let (b, _) = load_container(&reference).with_context(|| format!("evaluate: reading {}", reference.display()))?;
            let report = match (a, b) {
                (Payload::BMode(a), Payload::BMode(b)) => json!({
                    "candidate": candidate,
                    "reference": reference,
                    "mssim": mssim(&a, &b, MSSIM_WINDOW).context("evaluate")?,
                    "psnr": psnr(&a, &b).context("evaluate")?,
                }),
                (Payload::Frames(a), Payload::Frames(b)) => json!({
                    "candidate": candidate,
                    "reference": reference,
                    "rf_mse": rf_mse(&a, &b).context("evaluate")?,
                }),
                (a, b) => bail!(
                    "evaluate: cannot compare a {} payload with a {} payload",
                    a.kind().name(),
                    b.kind().name()
                ),
            };
            let path = out_file(g, "metrics.json")?;
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("evaluate: writing {}", path.display()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Pipeline => {
            let cfg = load_config(g)?;
            let report = run_experiment(cfg, &g.out, &mut log).context("pipeline")?;
            println!("{:<22} {:>10} {:>8} {:>10} {:>8}", "variant", "rf_mse", "mssim", "psnr_db", "time");
            for v in &report.variants {
                let psnr = v.psnr.map(|d| format!("{d:.2}")).unwrap_or_else(|| "identical".into());
                println!(
                    "{:<22} {:>10.5} {:>8.4} {:>10} {:>8.2}",
                    v.name, v.rf_mse, v.mssim, psnr, v.relative_imaging_time
                );
            }
            println!("baseline: {}; report: {}", report.reference, g.out.join("report.json").display());
        }
    }
    Ok(())
}

/// Firing plan implied by the transmitter sets of saved mixed frames.
fn plan_of(frames: &[fastusct::RfFrame]) -> Result<FiringPlan> {
    let p = frames.first().map(|f| f.tx_set.len()).unwrap_or(0);
    if p == 0 || frames.iter().any(|f| f.tx_set.len() != p) {
        bail!("frames must all fire the same non-zero number of transmitters");
    }
    let groups: Vec<Vec<usize>> = frames.iter().map(|f| f.tx_set.clone()).collect();
    let n_transmitters = groups.iter().flatten().max().map(|m| m + 1).unwrap_or(0);
    Ok(FiringPlan {
        n_iterations: groups.len(),
        parallelism: p,
        n_transmitters,
        groups,
    })
}
