//! `sinet`: train, run and inspect channel-specific sparse-coding
//! enhancement models.
//!
//! Exit status: 0 on success, 1 when the work itself fails, 2 on bad usage.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use sinet::config::parse_config;
use sinet::dataset::list_images;
use sinet::imageio::{load_image, normalize_plane, save_gray_png, save_image};
use sinet::metrics::{evaluate_dir, flops_estimate};
use sinet::model::BranchTrace;
use sinet::train::{best_checkpoint_path, train_with_observer};
use sinet::{load_checkpoint, SinetParams, Tensor3};

#[derive(Parser)]
#[command(name = "sinet", version, about = "Channel-specific sparse-coding underwater image enhancement")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Enhance one image or every image in a directory.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory of PNG/PPM images.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// PSNR/SSIM on a paired dataset (`raw/` and `reference/`).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to write the CSV table.
        #[arg(long, default_value = "metrics.csv")]
        csv: PathBuf,
    },
    /// Write every intermediate code plane as a grayscale PNG.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Multiply-accumulate count of one forward pass.
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
    },
    /// Run the built-in numerical self-checks.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { config } => train_cmd(&config)?,
        Command::Enhance { checkpoint, input, output } => enhance(&checkpoint, &input, &output)?,
        Command::Eval { checkpoint, data, csv } => {
            let report = evaluate_dir(&checkpoint, &data)?;
            println!("{report}");
            fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            log::info!("wrote {}", csv.display());
        }
        Command::DumpFeatures { checkpoint, input, output } => dump_features(&checkpoint, &input, &output)?,
        Command::Flops { config, height, width } => {
            if height == 0 || width == 0 {
                bail!("height and width must be positive");
            }
            let cfg = parse_config(&config)?;
            cfg.model.validate()?;
            println!("{}", flops_estimate(&cfg.model, height, width));
        }
        Command::Verify => {
            let results = sinet::verify::run_all()?;
            for r in &results {
                println!("{r}");
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(config: &Path) -> Result<()> {
    let cfg = parse_config(config)?;
    let dataset = cfg.validate_for_training()?.to_path_buf();
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let ckpt = cfg.checkpoint_path();
    let log_path = cfg.log_path();
    let mut log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut write_err = None;
    let log = train_with_observer(&cfg.model, &cfg.train, &cfg.loss, &dataset, &ckpt, |entry| {
        log::info!("{entry}");
        if write_err.is_none() {
            write_err = writeln!(log_file, "{entry}").err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let last = log.entries.last().map_or(f64::NAN, |e| e.loss);
    println!(
        "trained {} steps, final loss {last:.6}; wrote {}, {} and {}",
        log.entries.len(),
        ckpt.display(),
        best_checkpoint_path(&ckpt).display(),
        log_path.display()
    );
    Ok(())
}

fn enhance(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let params: SinetParams<f32> = load_checkpoint(checkpoint)?;
    let jobs: Vec<(String, PathBuf)> = if input.is_dir() {
        list_images(input)?.into_iter().collect()
    } else if input.is_file() {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .context("input file has no usable name")?;
        vec![(stem.to_string(), input.to_path_buf())]
    } else {
        bail!("input {} does not exist", input.display());
    };
    if jobs.is_empty() {
        bail!("no PNG or PPM images in {}", input.display());
    }
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    jobs.par_iter().try_for_each(|(stem, path)| -> Result<()> {
        let img: Tensor3<f32> = load_image(path)?;
        let out = params.infer(&img)?;
        let dest = output.join(format!("{stem}.png"));
        save_image(&out, &dest)?;
        log::info!("{} -> {}", path.display(), dest.display());
        Ok(())
    })?;
    println!("enhanced {} images into {}", jobs.len(), output.display());
    Ok(())
}

fn dump_features(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let params: SinetParams<f32> = load_checkpoint(checkpoint)?;
    let img: Tensor3<f32> = load_image(input)?;
    let pass = params.forward(&img)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let mut written = 0;
    for (i, trace) in pass.traces.iter().enumerate() {
        if matches!(trace, BranchTrace::Plain(_)) {
            log::info!("branch {i} is a plain convolution stack; dumping layer outputs as iterations");
        }
        for (k, stage) in trace.stages().into_iter().enumerate() {
            for j in 0..stage.channels() {
                let plane = stage.channel(j)?;
                let dest = output.join(format!("branch{i}_iter{k}_filter{j}.png"));
                save_gray_png(normalize_plane(plane.data()), plane.width(), plane.height(), &dest)?;
                written += 1;
            }
        }
    }
    println!("wrote {written} feature maps to {}", output.display());
    Ok(())
}
