use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deblur_cli::commands;
use deblur_cli::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "deblur", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("CARGO_PKG_NAME"), ")"))]
#[command(about = "Blind removal of non-uniform camera shake")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Worker threads (1 is the determinism reference).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pyramid levels (0 derives them from the kernel extent).
    #[arg(long, global = true)]
    levels: Option<usize>,
    #[arg(long, global = true)]
    max_shift: Option<f64>,
    #[arg(long, global = true)]
    max_rot_deg: Option<f64>,
    /// Write the per-iteration trace as CSV.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the blur of an image and deconvolve it.
    Deblur {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Blur a sharp image with a camera-motion file.
    Synth {
        #[arg(long = "in")]
        input: PathBuf,
        /// Rows of `theta_rad tx_px ty_px weight`.
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Error ratios over a directory of cases.
    Eval {
        /// One subdirectory per case with sharp.png, blurry.png,
        /// gt_poses.tsv and est_poses.tsv.
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,2.5,3,3.5,4,5")]
        edges: Vec<f64>,
    },
    /// Sample h and its slope over a grid of z and rho.
    Penalty {
        #[arg(long, value_delimiter = ',', required = true)]
        rho: Vec<f64>,
        /// `start:step:stop`.
        #[arg(long)]
        z: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(common: &Common, cmd: &Command) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("config {}: {e}", p.display()))?;
        cfg.apply_text(&text, &p.display().to_string())?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.levels {
        cfg.levels = v;
    }
    if let Some(v) = common.max_shift {
        cfg.max_shift = v;
    }
    if let Some(v) = common.max_rot_deg {
        cfg.max_rot_deg = v;
    }
    if common.trace.is_some() {
        cfg.trace = common.trace.clone();
    }
    match cmd {
        Command::Deblur { input, out } => {
            if input.is_some() {
                cfg.input = input.clone();
            }
            if out.is_some() {
                cfg.output = out.clone();
            }
        }
        Command::Synth { sigma: Some(s), .. } => cfg.noise_sigma = *s,
        _ => {}
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli.common, &cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if cli.common.dump_config {
        print!("{}", cfg.dump());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Deblur { .. } => commands::deblur(&cfg),
        Command::Synth { input, motion, out_dir, .. } => commands::synth(&cfg, input, motion, out_dir),
        Command::Eval { cases, out_dir, edges } => commands::eval(&cfg, cases, out_dir, edges),
        Command::Penalty { rho, z, out } => commands::penalty(rho, z, out.as_deref()),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Warned) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
