use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use juced::harness::{emit_plotdata, run_sweep, CsvSink, ExperimentConfig, ReceiverKind};
use juced::harness::sweep::write_manifest;

/// Monte-Carlo link-level sweep for asynchronous grant-free access.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// TOML experiment description; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SNR grid in dB, comma separated.
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    /// Oversampling factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    mosf: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Receivers to run: juced, baseline.
    #[arg(long, value_delimiter = ',')]
    receivers: Option<Vec<ReceiverKind>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

fn resolve(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &args.snr {
        cfg.snr_grid_db = v.clone();
    }
    if let Some(v) = &args.mosf {
        cfg.mosf_grid = v.clone();
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.receivers {
        cfg.receivers = v.clone();
    }
    if let Some(v) = &args.out {
        cfg.output_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = resolve(&args)?;
    if args.dry_run {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_name = "results.csv";
    write_manifest(&cfg, dir, csv_name)?;
    let mut sink = CsvSink::create(&dir.join(csv_name))?;
    let cells = run_sweep(&cfg, Some(&mut sink))?;
    let invalid = cells.iter().filter(|c| !c.valid).count();
    for path in emit_plotdata(&cells, dir)? {
        log::info!("wrote {}", path.display());
    }
    if invalid > 0 {
        log::warn!("{invalid} of {} cells were marked invalid", cells.len());
    }
    println!("{}", dir.join(csv_name).display());
    Ok(())
}
