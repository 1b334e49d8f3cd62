use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;

use mp3_sim::metrics::write_csv;
use mp3_sim::{fit_scaling, run_sim, sweep, SimConfig};

/// Simulates a deployment and writes per-epoch metrics as CSV.
#[derive(Parser, Debug)]
#[command(name = "mp3-sim", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Client counts to sweep, e.g. `N=100,200,400`.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<Sizes>,
    /// Also write log-log slopes to `<out stem>.fit.csv`.
    #[arg(long)]
    fit: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Sizes(Vec<usize>);

fn parse_sweep(s: &str) -> Result<Sizes, String> {
    let list = s.strip_prefix("N=").ok_or("expected N=<n1>,<n2>,...")?;
    list.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Sizes)
}

fn fit_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("metrics");
    out.with_file_name(format!("{stem}.fit.csv"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = SimConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;

    let rows = match &args.sweep {
        Some(Sizes(sizes)) => sweep(&cfg, sizes)?,
        None => {
            let out = run_sim(&cfg)?;
            if !out.checks.all_ok() {
                log::error!("ground-truth checks failed: {:#?}", out.checks);
            }
            out.rows
        }
    };
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_csv(&rows, file)?;
    log::info!("wrote {} rows to {}", rows.len(), args.out.display());

    if args.fit {
        if args.sweep.is_none() {
            bail!("--fit needs --sweep");
        }
        let fits = fit_scaling(&rows)?;
        let path = fit_path(&args.out);
        let mut w = csv::Writer::from_path(&path)?;
        for f in &fits {
            w.serialize(f)?;
        }
        w.flush()?;
        log::info!("wrote {} fits to {}", fits.len(), path.display());
    }
    Ok(())
}
