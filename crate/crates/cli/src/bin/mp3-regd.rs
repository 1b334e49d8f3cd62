use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use rand::RngCore;

use mp3_core::config::DeploymentConfig;
use mp3_core::net::{now_secs, RegistrationDaemon};
use mp3_core::server::{RegistrationServer, SHORT_TERM_KEEP};
use mp3_core::wire::Tier;

/// Registration server for one tier.
#[derive(Parser, Debug)]
#[command(name = "mp3-regd", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tier: Tier,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = DeploymentConfig::load(&args.config)?;
    let (lt, st) = cfg.clock.epoch_at(now_secs())?;
    let (window, keep) = match args.tier {
        Tier::Long => (lt + 1, cfg.h_keep),
        Tier::Short => (st + 1, SHORT_TERM_KEEP),
    };
    let seed = cfg.seed.unwrap_or_else(|| rand::rngs::OsRng.next_u64());
    let server = RegistrationServer::new(args.tier, cfg.n_rev, keep, window, seed);
    let addrs = cfg.tier(args.tier);
    let daemon =
        RegistrationDaemon::new(server, addrs.lookup.clone(), cfg.max_records_per_connection);
    let listener = TcpListener::bind(&addrs.registration)
        .with_context(|| format!("binding {}", addrs.registration))?;
    let (addr, _accept) = daemon.spawn(listener)?;
    log::info!(
        "{} registration on {addr}, window open for epoch {window}",
        args.tier
    );
    daemon.run_clock(cfg.clock, args.tier)
}
