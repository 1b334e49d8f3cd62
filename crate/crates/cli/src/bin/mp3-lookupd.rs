use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Parser;

use mp3_core::config::DeploymentConfig;
use mp3_core::net::spawn_lookup;
use mp3_core::server::{LookupServer, SHORT_TERM_KEEP};
use mp3_core::wire::Tier;

/// Lookup server `k`, for one tier or both.
#[derive(Parser, Debug)]
#[command(name = "mp3-lookupd", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    index: usize,
    /// Serve only this tier; by default both.
    #[arg(long)]
    tier: Option<Tier>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = DeploymentConfig::load(&args.config)?;
    if args.index >= cfg.n_lookup() {
        bail!(
            "index {} but only {} lookup servers configured",
            args.index,
            cfg.n_lookup()
        );
    }
    let faulty = cfg.faulty_lookup_servers.contains(&args.index);
    if faulty {
        log::warn!("fault injection enabled: responses will be corrupted");
    }
    let tiers = match args.tier {
        Some(t) => vec![t],
        None => vec![Tier::Long, Tier::Short],
    };
    let mut handles = Vec::new();
    for tier in tiers {
        let keep = match tier {
            Tier::Long => cfg.h_keep,
            Tier::Short => SHORT_TERM_KEEP,
        };
        let server = Arc::new(LookupServer::new(args.index, keep).with_fault_injection(faulty));
        let bind = &cfg.tier(tier).lookup[args.index];
        let listener = TcpListener::bind(bind).with_context(|| format!("binding {bind}"))?;
        let (addr, handle) = spawn_lookup(server, listener)?;
        log::info!("{tier} lookup server {} on {addr}", args.index);
        handles.push(handle);
    }
    for h in handles {
        h.join()
            .map_err(|_| anyhow::anyhow!("accept loop panicked"))?;
    }
    Ok(())
}
