use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mp3_cli::{apply_server_overrides, bundle_from_text, bundle_to_text};
use mp3_core::client::{Client, LtOutcome, Presence};
use mp3_core::config::DeploymentConfig;
use mp3_core::keystore;
use mp3_core::net::{now_secs, TcpTransport};

/// Client for the presence service.
#[derive(Parser, Debug)]
#[command(name = "mp3", version)]
struct Args {
    /// Deployment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Key store file.
    #[arg(long, default_value = "mp3.keys")]
    store: PathBuf,
    /// Address overrides: `reg-long=a,reg-short=b,long0=c,short0=d,...`.
    #[arg(long)]
    servers: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Creates a new identity.
    Keygen {
        #[arg(long)]
        force: bool,
    },
    #[command(subcommand)]
    Friend(FriendCmd),
    /// Stops publishing to a friend from the next long-term epoch on.
    Revoke { friend: String },
    /// Registers keys for the next long-term epoch.
    RegisterLt {
        #[arg(long)]
        epoch: Option<u64>,
    },
    /// Registers presence for the next short-term epoch.
    RegisterSt {
        #[arg(long)]
        message: String,
        #[arg(long)]
        epoch: Option<u64>,
    },
    /// Looks up friends' long-term records for the current epoch.
    LookupLt {
        #[arg(long)]
        epoch: Option<u64>,
    },
    /// Shows which friends are online in the current short-term epoch.
    LookupSt {
        #[arg(long)]
        epoch: Option<u64>,
    },
    /// Replays every long-term epoch missed since the last lookup.
    Catchup {
        #[arg(long)]
        to: Option<u64>,
    },
}

#[derive(Subcommand, Debug)]
enum FriendCmd {
    /// Prints a bundle that lets `name` follow you.
    Export { name: String },
    /// Starts following `name` using the bundle they exported.
    Import {
        name: String,
        /// Hex bundle, or `-` to read it from stdin.
        bundle: String,
    },
}

fn describe_lt(o: &LtOutcome) -> String {
    match o {
        LtOutcome::Updated => "updated".into(),
        LtOutcome::NotFound => "no record".into(),
        LtOutcome::Ignored => "invalid record ignored".into(),
        LtOutcome::Terminated(r) => format!("friendship ended ({r:?})"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let mut cfg = DeploymentConfig::load(&args.config)?;
    if let Some(s) = &args.servers {
        apply_server_overrides(&mut cfg, s)?;
    }
    let (lt_now, st_now) = cfg.clock.epoch_at(now_secs())?;

    if let Cmd::Keygen { force } = args.cmd {
        if args.store.exists() && !force {
            bail!("{} exists; pass --force to overwrite", args.store.display());
        }
        let client = Client::from_os_rng(cfg.client_config(), lt_now);
        keystore::save(&args.store, &client)?;
        println!(
            "new identity in {} (long-term epoch {lt_now})",
            args.store.display()
        );
        return Ok(());
    }

    let mut client =
        keystore::load(&args.store).with_context(|| format!("loading {}", args.store.display()))?;
    if *client.config() != cfg.client_config() {
        bail!("key store was created for a different deployment configuration");
    }
    let mut net = TcpTransport::from_config(&cfg);

    match args.cmd {
        Cmd::Keygen { .. } => unreachable!("handled above"),
        Cmd::Friend(FriendCmd::Export { name }) => {
            let bundle = client.befriend_out(&name)?;
            println!("{}", bundle_to_text(&bundle));
        }
        Cmd::Friend(FriendCmd::Import { name, bundle }) => {
            let text = if bundle == "-" {
                std::io::read_to_string(std::io::stdin())?
            } else {
                bundle
            };
            client.import_friend(&name, &bundle_from_text(&text)?)?;
            println!("following {name}");
        }
        Cmd::Revoke { friend } => {
            client.revoke_friend(&friend)?;
            println!("{friend} will be revoked in the next long-term registration");
        }
        Cmd::RegisterLt { epoch } => {
            let j = epoch.unwrap_or(lt_now + 1);
            client.register_long_term(&mut net, j)?;
            println!("registered for long-term epoch {j}");
        }
        Cmd::RegisterSt { message, epoch } => {
            let i = epoch.unwrap_or(st_now + 1);
            client.register_short_term(&mut net, i, message.as_bytes())?;
            println!("registered presence for short-term epoch {i}");
        }
        Cmd::LookupLt { epoch } => {
            let j = epoch.unwrap_or(lt_now);
            for (name, outcome) in client.lookup_long_term(&mut net, j)? {
                println!("{name}: {}", describe_lt(&outcome));
            }
        }
        Cmd::LookupSt { epoch } => {
            let i = epoch.unwrap_or(st_now);
            for (name, p) in client.lookup_short_term(&mut net, i)? {
                match p {
                    Presence::Online(msg) => {
                        println!("{name}: online {:?}", String::from_utf8_lossy(&msg))
                    }
                    Presence::Offline => println!("{name}: offline"),
                    Presence::Unknown => println!("{name}: unknown"),
                }
            }
        }
        Cmd::Catchup { to } => {
            let to = to.unwrap_or(lt_now);
            let from = client.lt_checked_through() + 1;
            for (j, report) in (from..=to).zip(client.catch_up(&mut net, to)?) {
                for (name, outcome) in report {
                    println!("epoch {j} {name}: {}", describe_lt(&outcome));
                }
            }
            println!(
                "checked through long-term epoch {}",
                client.lt_checked_through()
            );
        }
    }
    keystore::save(&args.store, &client)?;
    Ok(())
}
