//! Helpers shared by the command-line tools.

use anyhow::{bail, Context, Result};

use mp3_core::client::FriendBundle;
use mp3_core::config::DeploymentConfig;
use mp3_core::wire::Tier;

/// Applies `--servers` overrides of the form `name=addr,...` where `name` is
/// `reg-long`, `reg-short`, `long<k>` or `short<k>`.
pub fn apply_server_overrides(cfg: &mut DeploymentConfig, spec: &str) -> Result<()> {
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, addr) = item
            .split_once('=')
            .with_context(|| format!("server override {item:?} is not name=addr"))?;
        let addr = addr.to_string();
        match name {
            "reg-long" => cfg.long_term.registration = addr,
            "reg-short" => cfg.short_term.registration = addr,
            _ => {
                let (tier, k) = if let Some(k) = name.strip_prefix("long") {
                    (Tier::Long, k)
                } else if let Some(k) = name.strip_prefix("short") {
                    (Tier::Short, k)
                } else {
                    bail!("unknown server name {name:?}");
                };
                let k: usize = k
                    .parse()
                    .with_context(|| format!("bad server index in {name:?}"))?;
                let list = match tier {
                    Tier::Long => &mut cfg.long_term.lookup,
                    Tier::Short => &mut cfg.short_term.lookup,
                };
                let configured = list.len();
                let slot = list.get_mut(k).with_context(|| {
                    format!("{name}: only {configured} lookup servers configured")
                })?;
                *slot = addr;
            }
        }
    }
    Ok(())
}

pub fn bundle_to_text(b: &FriendBundle) -> String {
    hex::encode(b.to_bytes())
}

pub fn bundle_from_text(s: &str) -> Result<FriendBundle> {
    let bytes = hex::decode(s.trim()).context("bundle is not hex")?;
    Ok(FriendBundle::from_bytes(&bytes)?)
}
