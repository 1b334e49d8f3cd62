//! Drives the three binaries over real sockets with a fast epoch clock.

use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output};
use std::thread::sleep;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

const LT_SECS: u64 = 12;
const ST_SECS: u64 = 6;

struct Daemons(Vec<Child>);

impl Drop for Daemons {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap()
        .as_secs()
}

fn wait_listening(addr: &str) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "{addr} never came up");
        sleep(Duration::from_millis(50));
    }
}

fn sleep_until(t: u64) {
    while now() < t {
        sleep(Duration::from_millis(100));
    }
    // past the boundary, give the push a moment
    sleep(Duration::from_millis(1500));
}

fn mp3(config: &Path, store: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mp3"))
        .arg("--config")
        .arg(config)
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "mp3 {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, value: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("deploy.json");
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

#[test]
fn friends_see_each_other_through_the_daemons() {
    let dir = tempfile::tempdir().unwrap();
    let genesis = now();
    let lookups_long: Vec<String> = (0..3).map(|_| free_addr()).collect();
    let lookups_short: Vec<String> = (0..3).map(|_| free_addr()).collect();
    let (reg_long, reg_short) = (free_addr(), free_addr());
    let config = write_config(
        dir.path(),
        serde_json::json!({
            "clock": {"genesis": genesis, "lt_duration": LT_SECS, "st_duration": ST_SECS},
            "n_fmax": 4,
            "n_rev": 1,
            "long_term": {"registration": reg_long, "lookup": lookups_long},
            "short_term": {"registration": reg_short, "lookup": lookups_short},
        }),
    );

    let mut daemons = Daemons(Vec::new());
    for k in 0..3 {
        daemons.0.push(
            Command::new(env!("CARGO_BIN_EXE_mp3-lookupd"))
                .arg("--config")
                .arg(&config)
                .args(["--index", &k.to_string()])
                .env("RUST_LOG", "warn")
                .spawn()
                .unwrap(),
        );
    }
    for tier in ["long", "short"] {
        daemons.0.push(
            Command::new(env!("CARGO_BIN_EXE_mp3-regd"))
                .arg("--config")
                .arg(&config)
                .args(["--tier", tier])
                .env("RUST_LOG", "warn")
                .spawn()
                .unwrap(),
        );
    }
    for a in lookups_long
        .iter()
        .chain(&lookups_short)
        .chain([&reg_long, &reg_short])
    {
        wait_listening(a);
    }

    let alice = dir.path().join("alice.keys");
    let bob = dir.path().join("bob.keys");
    mp3(&config, &alice, &["keygen"]);
    mp3(&config, &bob, &["keygen"]);
    let to_bob = stdout(&mp3(&config, &alice, &["friend", "export", "bob"]));
    mp3(&config, &bob, &["friend", "import", "alice", to_bob.trim()]);
    let to_alice = stdout(&mp3(&config, &bob, &["friend", "export", "alice"]));
    mp3(
        &config,
        &alice,
        &["friend", "import", "bob", to_alice.trim()],
    );

    // Still in long-term epoch 0 and short-term epoch 0.
    mp3(&config, &alice, &["register-lt"]);
    mp3(&config, &bob, &["register-lt"]);
    mp3(&config, &alice, &["register-st", "--message", "at lunch"]);
    assert!(
        now() < genesis + ST_SECS,
        "setup overran the first short-term epoch"
    );

    sleep_until(genesis + ST_SECS);
    let seen = stdout(&mp3(&config, &bob, &["lookup-st"]));
    assert_eq!(seen.trim(), "alice: online \"at lunch\"");
    let seen = stdout(&mp3(&config, &alice, &["lookup-st"]));
    assert_eq!(seen.trim(), "bob: offline");

    sleep_until(genesis + LT_SECS);
    let lt = stdout(&mp3(&config, &bob, &["lookup-lt"]));
    assert_eq!(lt.trim(), "alice: updated");
    let caught = stdout(&mp3(&config, &alice, &["catchup"]));
    assert!(caught.contains("epoch 1 bob: updated"), "{caught}");

    let revoked = stdout(&mp3(&config, &alice, &["revoke", "bob"]));
    assert!(revoked.contains("bob"));
}

#[test]
fn missing_store_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        serde_json::json!({
            "clock": {"genesis": 0},
            "n_fmax": 4,
            "n_rev": 1,
            "long_term": {"registration": "127.0.0.1:1", "lookup": ["127.0.0.1:2", "127.0.0.1:3", "127.0.0.1:4"]},
            "short_term": {"registration": "127.0.0.1:5", "lookup": ["127.0.0.1:6", "127.0.0.1:7", "127.0.0.1:8"]},
        }),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_mp3"))
        .arg("--config")
        .arg(&config)
        .arg("--store")
        .arg(dir.path().join("none.keys"))
        .arg("lookup-lt")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.keys"));
}
