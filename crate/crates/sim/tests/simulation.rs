use mp3_core::client::{Client, ClientConfig};
use mp3_core::transport::{CountingLink, InProcessNetwork, LinkCounters};
use mp3_core::wire::Tier;
use mp3_sim::metrics::write_csv;
use mp3_sim::run::lookup_frame_bytes;
use mp3_sim::{run_sim, Absence, ScheduledRevocation, SimConfig};

fn csv_bytes(cfg: &SimConfig) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(&run_sim(cfg).unwrap().rows, &mut out).unwrap();
    out
}

#[test]
fn long_term_database_holds_one_record_per_client() {
    let cfg = SimConfig::new(100, 10, 1, 3, 5, 1);
    let out = run_sim(&cfg).unwrap();
    let long: Vec<_> = out
        .rows
        .iter()
        .filter(|r| r.epoch_kind == Tier::Long)
        .collect();
    assert_eq!(
        long.iter().map(|r| r.epoch_index).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    for r in &long {
        assert_eq!(r.db_records, 100);
        assert_eq!(r.dp5_baseline_records, Some(1000));
    }
    let short: Vec<_> = out
        .rows
        .iter()
        .filter(|r| r.epoch_kind == Tier::Short)
        .collect();
    assert_eq!(short.len(), 15);
    assert!(short
        .iter()
        .all(|r| r.db_records == 100 && r.dp5_baseline_records.is_none()));
    assert!(out.checks.all_ok(), "{:?}", out.checks);
    assert!(out.checks.presence_reports > 0 && out.checks.lt_reports > 0);
}

#[test]
fn same_seed_gives_identical_csv() {
    let mut cfg = SimConfig::new(15, 6, 2, 2, 3, 99);
    cfg.online_probability = 0.5;
    cfg.revocation_rate = 0.1;
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
    let other = SimConfig {
        seed: 100,
        ..cfg.clone()
    };
    assert_ne!(csv_bytes(&cfg), csv_bytes(&other));
}

#[test]
fn reports_match_ground_truth_through_churn() {
    let mut cfg = SimConfig::new(16, 8, 2, 6, 3, 7);
    cfg.online_probability = 0.6;
    cfg.revocation_rate = 0.05;
    cfg.revocations = vec![
        ScheduledRevocation {
            lt_epoch: 2,
            revoker: 0,
            revoked: None,
        },
        // absent revoker: applied once it is back
        ScheduledRevocation {
            lt_epoch: 3,
            revoker: 5,
            revoked: None,
        },
    ];
    cfg.absences = vec![
        Absence {
            client: 5,
            from: 2,
            to: 3,
        },
        Absence {
            client: 9,
            from: 1,
            to: 4,
        },
    ];
    let out = run_sim(&cfg).unwrap();
    let c = &out.checks;
    assert!(c.all_ok(), "{c:#?}");
    assert!(c.revocations_applied >= 2);
    assert!(c.revoked_attempts > 0);
    assert_eq!(c.catch_ups, 2);
}

#[test]
fn metered_clients_change_nothing_but_work() {
    let mut cfg = SimConfig::new(20, 6, 1, 3, 2, 3);
    let full = run_sim(&cfg).unwrap();
    cfg.probe_clients = Some(3);
    let metered = run_sim(&cfg).unwrap();
    assert!(metered.checks.all_ok(), "{:?}", metered.checks);
    assert!(metered.checks.presence_reports < full.checks.presence_reports);
    for (a, b) in full.rows.iter().zip(&metered.rows) {
        assert_eq!(
            (a.epoch_kind, a.epoch_index, a.db_records),
            (b.epoch_kind, b.epoch_index, b.db_records)
        );
        assert_eq!(a.reg_server_in_bytes, b.reg_server_in_bytes);
    }
}

/// The metered byte formula against a real lookup through a counting link.
#[test]
fn metered_formula_equals_real_traffic() {
    let ccfg = ClientConfig {
        n_fmax: 7,
        n_rev: 1,
        t: 1,
        n_lookup: 3,
        h_keep: 30,
        st_per_lt: 2,
    };
    let mut net = InProcessNetwork::new(1, 3, 30, 1, 2, 5);
    let mut clients: Vec<Client> = (0..5u8).map(|k| Client::new(ccfg, 0, [k; 32])).collect();
    for a in 0..5 {
        for f in 0..5 {
            if a != f {
                let b = clients[a].befriend_out(&format!("c{f}")).unwrap();
                clients[f].import_friend(&format!("c{a}"), &b).unwrap();
            }
        }
    }
    for c in &mut clients {
        c.register_long_term(&mut net, 1).unwrap();
        c.register_short_term(&mut net, 2, b"hi").unwrap();
    }
    net.close_and_push(Tier::Long);
    net.close_and_push(Tier::Short);

    for (tier, epoch) in [(Tier::Long, 1), (Tier::Short, 2)] {
        let mut counters = LinkCounters::default();
        let mut link = CountingLink::new(&mut net, &mut counters);
        match tier {
            Tier::Long => drop(clients[0].lookup_long_term(&mut link, epoch).unwrap()),
            Tier::Short => drop(clients[0].lookup_short_term(&mut link, epoch).unwrap()),
        }
        let meta = *net.lookup(tier)[0].database(epoch).unwrap().meta();
        let (sent, received) = lookup_frame_bytes(&meta, ccfg.n_fmax);
        assert_eq!(
            counters.get(tier, epoch),
            (3 * sent, 3 * received),
            "{tier}"
        );
    }
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut cfg = SimConfig::new(10, 4, 1, 2, 2, 0);
    cfg.n_lookup = 2;
    assert!(run_sim(&cfg).is_err());
}
