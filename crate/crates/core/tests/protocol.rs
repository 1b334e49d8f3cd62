use std::collections::BTreeSet;

use mp3_core::client::{
    Client, ClientConfig, ClientError, FriendBundle, LtOutcome, Presence, TerminationReason,
};
use mp3_core::keystore;
use mp3_core::primitives::nonce_audit;
use mp3_core::records::LongTermRecord;
use mp3_core::server::LookupServer;
use mp3_core::transport::{CountingLink, Dest, InProcessNetwork, LinkCounters, Transport};
use mp3_core::wire::{ErrorCode, Frame, MsgType, Tier};

const ST_PER_LT: u64 = 3;

fn cfg() -> ClientConfig {
    ClientConfig {
        n_fmax: 4,
        n_rev: 2,
        t: 1,
        n_lookup: 3,
        h_keep: 5,
        st_per_lt: ST_PER_LT,
    }
}

fn seed(n: u8) -> [u8; 32] {
    [n; 32]
}

/// Network whose windows are open for long-term epoch 1 and the first
/// short-term epoch of long-term epoch 1.
fn network(c: &ClientConfig) -> InProcessNetwork {
    InProcessNetwork::new(c.n_rev, c.n_lookup, c.h_keep, 1, ST_PER_LT, 99)
}

fn befriend(publisher: &mut Client, follower: &mut Client, label_out: &str, label_in: &str) {
    let bundle = publisher.befriend_out(label_out).unwrap();
    let bytes = bundle.to_bytes();
    follower
        .import_friend(label_in, &FriendBundle::from_bytes(&bytes).unwrap())
        .unwrap();
}

#[test]
fn long_and_short_term_round_trip() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(1));
    let mut bob = Client::new(c, 0, seed(2));
    befriend(&mut alice, &mut bob, "bob", "alice");

    alice.register_long_term(&mut net, 1).unwrap();
    let published = net.close_and_push(Tier::Long);
    assert_eq!(published.real_entries, 1);

    let report = bob.lookup_long_term(&mut net, 1).unwrap();
    assert_eq!(report["alice"], LtOutcome::Updated);
    let f = &bob.following()["alice"];
    assert_eq!(f.last_processed_lt_epoch, 1);
    assert_eq!(f.known_lt_pk, alice.keys_by_epoch()[&1].lt_public());
    assert_eq!(
        f.known_presence_pub,
        Some(alice.keys_by_epoch()[&1].presence_pub)
    );

    alice
        .register_short_term(&mut net, 3, b"at my desk")
        .unwrap();
    net.close_and_push(Tier::Short);
    let presence = bob.lookup_short_term(&mut net, 3).unwrap();
    assert_eq!(presence["alice"], Presence::Online(b"at my desk".to_vec()));

    // Not registering for the next short-term epoch reads as offline.
    net.close_and_push(Tier::Short);
    assert_eq!(
        bob.lookup_short_term(&mut net, 4).unwrap()["alice"],
        Presence::Offline
    );
}

#[test]
fn bundle_gives_presence_before_first_long_term_lookup() {
    let c = cfg();
    let mut net = InProcessNetwork::new(c.n_rev, c.n_lookup, c.h_keep, 1, 1, 5);
    let mut alice = Client::new(c, 0, seed(3));
    let mut bob = Client::new(c, 0, seed(4));
    befriend(&mut alice, &mut bob, "bob", "alice");
    alice.register_short_term(&mut net, 1, b"hi").unwrap();
    net.close_and_push(Tier::Short);
    assert_eq!(
        bob.lookup_short_term(&mut net, 1).unwrap()["alice"],
        Presence::Online(b"hi".to_vec())
    );
}

#[test]
fn revoked_friend_is_cut_off_and_others_continue() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(5));
    let mut bob = Client::new(c, 0, seed(6));
    let mut carol = Client::new(c, 0, seed(7));
    befriend(&mut alice, &mut bob, "bob", "alice");
    befriend(&mut alice, &mut carol, "carol", "alice");

    alice.register_long_term(&mut net, 1).unwrap();
    net.close_and_push(Tier::Long);
    for f in [&mut bob, &mut carol] {
        assert_eq!(
            f.lookup_long_term(&mut net, 1).unwrap()["alice"],
            LtOutcome::Updated
        );
    }

    alice.revoke_friend("carol").unwrap();
    alice.register_long_term(&mut net, 2).unwrap();
    assert!(alice.pending_revocations().is_empty());
    net.close_and_push(Tier::Long);
    assert_eq!(
        bob.lookup_long_term(&mut net, 2).unwrap()["alice"],
        LtOutcome::Updated
    );
    assert_eq!(
        carol.lookup_long_term(&mut net, 2).unwrap()["alice"],
        LtOutcome::Terminated(TerminationReason::SelfRevoked)
    );

    alice.register_long_term(&mut net, 3).unwrap();
    net.close_and_push(Tier::Long);
    assert_eq!(
        bob.lookup_long_term(&mut net, 3).unwrap()["alice"],
        LtOutcome::Updated
    );
    assert!(!carol
        .lookup_long_term(&mut net, 3)
        .unwrap()
        .contains_key("alice"));

    // Short-term epoch 9 lies in long-term epoch 3.
    for _ in 0..(9 - ST_PER_LT) {
        net.close_and_push(Tier::Short);
    }
    alice.register_short_term(&mut net, 9, b"back").unwrap();
    net.close_and_push(Tier::Short);
    assert_eq!(
        bob.lookup_short_term(&mut net, 9).unwrap()["alice"],
        Presence::Online(b"back".to_vec())
    );
    assert_eq!(
        carol.lookup_short_term(&mut net, 9).unwrap()["alice"],
        Presence::Unknown
    );
}

#[test]
fn catch_up_matches_never_absent_follower() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(8));
    let mut bob = Client::new(c, 0, seed(9));
    befriend(&mut alice, &mut bob, "bob", "alice");
    let mut twin = bob.clone();

    for j in 1..=4 {
        alice.register_long_term(&mut net, j).unwrap();
        net.close_and_push(Tier::Long);
        twin.lookup_long_term(&mut net, j).unwrap();
    }
    let reports = bob.catch_up(&mut net, 4).unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!(bob.following(), twin.following());
    assert_eq!(bob.lt_checked_through(), 4);
}

#[test]
fn catch_up_beyond_retention_needs_rekey() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(10));
    let mut bob = Client::new(c, 0, seed(11));
    befriend(&mut alice, &mut bob, "bob", "alice");
    for j in 1..=(c.h_keep as u64 + 1) {
        alice.register_long_term(&mut net, j).unwrap();
        net.close_and_push(Tier::Long);
    }
    let before = bob.following().clone();
    assert!(matches!(
        bob.catch_up(&mut net, c.h_keep as u64 + 1),
        Err(ClientError::NeedRekey { .. })
    ));
    assert_eq!(bob.following(), &before);
    // The oldest epoch has been evicted by the lookup servers.
    assert!(matches!(
        bob.lookup_long_term(&mut net, 1),
        Err(ClientError::UnknownEpoch { epoch: 1 })
    ));
}

#[test]
fn skipped_publisher_epoch_is_bridged() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(12));
    let mut bob = Client::new(c, 0, seed(13));
    befriend(&mut alice, &mut bob, "bob", "alice");

    net.close_and_push(Tier::Long);
    assert_eq!(
        bob.lookup_long_term(&mut net, 1).unwrap()["alice"],
        LtOutcome::NotFound
    );
    alice.register_long_term(&mut net, 2).unwrap();
    net.close_and_push(Tier::Long);
    assert_eq!(
        bob.lookup_long_term(&mut net, 2).unwrap()["alice"],
        LtOutcome::Updated
    );
    assert_eq!(
        bob.following()["alice"].known_lt_pk,
        alice.current_keys().1.lt_public()
    );
}

#[test]
fn query_count_is_n_fmax_regardless_of_friends() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(14));
    let mut lonely = Client::new(c, 0, seed(15));
    let mut bob = Client::new(c, 0, seed(16));
    befriend(&mut alice, &mut bob, "bob", "alice");
    alice.register_long_term(&mut net, 1).unwrap();
    net.close_and_push(Tier::Long);

    for (who, client) in [("lonely", &mut lonely), ("bob", &mut bob)] {
        let before: Vec<u64> = (0..3)
            .map(|k| net.traffic(Dest::Lookup(Tier::Long, k), 1).pir_queries)
            .collect();
        client.lookup_long_term(&mut net, 1).unwrap();
        for (k, b) in before.iter().enumerate() {
            let after = net.traffic(Dest::Lookup(Tier::Long, k), 1).pir_queries;
            assert_eq!(after - b, c.n_fmax as u64, "{who} at server {k}");
        }
    }
    net.close_and_push(Tier::Short);
    let before = net
        .traffic(Dest::Lookup(Tier::Short, 2), ST_PER_LT)
        .pir_queries;
    lonely.lookup_short_term(&mut net, ST_PER_LT).unwrap();
    assert_eq!(
        net.traffic(Dest::Lookup(Tier::Short, 2), ST_PER_LT)
            .pir_queries
            - before,
        c.n_fmax as u64
    );
}

#[test]
fn catch_up_volume_is_missed_epochs_times_n_fmax() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(17));
    let mut bob = Client::new(c, 0, seed(18));
    befriend(&mut alice, &mut bob, "bob", "alice");
    for j in 1..=3 {
        alice.register_long_term(&mut net, j).unwrap();
        net.close_and_push(Tier::Long);
    }
    bob.catch_up(&mut net, 3).unwrap();
    let total: u64 = (1..=3)
        .flat_map(|j| (0..3).map(move |k| (j, k)))
        .map(|(j, k)| net.traffic(Dest::Lookup(Tier::Long, k), j).pir_queries)
        .sum();
    assert_eq!(total, 3 * 3 * c.n_fmax as u64);
}

#[test]
fn malicious_lookup_server_aborts_without_state_change() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(19));
    let mut bob = Client::new(c, 0, seed(20));
    befriend(&mut alice, &mut bob, "bob", "alice");
    net.replace_lookup(
        Tier::Long,
        1,
        LookupServer::new(1, c.h_keep).with_fault_injection(true),
    );
    alice.register_long_term(&mut net, 1).unwrap();
    net.close_and_push(Tier::Long);

    let before = bob.following().clone();
    match bob.lookup_long_term(&mut net, 1) {
        // Detection only: the server blamed is the one that disagrees with
        // the interpolation, which here includes the faulty response.
        Err(ClientError::Inconsistent { epoch: 1, servers }) => assert!(!servers.is_empty()),
        other => panic!("expected Inconsistent, got {other:?}"),
    }
    assert_eq!(bob.following(), &before);
    assert_eq!(bob.lt_checked_through(), 0);
}

#[test]
fn metadata_without_majority_aborts() {
    let c = ClientConfig {
        n_lookup: 4,
        t: 1,
        ..cfg()
    };
    let mut net = InProcessNetwork::new(c.n_rev, 4, c.h_keep, 1, 1, 3);
    let mut bob = Client::new(c, 0, seed(21));
    net.close_and_push(Tier::Long);
    // Two servers know the epoch, two have never heard of it: no majority.
    net.replace_lookup(Tier::Long, 2, LookupServer::new(2, 5));
    net.replace_lookup(Tier::Long, 3, LookupServer::new(3, 5));
    assert!(matches!(
        bob.lookup_long_term(&mut net, 1),
        Err(ClientError::MetaDisagreement { epoch: 1 })
    ));
}

#[test]
fn friend_limits() {
    let c = ClientConfig { n_fmax: 2, ..cfg() };
    let mut alice = Client::new(c, 0, seed(22));
    let mut others: Vec<Client> = (0..3).map(|k| Client::new(c, 0, seed(30 + k))).collect();
    alice.befriend_out("a").unwrap();
    alice.befriend_out("b").unwrap();
    assert!(matches!(
        alice.befriend_out("c"),
        Err(ClientError::FriendLimitReached { limit: 2 })
    ));
    for (k, o) in others.iter_mut().enumerate() {
        let b = o.befriend_out("alice").unwrap();
        let r = alice.import_friend(&format!("f{k}"), &b);
        if k < 2 {
            r.unwrap();
        } else {
            assert!(matches!(r, Err(ClientError::FriendLimitReached { .. })));
        }
    }
}

#[test]
fn registration_record_size_ignores_friend_count() {
    let c = ClientConfig { n_fmax: 8, ..cfg() };
    let mut net = network(&c);
    let mut few = Client::new(c, 0, seed(23));
    let mut many = Client::new(c, 0, seed(24));
    for k in 0..8 {
        many.befriend_out(&k.to_string()).unwrap();
    }
    many.revoke_friend("3").unwrap();
    let a = few
        .register_long_term(&mut net, 1)
        .unwrap()
        .to_bytes()
        .len();
    let b = many
        .register_long_term(&mut net, 1)
        .unwrap()
        .to_bytes()
        .len();
    assert_eq!(a, b);
    assert_eq!(a, LongTermRecord::encoded_len(c.n_rev));
}

#[test]
fn rejected_registration_leaves_state_untouched() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(25));
    alice.befriend_out("x").unwrap();
    alice.revoke_friend("x").unwrap();
    let mk = alice.manager_key().clone();
    // Window is for epoch 1; epoch 2 is refused.
    match alice.register_long_term(&mut net, 2) {
        Err(ClientError::Rejected { code, .. }) => assert_eq!(code, ErrorCode::WrongEpochWindow),
        other => panic!("{other:?}"),
    }
    assert_eq!(alice.manager_key(), &mk);
    assert_eq!(alice.pending_revocations().len(), 1);
    assert_eq!(alice.keys_by_epoch().len(), 1);
}

/// Fails the first `n` requests, then passes through.
struct Flaky<'a> {
    inner: &'a mut InProcessNetwork,
    fail: usize,
    seen: Vec<Vec<u8>>,
}

impl Transport for Flaky<'_> {
    fn request(
        &mut self,
        dest: Dest,
        frame: &Frame,
    ) -> Result<Frame, mp3_core::transport::TransportError> {
        self.seen.push(frame.to_bytes());
        if self.fail > 0 {
            self.fail -= 1;
            return Err(mp3_core::transport::TransportError::Unreachable(dest));
        }
        self.inner.request(dest, frame)
    }
}

#[test]
fn registration_retransmits_identical_bytes() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(26));
    let mut flaky = Flaky {
        inner: &mut net,
        fail: 2,
        seen: Vec::new(),
    };
    alice.register_long_term(&mut flaky, 1).unwrap();
    assert_eq!(flaky.seen.len(), 3);
    assert!(flaky.seen.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(net.registration(Tier::Long).pending_len(), 1);
}

#[test]
fn no_key_nonce_pair_is_reused() {
    nonce_audit::begin();
    let c = cfg();
    let mut net = network(&c);
    let mut clients: Vec<Client> = (0..3).map(|k| Client::new(c, 0, seed(40 + k))).collect();
    let (a, rest) = clients.split_at_mut(1);
    for (k, f) in rest.iter_mut().enumerate() {
        befriend(&mut a[0], f, &k.to_string(), "a");
    }
    for j in 1..=3u64 {
        for cl in clients.iter_mut() {
            cl.register_long_term(&mut net, j).unwrap();
        }
        net.close_and_push(Tier::Long);
        for i in j * ST_PER_LT..(j + 1) * ST_PER_LT {
            for cl in clients.iter_mut() {
                cl.register_short_term(&mut net, i, b"m").unwrap();
            }
            net.close_and_push(Tier::Short);
        }
    }
    let log = nonce_audit::finish();
    assert_eq!(log.len(), 3 * 3 + 3 * 3 * 3);
    let distinct: BTreeSet<_> = log.iter().map(|(k, n)| (k.0, *n)).collect();
    assert_eq!(distinct.len(), log.len());
}

#[test]
fn keystore_round_trip_preserves_behaviour() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(50));
    let mut bob = Client::new(c, 0, seed(51));
    befriend(&mut alice, &mut bob, "bob", "alice");
    befriend(&mut bob, &mut alice, "alice", "bob");
    bob.befriend_out("zed").unwrap();
    bob.revoke_friend("zed").unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bob.mp3k");
    keystore::save(&path, &bob).unwrap();
    let mut restored = keystore::load(&path).unwrap();
    assert_eq!(keystore::encode(&restored), keystore::encode(&bob));

    alice.register_long_term(&mut net, 1).unwrap();
    net.close_and_push(Tier::Long);
    let mut net2 = InProcessNetwork::new(c.n_rev, c.n_lookup, c.h_keep, 2, ST_PER_LT, 99);
    let a = bob.register_long_term(&mut net, 2).unwrap();
    let b = restored.register_long_term(&mut net2, 2).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let r1 = bob.lookup_long_term(&mut net, 1).unwrap();
    let r2 = restored.lookup_long_term(&mut net, 1).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(bob.following(), restored.following());

    let mut bad = keystore::encode(&bob);
    bad[0] = b'X';
    assert!(matches!(
        keystore::decode(&bad),
        Err(keystore::KeystoreError::BadMagic)
    ));
    let mut bad = keystore::encode(&bob);
    bad[5] = 9;
    assert!(matches!(
        keystore::decode(&bad),
        Err(keystore::KeystoreError::UnsupportedVersion(9))
    ));
    let good = keystore::encode(&bob);
    assert!(keystore::decode(&good[..good.len() - 1]).is_err());
}

#[test]
fn counting_link_matches_server_side_totals() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(60));
    let mut bob = Client::new(c, 0, seed(61));
    befriend(&mut alice, &mut bob, "bob", "alice");
    let mut ca = LinkCounters::default();
    let mut cb = LinkCounters::default();
    alice
        .register_long_term(&mut CountingLink::new(&mut net, &mut ca), 1)
        .unwrap();
    bob.register_long_term(&mut CountingLink::new(&mut net, &mut cb), 1)
        .unwrap();
    net.close_and_push(Tier::Long);
    bob.lookup_long_term(&mut CountingLink::new(&mut net, &mut cb), 1)
        .unwrap();

    let server = net.traffic_where(Tier::Long, 1, |_| true);
    let sent = ca.get(Tier::Long, 1).0 + cb.get(Tier::Long, 1).0;
    let received = ca.get(Tier::Long, 1).1 + cb.get(Tier::Long, 1).1;
    assert_eq!(sent, server.to_server);
    assert_eq!(received, server.from_server);
}

#[test]
fn server_rejections_over_frames() {
    let c = cfg();
    let mut net = network(&c);
    let mut alice = Client::new(c, 0, seed(62));
    let mut scratch = network(&c);
    let rec = alice.register_long_term(&mut scratch, 1).unwrap();

    let mut bytes = rec.to_bytes();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    let reply = net
        .request(
            Dest::Registration(Tier::Long),
            &Frame::new(MsgType::RegisterLt, 1, bytes),
        )
        .unwrap();
    assert_eq!(reply.error_parts().unwrap().0, ErrorCode::BadSignature);

    let mut longer = rec.to_bytes();
    longer.extend_from_slice(&[0u8; 128]);
    let reply = net
        .request(
            Dest::Registration(Tier::Long),
            &Frame::new(MsgType::RegisterLt, 1, longer),
        )
        .unwrap();
    assert_eq!(reply.error_parts().unwrap().0, ErrorCode::MalformedRecord);

    let reply = net
        .request(
            Dest::Lookup(Tier::Long, 0),
            &Frame::new(MsgType::GetMeta, 7, Vec::new()),
        )
        .unwrap();
    assert_eq!(reply.error_parts().unwrap().0, ErrorCode::UnknownEpoch);
}
