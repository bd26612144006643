use arco_core::ids::RoomId;
use arco_sim::harness::{simulate, SimConfig};
use arco_sim::latency::LatencyModel;
use arco_sim::scenario::{synth_scenario, ScenarioOptions};

fn opts(actions: usize, seed: u64) -> ScenarioOptions {
    ScenarioOptions {
        seed,
        actions,
        ..Default::default()
    }
}

#[test]
fn synthetic_session_converges() {
    let scenario = synth_scenario(RoomId::new("lab"), &opts(400, 3));
    let config = SimConfig {
        latency: LatencyModel { seed: 3, ..Default::default() },
        late_joiner_at: Some(200),
        ..Default::default()
    };
    let report = simulate(scenario, config).unwrap();
    assert!(report.converged);
    assert!(report.last_seq > 50);
    assert_eq!(report.actions, 400);
    assert!(report.transport_latency.min_ms >= 35.0 && report.transport_latency.max_ms <= 120.0);
}

#[test]
fn reconnecting_devices_and_drops_converge() {
    let mut o = opts(600, 11);
    o.reconnects = true;
    o.in_situ_peers = 2;
    let scenario = synth_scenario(RoomId::new("lab"), &o);
    let config = SimConfig {
        latency: LatencyModel {
            seed: 11,
            drop_rate: 0.3,
            ..Default::default()
        },
        late_joiner_at: Some(300),
        ..Default::default()
    };
    let report = simulate(scenario, config).unwrap();
    assert!(report.converged, "{report:#?}");
    assert!(report.dropped_lossy > 0);
}

fn persisted_run(dir: &std::path::Path, seed: u64) -> arco_sim::harness::SimReport {
    let scenario = synth_scenario(RoomId::new("lab"), &opts(300, seed));
    let config = SimConfig {
        latency: LatencyModel {
            seed,
            drop_rate: 0.1,
            ..Default::default()
        },
        storage: arco_relay::StorageConfig {
            persist_dir: Some(dir.to_path_buf()),
            base_scene: None,
        },
        ..Default::default()
    };
    simulate(scenario, config).unwrap()
}

#[test]
fn same_seed_writes_identical_sessions() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = persisted_run(a.path(), 9);
    let rb = persisted_run(b.path(), 9);
    let (da, db) = (ra.session_dir.clone().unwrap(), rb.session_dir.clone().unwrap());
    assert_eq!(da.file_name(), db.file_name());
    for file in ["session.log", "scene.json", "summary.json"] {
        let x = std::fs::read(da.join(file)).unwrap();
        let y = std::fs::read(db.join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let replayed = arco_core::persistence::replay_session(&da).unwrap();
    assert_eq!(replayed.state.hash(), ra.server_hash);
    assert_eq!(replayed.last_seq, ra.last_seq);

    let other = persisted_run(b.path(), 10);
    assert_ne!(other.server_hash, ra.server_hash);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

    #[test]
    fn every_connected_replica_matches_the_relay(
        seed in 0u64..1_000,
        drop_rate in 0.0f64..0.9,
        late in 0usize..150,
        editors in 1usize..3,
    ) {
        let mut o = opts(150, seed);
        o.ex_situ_peers = editors;
        o.reconnects = seed % 2 == 0;
        let scenario = synth_scenario(RoomId::new("p"), &o);
        let config = SimConfig {
            latency: LatencyModel { seed, drop_rate, ..Default::default() },
            late_joiner_at: Some(late),
            ..Default::default()
        };
        let report = simulate(scenario, config).unwrap();
        proptest::prop_assert!(report.converged);
        let joiner = report.clients.last().unwrap();
        proptest::prop_assert_eq!(joiner.hash, Some(report.server_hash));
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn batching_preserves_room_contents(seed in proptest::prelude::any::<u64>(), len in 2usize..120) {
        use arco_sim::streams::{fold_all, redundant_stream};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let stream = redundant_stream(&mut rng, len);
        let session = arco_core::ids::SessionId::new("s");
        let (plain, _) = fold_all(&stream, &session);
        let (batched, _) = fold_all(&arco_core::protocol::coalesce(stream.clone()), &session);
        proptest::prop_assert_eq!(plain.hash(), batched.hash());
    }
}
