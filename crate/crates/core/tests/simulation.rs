use beacontime::cost::{first_authentication_cost, steady_state_cost};
use beacontime::scenario::Scenario;
use beacontime::sim::{self, EventKind};
use beacontime::CostTable;

const TRANSIT: &str = r#"schema = "beacontime-scenario/1"

[simulation]
duration_s = 100.0

[[ap]]
ap_id = "02:00:00:00:00:01"
anchor_period = 600
anchor_every = 0

[client]
speed_kmh = 15.0
ap_coverage_m = 100.0
entry_s = 61.2

[detection]
windows_s = [1.0]

[seeds]
master = 4
"#;

#[test]
fn counted_cost_matches_closed_form() {
    let out = sim::run(&Scenario::from_toml(TRANSIT).unwrap()).unwrap();
    let c = &out.summary.cost;
    let t = CostTable::default();

    assert_eq!(c.first_k, Some(599));
    assert_eq!(c.authenticated, 234);
    assert_eq!(c.counters.sig_verifies, 1);
    assert_eq!(c.counters.hmacs, 234);
    assert_eq!(c.counters.hashes, 598 + 234);

    let formula = first_authentication_cost(599, false, &t) + 233.0 * steady_state_cost(&t);
    assert!((c.beacon_auth_us - formula).abs() < 1e-6, "{} vs {formula}", c.beacon_auth_us);
    assert!((c.formula_us.unwrap() - formula).abs() < 1e-6);

    let transit = c.transit.as_ref().unwrap();
    assert_eq!(transit.beacons, 234);
    assert!((transit.total_auth_us - 3211.26).abs() < 1e-6);
    assert!((c.beacon_auth_us - transit.total_auth_us).abs() < 1e-6);
}

#[test]
fn every_frame_is_sent_before_received_and_received_before_verified() {
    let out = sim::run(&Scenario::from_toml(TRANSIT).unwrap()).unwrap();
    let mut last = i64::MIN;
    for e in &out.events {
        assert!(e.time_us >= last, "event log not time ordered at seq {}", e.seq);
        last = e.time_us;
    }
    let mut tx = std::collections::HashMap::new();
    let mut rx = std::collections::HashMap::new();
    for e in &out.events {
        let key = (e.source.clone(), e.index);
        match e.kind {
            EventKind::Tx => {
                tx.entry(key).or_insert(e.seq);
            }
            EventKind::Rx => {
                let sent = tx.get(&key).expect("rx without tx");
                assert!(*sent < e.seq);
                rx.insert(key, e.seq);
            }
            EventKind::Verify => assert!(rx[&key] < e.seq),
            _ => {}
        }
    }
    assert!(!rx.is_empty());
}

#[test]
fn unauthenticated_ap_feeds_nothing_to_the_detector() {
    let text = TRANSIT.replace("anchor_every = 0", "authenticated = false");
    let out = sim::run(&Scenario::from_toml(&text).unwrap()).unwrap();
    assert!(out.observations.is_empty());
    assert!(out.reports[0].windows.iter().all(|w| w.n_obs == 0 || w.source != beacontime::detector::WindowSource::Beacons));
}
