use super::*;
use proptest::prelude::*;

fn route(nodes: &[&str]) -> RelayRoute {
    RelayRoute::new(nodes).unwrap()
}

fn bits(n: usize, seed: u64) -> KeyBits {
    (0..n).map(|i| (i as u64).wrapping_mul(seed | 1).count_ones() % 2 == 1).collect()
}

fn stocked(nodes: &[&str], n: u64) -> KeyStore {
    let mut s = KeyStore::new(11);
    for w in nodes.windows(2) {
        s.deposit(w[0], w[1], n);
    }
    s
}

#[test]
fn vpn_cadence_examples() {
    assert_eq!(vpn_refresh_rate(770.0), 3);
    assert_eq!(vpn_refresh_rate(256.0), 1);
    assert_eq!(vpn_refresh_rate(255.9), 0);
    assert_eq!(vpn_refresh_rate(0.0), 0);
    assert_eq!(vpn_refresh_rate(-4.0), 0);
    assert_eq!(vpn_refresh_rate(f64::NAN), 0);
}

#[test]
fn feasibility_examples() {
    assert_eq!(otp_feasible(600.0, 7270.0), Feasibility::Realtime);
    assert_eq!(otp_feasible(600.0, 770.0), Feasibility::Realtime);
    assert_eq!(otp_feasible(64000.0, 770.0), Feasibility::PreloadRequired);
}

#[test]
fn realtime_round_trip_over_a_relay() {
    let nodes = ["KLQI", "WTPT", "CHB", "TR", "Qasky"];
    let mut store = stocked(&nodes, 4096);
    let mut s = OtpSession::new("call", route(&nodes), OtpMode::Realtime, 600.0).unwrap();
    let msg = bits(1000, 7);
    let ct = s.encrypt(&mut store, &msg).unwrap();
    assert_ne!(ct, msg);
    assert_eq!(s.decrypt(&ct).unwrap(), msg);
    for w in nodes.windows(2) {
        assert_eq!(store.available(w[0], w[1]), 3096);
    }
    assert_eq!(s.consumed_bits(), 1000);
}

#[test]
fn realtime_exhaustion_names_the_session() {
    let mut store = stocked(&["KLQI", "NC"], 770 * 300);
    let mut s = OtpSession::new("pstn-1", route(&["KLQI", "NC"]), OtpMode::Realtime, 64000.0)
        .unwrap();
    // one sample interval of payload at the codec rate
    let err = s.consume(&mut store, 64000 * 300).unwrap_err();
    assert_eq!(
        err,
        AppError::KeyExhausted {
            session: "pstn-1".into(),
            needed: 64000 * 300,
            available: 770 * 300
        }
    );
    assert!(err.to_string().contains("pstn-1"));
    assert_eq!(store.available("KLQI", "NC"), 770 * 300);
}

#[test]
fn card_boundary() {
    let nodes = ["KLQI", "WTPT"];
    let mut store = stocked(&nodes, 3_000_000);
    let mode = OtpMode::Preloaded {
        card_bits: 1_000_000,
    };
    let mut s = OtpSession::new("sd", route(&nodes), mode, 600.0).unwrap();
    s.load_card(&mut store, true).unwrap();
    assert_eq!(store.available("KLQI", "WTPT"), 2_000_000);
    let msg = bits(1_000_000, 3);
    let ct = s.encrypt(&mut store, &msg).unwrap();
    assert_eq!(s.decrypt(&ct).unwrap(), msg);
    assert!(matches!(
        s.encrypt(&mut store, &bits(1, 1)),
        Err(AppError::KeyExhausted { available: 0, .. })
    ));

    let mut t = OtpSession::new("sd2", route(&nodes), mode, 600.0).unwrap();
    t.load_card(&mut store, true).unwrap();
    let err = t.encrypt(&mut store, &bits(1_000_001, 5)).unwrap_err();
    assert!(matches!(err, AppError::KeyExhausted { needed: 1_000_001, available: 1_000_000, .. }));
}

#[test]
fn card_reload_keeps_unused_key() {
    let nodes = ["A", "B", "C"];
    let mut store = stocked(&nodes, 100);
    let mode = OtpMode::Preloaded { card_bits: 40 };
    let mut s = OtpSession::new("s", route(&nodes), mode, 1.0).unwrap();
    s.load_card(&mut store, true).unwrap();
    let m1 = bits(30, 9);
    let c1 = s.encrypt(&mut store, &m1).unwrap();
    s.load_card(&mut store, true).unwrap();
    assert_eq!(s.card_remaining(), 50);
    let m2 = bits(50, 13);
    let c2 = s.encrypt(&mut store, &m2).unwrap();
    assert_eq!(s.decrypt(&c1).unwrap(), m1);
    assert_eq!(s.decrypt(&c2).unwrap(), m2);
    assert_eq!(store.available("A", "B"), 20);
}

#[test]
fn card_load_fails_without_stock() {
    let mut store = stocked(&["A", "B"], 10);
    let mode = OtpMode::Preloaded { card_bits: 11 };
    let mut s = OtpSession::new("s", route(&["A", "B"]), mode, 1.0).unwrap();
    assert!(matches!(
        s.load_card(&mut store, false),
        Err(AppError::KeyExhausted { needed: 11, available: 10, .. })
    ));
    assert_eq!(store.available("A", "B"), 10);
}

#[test]
fn invalid_sessions() {
    let r = route(&["A", "B"]);
    assert!(OtpSession::new("x", r.clone(), OtpMode::Preloaded { card_bits: 0 }, 1.0).is_err());
    assert!(OtpSession::new("x", r.clone(), OtpMode::Realtime, -1.0).is_err());
    assert!(VpnTunnel::new("v", r, 0.0).is_err());
}

#[test]
fn decrypt_without_key_is_out_of_sync() {
    let mut s = OtpSession::new("s", route(&["A", "B"]), OtpMode::Realtime, 1.0).unwrap();
    assert!(matches!(s.decrypt(&bits(4, 1)), Err(AppError::OutOfSync { .. })));
}

#[test]
fn vpn_refresh_accounting() {
    let nodes = ["WTPT", "CHB", "TR"];
    let mut store = stocked(&nodes, 600);
    let mut v = VpnTunnel::new("vpn", route(&nodes), 1.0).unwrap();
    assert_eq!(v.due(0.0, 300.0), 300);
    assert_eq!(v.due(0.5, 2.5), 2);
    v.refresh(&mut store).unwrap();
    v.refresh(&mut store).unwrap();
    assert!(v.refresh(&mut store).is_err());
    assert_eq!((v.refreshes(), v.missed(), v.consumed_bits()), (2, 1, 512));
    assert_eq!(store.available("WTPT", "CHB"), 88);
    assert_eq!(store.available("CHB", "TR"), 88);
}

#[test]
fn batched_refresh_matches_single_refreshes() {
    let nodes = ["A", "B", "C"];
    let mut one = stocked(&nodes, 1000);
    let mut many = stocked(&nodes, 1000);
    let mut v1 = VpnTunnel::new("v", route(&nodes), 1.0).unwrap();
    let mut v2 = v1.clone();
    for _ in 0..5 {
        let _ = v1.refresh(&mut one);
    }
    assert_eq!(v2.refresh_many(&mut many, 5).unwrap(), 3);
    assert_eq!((v1.refreshes(), v1.missed()), (v2.refreshes(), v2.missed()));
    assert_eq!(one.snapshot(), many.snapshot());
}

#[test]
fn session_modes_deserialize() {
    let m: OtpMode = serde_json::from_str(r#"{"mode":"preloaded","card_bits":5}"#).unwrap();
    assert_eq!(m, OtpMode::Preloaded { card_bits: 5 });
    let m: OtpMode = serde_json::from_str(r#"{"mode":"realtime"}"#).unwrap();
    assert_eq!(m, OtpMode::Realtime);
}

proptest! {
    #[test]
    fn otp_round_trip(
        hops in 1usize..5,
        preload in any::<bool>(),
        lens in prop::collection::vec(1usize..300, 1..6),
        seed in any::<u64>(),
    ) {
        let nodes: Vec<String> = (0..=hops).map(|i| format!("N{i}")).collect();
        let refs: Vec<&str> = nodes.iter().map(String::as_str).collect();
        let total: usize = lens.iter().sum();
        let mut store = stocked(&refs, 2 * total as u64);
        let mode = if preload {
            OtpMode::Preloaded { card_bits: total as u64 }
        } else {
            OtpMode::Realtime
        };
        let mut s = OtpSession::new("p", route(&refs), mode, 1.0).unwrap();
        if preload {
            s.load_card(&mut store, true).unwrap();
        }
        let msgs: Vec<KeyBits> = lens.iter().enumerate().map(|(i, &n)| bits(n, seed ^ i as u64)).collect();
        let cts: Vec<KeyBits> = msgs.iter().map(|m| s.encrypt(&mut store, m).unwrap()).collect();
        for (m, c) in msgs.iter().zip(&cts) {
            prop_assert_eq!(&s.decrypt(c).unwrap(), m);
        }
        // each key bit came out of every hop's pool exactly once
        for w in refs.windows(2) {
            let p = store.pool(w[0], w[1]).unwrap();
            prop_assert_eq!(p.consumed(), total as u64);
            prop_assert_eq!(p.produced(), p.consumed() + p.available());
        }
    }

    #[test]
    fn refresh_rate_is_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(vpn_refresh_rate(lo) <= vpn_refresh_rate(hi));
        let via_route = vpn_refresh_rate(relay_throughput_of(&[a, b]));
        prop_assert_eq!(via_route, vpn_refresh_rate(lo));
    }
}

fn relay_throughput_of(rates: &[f64]) -> f64 {
    crate::keymgmt::relay_throughput(rates)
}
