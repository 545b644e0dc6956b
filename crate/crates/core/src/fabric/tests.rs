use proptest::prelude::*;

use super::*;

fn catalog() -> LinkCatalog {
    LinkCatalog::from_csv(include_str!("../../fixtures/links.csv").as_bytes()).unwrap()
}

fn hcw() -> OpticalFabric {
    OpticalFabric::from_json(include_str!("../../fixtures/hcw-fabric.json"), &catalog()).unwrap()
}

fn states(pairs: &[(&str, &str)]) -> ComponentStates {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn hefei(x1: &str, x2: &str, sk: &str, sw: &str, sl: &str, l2: &str) -> ComponentStates {
    states(&[
        ("X1", x1),
        ("X2", x2),
        ("sK", sk),
        ("sW", sw),
        ("sL", sl),
        ("L2", l2),
        ("sH", "1"),
    ])
}

fn links(pairs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
    pairs
        .iter()
        .map(|(t, r)| (t.to_string(), r.to_string()))
        .collect()
}

const INTERCITY: [(&str, &str); 3] = [("T5", "R5"), ("T6", "R6"), ("T7", "R7")];

fn with_intercity(pairs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
    let mut all = links(pairs);
    all.extend(links(&INTERCITY));
    all
}

#[test]
fn klqi_lib_connection_gives_state_one_mapping() {
    let got = hcw()
        .resolve_links(&hefei("cross", "bar", "2", "1", "1", "cross"))
        .unwrap();
    assert_eq!(
        got,
        with_intercity(&[("T1", "R3"), ("T3", "R4"), ("T4", "R1"), ("T2", "R2")])
    );
}

#[test]
fn wtpt_lib_connection_gives_state_two_mapping() {
    let got = hcw()
        .resolve_links(&hefei("bar", "cross", "1", "2", "2", "cross"))
        .unwrap();
    assert_eq!(
        got,
        with_intercity(&[("T2", "R3"), ("T3", "R4"), ("T4", "R2"), ("T1", "R1")])
    );
}

#[test]
fn klqi_wtpt_connection_with_bypass_gives_state_three_mapping() {
    let got = hcw()
        .resolve_links(&hefei("cross", "cross", "1", "1", "1", "bar"))
        .unwrap();
    assert_eq!(
        got,
        with_intercity(&[("T1", "R2"), ("T2", "R1"), ("T3", "R4"), ("T4", "R3")])
    );
}

#[test]
fn bypass_skips_router_losses() {
    let f = hcw();
    let loss = |s: &ComponentStates| {
        f.resolve_paths(s)
            .unwrap()
            .into_iter()
            .find(|p| p.transmitter == "T3")
            .unwrap()
            .total_loss_db
    };
    let routed = loss(&hefei("cross", "bar", "2", "1", "1", "cross"));
    let direct = loss(&hefei("cross", "cross", "1", "1", "1", "bar"));
    assert!(direct > routed, "{direct} vs {routed}");
    // NC fiber, WC fiber, two node circulators and the bypass switch.
    assert!((direct - (-0.6 - 0.5 - 0.8 - 0.8 - 0.6)).abs() < 1e-12);
}

#[test]
fn wuhu_switch_selects_one_end_node() {
    let f = hcw();
    let mut s = hefei("cross", "bar", "2", "1", "1", "cross");
    let a = f.resolve_links(&s).unwrap();
    s.insert("sH".into(), "2".into());
    let b = f.resolve_links(&s).unwrap();
    assert!(a.contains(&("T7".into(), "R7".into())));
    assert!(!a.contains(&("T8".into(), "R7".into())));
    assert!(b.contains(&("T8".into(), "R7".into())));
    assert!(!b.contains(&("T7".into(), "R7".into())));
}

#[test]
fn intercity_paths_carry_catalog_loss() {
    let paths = hcw()
        .resolve_paths(&hefei("cross", "bar", "2", "1", "1", "cross"))
        .unwrap();
    let hc = paths.iter().find(|p| p.transmitter == "T5").unwrap();
    assert_eq!(hc.total_loss_db, -18.4);
    assert!(hc.uses_fiber("hefei-chaohu"));
    let t8 = hcw()
        .resolve_paths(&states(&[
            ("X1", "bar"),
            ("X2", "bar"),
            ("sK", "1"),
            ("sW", "2"),
            ("sL", "1"),
            ("L2", "bar"),
            ("sH", "2"),
        ]))
        .unwrap()
        .into_iter()
        .find(|p| p.transmitter == "T8")
        .unwrap();
    assert!((t8.total_loss_db - (-7.1 - 0.6 - 5.0)).abs() < 1e-12);
    assert_eq!(t8.fibers().collect::<Vec<_>>(), vec!["whb-qasky", "tr-whb"]);
}

#[test]
fn empty_fabric_has_no_paths() {
    assert!(OpticalFabric::empty()
        .resolve_paths(&ComponentStates::new())
        .unwrap()
        .is_empty());
}

#[test]
fn missing_and_invalid_states_are_rejected() {
    let f = hcw();
    let mut s = hefei("cross", "bar", "2", "1", "1", "cross");
    s.remove("L2");
    assert_eq!(
        f.resolve_paths(&s).unwrap_err(),
        FabricError::MissingState("L2".into())
    );
    s.insert("L2".into(), "diagonal".into());
    assert!(matches!(
        f.resolve_paths(&s).unwrap_err(),
        FabricError::InvalidState { .. }
    ));
    s.insert("L2".into(), "bar".into());
    s.insert("nowhere".into(), "bar".into());
    assert!(matches!(
        f.resolve_paths(&s).unwrap_err(),
        FabricError::UnknownStateTarget(_)
    ));
}

#[test]
fn every_hefei_setting_is_a_matching_or_a_conflict() {
    let f = hcw();
    let two = ["cross", "bar"];
    let one = ["1", "2"];
    let mut resolved = 0;
    for x1 in two {
        for x2 in two {
            for l2 in two {
                for sk in one {
                    for sw in one {
                        for sl in one {
                            let s = hefei(x1, x2, sk, sw, sl, l2);
                            let Ok(paths) = f.resolve_paths(&s) else {
                                continue;
                            };
                            resolved += 1;
                            let txs: BTreeSet<_> = paths.iter().map(|p| &p.transmitter).collect();
                            let rxs: BTreeSet<_> = paths.iter().map(|p| &p.receiver).collect();
                            assert_eq!(txs.len(), paths.len());
                            assert_eq!(rxs.len(), paths.len());
                            let links = f.resolve_links(&s).unwrap();
                            if x1 == "bar" {
                                assert!(links.contains(&("T1".into(), "R1".into())));
                            }
                            if x2 == "bar" {
                                assert!(links.contains(&("T2".into(), "R2".into())));
                            }
                            for p in &paths {
                                assert!(p.total_loss_db <= 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
    assert!(resolved >= 3);
}

fn spec(components: serde_json::Value, segments: serde_json::Value) -> FabricSpec {
    serde_json::from_value(serde_json::json!({
        "schema_version": 1,
        "components": components,
        "segments": segments,
    }))
    .unwrap()
}

#[test]
fn transmitter_facing_transmitter_is_a_conflict() {
    let s = spec(
        serde_json::json!([
            {"id": "A", "kind": "terminal", "role": "tx"},
            {"id": "B", "kind": "terminal", "role": "tx"},
            {"id": "S", "kind": "switch_1x2"}
        ]),
        serde_json::json!([{"a": "A.p", "b": "S.c"}, {"a": "S.1", "b": "B.p"}]),
    );
    let f = OpticalFabric::build(&s, &LinkCatalog::default()).unwrap();
    let err = f.resolve_paths(&states(&[("S", "1")])).unwrap_err();
    assert!(matches!(err, FabricError::TransmitterLoop { .. }), "{err}");
    assert!(f.resolve_paths(&states(&[("S", "2")])).unwrap().is_empty());
}

#[test]
fn receivers_joined_by_a_switch_conflict() {
    let s = spec(
        serde_json::json!([
            {"id": "A", "kind": "terminal", "role": "rx"},
            {"id": "B", "kind": "terminal", "role": "rx"},
            {"id": "S", "kind": "switch_1x2"}
        ]),
        serde_json::json!([{"a": "A.p", "b": "S.c"}, {"a": "S.2", "b": "B.p"}]),
    );
    let f = OpticalFabric::build(&s, &LinkCatalog::default()).unwrap();
    let err = f.resolve_paths(&states(&[("S", "2")])).unwrap_err();
    assert!(matches!(err, FabricError::ReceiverLoop { .. }), "{err}");
}

#[test]
fn splitter_access_network_needs_time_division() {
    let s = spec(
        serde_json::json!([
            {"id": "E1", "kind": "terminal", "role": "tx"},
            {"id": "E2", "kind": "terminal", "role": "tx"},
            {"id": "E3", "kind": "terminal", "role": "tx"},
            {"id": "R", "kind": "terminal", "role": "rx"},
            {"id": "P", "kind": "splitter", "branches": 3}
        ]),
        serde_json::json!([
            {"a": "E1.p", "b": "P.1"},
            {"a": "E2.p", "b": "P.2"},
            {"a": "E3.p", "b": "P.3"},
            {"a": "P.c", "b": "R.p", "loss_db": -2.0}
        ]),
    );
    let f = OpticalFabric::build(&s, &LinkCatalog::default()).unwrap();
    let err = f.resolve_paths(&ComponentStates::new()).unwrap_err();
    assert!(matches!(err, FabricError::Contention { .. }), "{err}");
    let only_e2 = states(&[("E1", "off"), ("E3", "off")]);
    let paths = f.resolve_paths(&only_e2).unwrap();
    assert_eq!(paths.len(), 1);
    assert_eq!(paths[0].transmitter, "E2");
    let expected = -2.0 + splitter_loss(3).unwrap();
    assert!((paths[0].total_loss_db - expected).abs() < 1e-12);
}

#[test]
fn splitter_fan_out_is_a_conflict() {
    let s = spec(
        serde_json::json!([
            {"id": "T", "kind": "terminal", "role": "tx"},
            {"id": "R1", "kind": "terminal", "role": "rx"},
            {"id": "R2", "kind": "terminal", "role": "rx"},
            {"id": "P", "kind": "splitter", "branches": 2}
        ]),
        serde_json::json!([
            {"a": "T.p", "b": "P.c"},
            {"a": "P.1", "b": "R1.p"},
            {"a": "P.2", "b": "R2.p"}
        ]),
    );
    let f = OpticalFabric::build(&s, &LinkCatalog::default()).unwrap();
    assert!(matches!(
        f.resolve_paths(&ComponentStates::new()).unwrap_err(),
        FabricError::FanOut { .. }
    ));
}

#[test]
fn wiring_errors_name_the_segment() {
    let comps = serde_json::json!([
        {"id": "A", "kind": "terminal", "role": "tx"},
        {"id": "S", "kind": "switch_1x2"}
    ]);
    let cases = [
        (serde_json::json!([{"a": "A.p", "b": "S.9"}]), "segment 0: component 'S' has no port '9'"),
        (serde_json::json!([{"a": "A.p", "b": "Q.c"}]), "segment 0: unknown component in 'Q.c'"),
        (serde_json::json!([{"a": "A.p", "b": "S.c"}, {"a": "S.c", "b": "S.1"}]), "segment 1: port 'S.c' is already connected"),
        (serde_json::json!([{"a": "A.p", "b": "S.c", "fiber": "nope"}]), "segment 0: unknown fiber 'nope'"),
        (serde_json::json!([{"a": "Ap", "b": "S.c"}]), "segment 0: malformed port reference 'Ap' (expected COMPONENT.PORT)"),
    ];
    for (segments, message) in cases {
        let err = OpticalFabric::build(&spec(comps.clone(), segments), &LinkCatalog::default())
            .unwrap_err();
        assert_eq!(err.to_string(), message);
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = "{\n  \"schema_version\": 1,\n  \"components\": [\n    {\"id\": \"A\", \"kind\": \"warp\"}\n  ]\n}";
    match FabricSpec::from_json(text).unwrap_err() {
        FabricError::Parse { line, .. } => assert_eq!(line, 4),
        e => panic!("{e}"),
    }
}

#[test]
fn capacity_formulas() {
    assert_eq!(rtfm_capacity(0), 1);
    assert_eq!(rtfm_capacity(1), 3);
    assert_eq!(rtfm_capacity(2), 5);
    assert_eq!(fmos_simultaneous_limit(2), 1);
    assert_eq!(fmos_simultaneous_limit(3), 1);
    assert_eq!(fmos_simultaneous_limit(4), 2);
    assert_eq!(splitter_loss(1).unwrap(), 0.0);
    assert!((splitter_loss(2).unwrap() - -3.010_299_956_639_812).abs() < 1e-12);
    assert!((splitter_loss(8).unwrap() - -9.030_899_869_919_435).abs() < 1e-12);
    assert_eq!(splitter_loss(0).unwrap_err(), FabricError::ZeroBranches);
}

#[derive(Debug, Clone)]
enum Stage {
    Circulator,
    Switch { select_first: bool },
    Cross,
}

fn stage() -> impl Strategy<Value = Stage> {
    prop_oneof![
        Just(Stage::Circulator),
        any::<bool>().prop_map(|select_first| Stage::Switch { select_first }),
        Just(Stage::Cross),
    ]
}

/// A transmitter-to-receiver chain through random components, plus the loss
/// a by-hand sum predicts.
fn chain(stages: &[Stage], seg_losses: &[f64]) -> (FabricSpec, ComponentStates, f64) {
    let mut comps = vec![
        serde_json::json!({"id": "T", "kind": "terminal", "role": "tx"}),
        serde_json::json!({"id": "R", "kind": "terminal", "role": "rx"}),
    ];
    let mut segs = Vec::new();
    let mut st = ComponentStates::new();
    let mut expected = 0.0;
    let mut prev = "T.p".to_string();
    for (i, s) in stages.iter().enumerate() {
        let id = format!("c{i}");
        let (kind, inp, out) = match s {
            Stage::Circulator => {
                expected += -0.8;
                ("circulator3", "1", "2".to_string())
            }
            Stage::Switch { select_first } => {
                expected += -0.6;
                let sel = if *select_first { "1" } else { "2" };
                st.insert(id.clone(), sel.to_string());
                ("switch_1x2", "c", sel.to_string())
            }
            Stage::Cross => {
                expected += -0.6;
                st.insert(id.clone(), "cross".into());
                ("switch_2x2", "a1", "b2".to_string())
            }
        };
        comps.push(serde_json::json!({"id": id, "kind": kind}));
        segs.push(serde_json::json!({"a": prev, "b": format!("{id}.{inp}"), "loss_db": -seg_losses[i]}));
        expected += -seg_losses[i];
        prev = format!("{id}.{out}");
    }
    let last = seg_losses[stages.len()];
    segs.push(serde_json::json!({"a": prev, "b": "R.p", "loss_db": -last}));
    expected += -last;
    (
        spec(serde_json::Value::Array(comps), serde_json::Value::Array(segs)),
        st,
        expected,
    )
}

proptest! {
    #[test]
    fn path_loss_is_sum_of_segments_and_components(
        stages in prop::collection::vec(stage(), 0..8),
        losses in prop::collection::vec(0.0f64..5.0, 9),
    ) {
        let (s, st, expected) = chain(&stages, &losses);
        let f = OpticalFabric::build(&s, &LinkCatalog::default()).unwrap();
        let paths = f.resolve_paths(&st).unwrap();
        prop_assert_eq!(paths.len(), 1);
        let p = &paths[0];
        let by_parts = p.hops.iter().map(|h| h.loss_db).sum::<f64>()
            + p.components.iter().map(|(_, l)| l).sum::<f64>();
        prop_assert!((p.total_loss_db - expected).abs() < 1e-9);
        prop_assert!((p.total_loss_db - by_parts).abs() < 1e-9);
        prop_assert_eq!(p.hops.len(), stages.len() + 1);
    }

    #[test]
    fn toggling_a_2x2_swaps_exactly_its_two_receivers(
        pre_a in 0.0f64..3.0,
        pre_b in 0.0f64..3.0,
        bystander in 0.0f64..3.0,
    ) {
        let s = spec(
            serde_json::json!([
                {"id": "TA", "kind": "terminal", "role": "tx"},
                {"id": "TB", "kind": "terminal", "role": "tx"},
                {"id": "TC", "kind": "terminal", "role": "tx"},
                {"id": "RA", "kind": "terminal", "role": "rx"},
                {"id": "RB", "kind": "terminal", "role": "rx"},
                {"id": "RC", "kind": "terminal", "role": "rx"},
                {"id": "X", "kind": "switch_2x2"}
            ]),
            serde_json::json!([
                {"a": "TA.p", "b": "X.a1", "loss_db": -pre_a},
                {"a": "TB.p", "b": "X.a2", "loss_db": -pre_b},
                {"a": "X.b1", "b": "RA.p"},
                {"a": "X.b2", "b": "RB.p"},
                {"a": "TC.p", "b": "RC.p", "loss_db": -bystander}
            ]),
        );
        let f = OpticalFabric::build(&s, &LinkCatalog::default()).unwrap();
        let bar = f.resolve_links(&states(&[("X", "bar")])).unwrap();
        let cross = f.resolve_links(&states(&[("X", "cross")])).unwrap();
        prop_assert_eq!(bar, links(&[("TA", "RA"), ("TB", "RB"), ("TC", "RC")]));
        prop_assert_eq!(cross, links(&[("TA", "RB"), ("TB", "RA"), ("TC", "RC")]));
    }
}
