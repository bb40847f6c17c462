mod common;

use std::time::Instant;

use adnflex::flex::{corner_points_2bus, corner_polygon, radial_scan, reduce_polygon, FeederBase, FlexPolygon, ScanOptions};
use adnflex::model::{parse_case, NetworkCase, StressDirection};
use adnflex::vsm::{
    apply_contingency, pv_curve, screen_contingencies, solve_vsm, solve_vsm_flex, PvOptions, VsmProblemSpec,
};
use adnflex::Error;
use common::{case, polar_nose};

fn stress(c: &NetworkCase) -> StressDirection {
    c.stress.clone().unwrap()
}

fn frozen(c: &NetworkCase) -> adnflex::vsm::VsmSolution {
    solve_vsm(&VsmProblemSpec::new(c.clone(), stress(c))).unwrap()
}

fn table_ii_polygon() -> FlexPolygon {
    let f = case("two_bus_adn.json");
    let b = FeederBase::new(&f).unwrap();
    corner_polygon(&corner_points_2bus(&f).unwrap(), (b.p_j0, b.q_j0)).unwrap()
}

fn feeder30_hexagon() -> FlexPolygon {
    let f = case("feeder30.json");
    let (b, scan) = radial_scan(&f, &[], &ScanOptions::default()).unwrap();
    reduce_polygon(&scan.coords(), 6, (b.p_j0, b.q_j0)).unwrap()
}

#[test]
fn lossless_corridor_reaches_maximum_power_transfer() {
    let c = case("lossless_2bus.json");
    let t = Instant::now();
    let sol = frozen(&c);
    assert!(t.elapsed().as_secs_f64() < 1.0);
    let exact = 1.05f64.powi(2) / (2.0 * 0.2);
    assert!((sol.lambda_star - exact).abs() < 1e-6 * exact, "{}", sol.lambda_star);
    assert!((sol.point.vm(1) - 1.05 / 2f64.sqrt()).abs() < 1e-5);
    assert!(sol.probe.confirms_margin());
}

#[test]
fn corridor_margin_matches_continuation_oracles() {
    let c = case("corridor.json");
    let sol = frozen(&c);
    let oracle = polar_nose(&c, &[]) * 100.0;
    assert!((sol.vsm_mw - oracle).abs() / oracle < 1e-4, "{} vs {oracle}", sol.vsm_mw);
    // frozen reference from the independent continuation
    assert!((sol.vsm_mw - 173.92).abs() < 0.01, "{}", sol.vsm_mw);
    let pv = pv_curve(&c, &stress(&c), &[], &PvOptions::default()).unwrap();
    assert!((sol.vsm_mw - pv.vsm_mw).abs() / pv.vsm_mw < 5e-3);
    assert!(sol.complementarity_violations.is_empty());
    assert!(sol.probe.confirms_margin());
}

#[test]
fn every_shipped_case_agrees_with_continuation() {
    for name in ["lossless_2bus.json", "corridor.json", "mesh5.json"] {
        let c = case(name);
        let sol = frozen(&c);
        let pv = pv_curve(&c, &stress(&c), &[], &PvOptions::default()).unwrap();
        assert!((sol.vsm_mw - pv.vsm_mw).abs() / pv.vsm_mw < 5e-3, "{name}: {} vs {}", sol.vsm_mw, pv.vsm_mw);
        for g in &sol.gen_report {
            // voltage at its reference or reactive output at a limit
            assert!((g.v - g.v_ref).abs() < 1e-5 || g.limit.is_some(), "{name}: {g:?}");
        }
    }
}

#[test]
fn flexibility_never_lowers_the_margin() {
    let polys = [table_ii_polygon(), feeder30_hexagon()];
    for name in ["corridor.json", "mesh5.json"] {
        let c = case(name);
        let base = frozen(&c);
        for p in &polys {
            let flex = solve_vsm_flex(&c, &stress(&c), vec![p.clone()]).unwrap();
            assert!(flex.vsm_mw >= base.vsm_mw - 1e-6, "{name}: {} < {}", flex.vsm_mw, base.vsm_mw);
            let (dp, dq) = flex.adn_adjustments[0];
            assert!(p.min_slack(dp, dq) >= -1e-8);
        }
    }
}

#[test]
fn table_ii_polygon_raises_the_corridor_margin() {
    let c = case("corridor.json");
    let base = frozen(&c);
    let poly = table_ii_polygon();
    let flex = solve_vsm_flex(&c, &stress(&c), vec![poly.clone()]).unwrap();
    assert!(flex.vsm_mw > base.vsm_mw + 1.0, "{} vs {}", flex.vsm_mw, base.vsm_mw);
    // the optimum sits on the polygon boundary
    let (dp, dq) = flex.adn_adjustments[0];
    assert!(!flex.binding_fr_constraints[0].is_empty());
    assert!(poly.min_slack(dp, dq).abs() < 1e-6);
    // with the adjustment frozen in, the margin is the same
    let pv = pv_curve(&c, &stress(&c), &flex.adn_adjustments, &PvOptions::default()).unwrap();
    assert!((pv.vsm_mw - flex.vsm_mw).abs() / flex.vsm_mw < 0.02);
    let oracle = polar_nose(&c, &flex.adn_adjustments) * 100.0;
    assert!((oracle - flex.vsm_mw).abs() / flex.vsm_mw < 1e-3, "{oracle} vs {}", flex.vsm_mw);
    // moving the adjustment back inside loses margin
    let inner = pv_curve(&c, &stress(&c), &[(0.9 * dp, 0.9 * dq)], &PvOptions::default()).unwrap();
    assert!(inner.vsm_mw < flex.vsm_mw);
}

#[test]
fn single_point_polygon_equals_frozen() {
    let c = case("mesh5.json");
    let base = frozen(&c);
    let same = solve_vsm_flex(&c, &stress(&c), vec![FlexPolygon::single_point((20.0, 5.0))]).unwrap();
    assert!((same.vsm_mw - base.vsm_mw).abs() < 1e-6);
    assert_eq!(same.adn_adjustments, vec![(0.0, 0.0)]);
}

#[test]
fn degenerate_stress_is_rejected() {
    let c = case("corridor.json");
    let mut dir = StressDirection::default();
    dir.dp.insert("load".into(), 0.0);
    assert!(matches!(solve_vsm(&VsmProblemSpec::new(c, dir)), Err(Error::DegenerateStress)));
}

#[test]
fn losing_one_of_two_parallel_lines_halves_transfer() {
    let text = r#"{"base_mva": 100,
      "buses": [{"id": "inf", "kind": "slack", "v_min": 0.5, "v_max": 1.5},
                {"id": "load", "kind": "load", "v_min": 0.3, "v_max": 1.5}],
      "branches": [{"id": "a", "from": "inf", "to": "load", "r": 0, "x": 0.4},
                   {"id": "b", "from": "inf", "to": "load", "r": 0, "x": 0.4}],
      "loads": [{"bus": "load", "p0": 0, "q0": 0}],
      "generators": [{"id": "g", "bus": "inf", "p_g0": 0, "p_min": -1e6, "p_max": 1e6, "v_ref": 1.05, "w": 1}],
      "stress": {"dp": {"load": 100}}}"#;
    let c = parse_case(text).unwrap();
    let both = frozen(&c);
    let mut spec = VsmProblemSpec::new(c.clone(), stress(&c));
    spec.contingency = Some("a".into());
    let one = solve_vsm(&spec).unwrap();
    assert!((one.vsm_mw / both.vsm_mw - 0.5).abs() < 1e-6);
    let lossless = case("lossless_2bus.json");
    assert!(matches!(apply_contingency(&lossless, "l"), Err(Error::Islanding(_))));
}

#[test]
fn outage_screening_matches_continuation() {
    let c = case("mesh5.json");
    let spec = VsmProblemSpec::new(c.clone(), stress(&c));
    let ids: Vec<String> = c.branches.iter().map(|b| b.id.clone()).collect();
    let res = screen_contingencies(&spec, &ids);
    let margins: Vec<f64> = res.iter().filter_map(|r| r.vsm_mw).collect();
    assert!(margins.len() >= 5);
    assert!(margins.windows(2).all(|w| w[0] <= w[1]));
    for r in res.iter().filter(|r| r.vsm_mw.is_some()) {
        let out = apply_contingency(&c, &r.branch).unwrap();
        let pv = pv_curve(&out, &stress(&c), &[], &PvOptions::default()).unwrap();
        let m = r.vsm_mw.unwrap();
        assert!((m - pv.vsm_mw).abs() / pv.vsm_mw < 5e-3, "{}: {m} vs {}", r.branch, pv.vsm_mw);
    }
    // outages that cannot carry the base load are reported, not hidden
    assert!(res.iter().any(|r| r.error.is_some()));
}
