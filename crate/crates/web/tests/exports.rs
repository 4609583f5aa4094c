use rpg_web::{schedule, transfer_curve, vdw, Scan};

#[test]
fn schedule_matches_default_gate_time() {
    let s = schedule(90.0, 64).unwrap();
    assert!((s.total - (s.t1 + s.t2 + s.t3)).abs() < 1e-15);
    assert!((0.27..=0.31).contains(&s.total), "{}", s.total);
    let peak = s.raman.y.iter().cloned().fold(0.0, f64::max);
    assert!((peak - 90.0).abs() < 0.5, "{peak}");
    assert_eq!(s.raman.x.len(), 64);
}

#[test]
fn transfer_curves_have_expected_ends() {
    let r = transfer_curve(Scan::Retention, 90.0, 2.5, 2.5, 4.0, 4).unwrap();
    assert!(r.y.iter().all(|&p| p > 0.99), "{:?}", r.y);
    let d = transfer_curve(Scan::Detuning, 90.0, 2.5, 0.0, 10.0, 3).unwrap();
    assert!(d.y[0] < 0.01 && d.y[2] > 0.95, "{:?}", d.y);
    let b = transfer_curve(Scan::Blockade, 90.0, 2.5, 0.0, 10.0, 3).unwrap();
    assert!(b.y[0] < 0.01 && b.y[2] > 0.95, "{:?}", b.y);
}

#[test]
fn vdw_sixth_power() {
    let c = vdw(1.0e6, 5.0, 10.0, 2).unwrap();
    assert!((c.y[1] - c.y[0] / 64.0).abs() < 1e-9 * c.y[0]);
}

#[test]
fn bad_requests_are_errors() {
    assert!(vdw(1.0, 5.0, 5.0, 10).is_err());
    assert!(vdw(1.0, 1.0, 5.0, 100_000).is_err());
    assert!(Scan::parse("nope").is_err());
    assert!(transfer_curve(Scan::Detuning, 0.0, 2.5, 0.0, 1.0, 3).is_err());
    assert!(rpg_web::transfer_curve_js("nope", 90.0, 2.5, 0.0, 1.0, 3).unwrap_err().contains("unknown scan"));
}

#[test]
fn exports_return_json() {
    let text = rpg_web::vdw_curve_js(0.0, 4.0, 8.0, 5).unwrap();
    assert!(text.starts_with('{') && text.contains("\"y\":[0.0,0.0,0.0,0.0,0.0]"), "{text}");
}
