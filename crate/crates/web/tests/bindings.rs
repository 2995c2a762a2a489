use dcm_stabilizer_web::*;

#[test]
fn balanced_split_puts_half_the_weight_on_each_foot() {
    let v = distribute(0.0, 0.0, 0.5).unwrap();
    assert!((v[0] - v[1]).abs() < 1e-3 * v[0], "{v:?}");
    assert!(v[6].abs() < 1e-6 && v[7].abs() < 1e-6);
}

#[test]
fn pressure_ratio_shifts_the_load() {
    let v = distribute(0.0, 0.05, 0.8).unwrap();
    assert!(v[0] > v[1], "{v:?}");
}

#[test]
fn push_is_recovered_only_with_feedback() {
    assert!(push(0.0, 8.0, true).unwrap().fall_time().is_nan());
    assert!(!push(0.0, 8.0, false).unwrap().fall_time().is_nan());
}

#[test]
fn series_has_whole_samples() {
    let e = run_scenario("standing", true).unwrap();
    assert!(!e.series().is_empty());
    assert_eq!(e.series().len() % SERIES_STRIDE, 0);
    assert!(scenario_names().lines().any(|n| n == "flat_walk"));
}
