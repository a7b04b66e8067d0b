use svine_wasm::{chain_path, copula_for, fixture_text, pair_sample, structure_report};

#[test]
fn negative_tau_rotates_one_sided_families() {
    let c = copula_for("clayton", -0.4).unwrap();
    assert_eq!(c.rotation(), 90);
    assert!((c.kendall_tau() + 0.4).abs() < 1e-6);
    assert!(copula_for("gaussian", 0.99).is_err());
    assert!(copula_for("nonsense", 0.2).is_err());
}

#[test]
fn pair_sample_matches_its_tau() {
    let v = pair_sample("gumbel", 0.5, 3000, 4).unwrap();
    assert_eq!(v["u"].as_array().unwrap().len(), 3000);
    let gap = v["sample_tau"].as_f64().unwrap() - v["tau"].as_f64().unwrap();
    assert!(gap.abs() < 0.04, "{gap}");
    assert_eq!(pair_sample("gumbel", 0.5, 50, 4).unwrap(), pair_sample("gumbel", 0.5, 50, 4).unwrap());
}

#[test]
fn chain_carries_serial_dependence() {
    let v = chain_path("frank", 0.6, 2000, 2).unwrap();
    assert_eq!(v["x"].as_array().unwrap().len(), 2000);
    assert!((v["lag1_tau"].as_f64().unwrap() - 0.6).abs() < 0.05);
}

#[test]
fn fixtures_check_as_expected() {
    let m = structure_report(&fixture_text("m-vine").unwrap(), 5).unwrap();
    assert_eq!(m["stationary"], true);
    let c = structure_report(&fixture_text("copar").unwrap(), 5).unwrap();
    assert_eq!(c["stationary"], false);
    assert_eq!(c["witness"]["t"], 2);
    assert!(structure_report("{", 3).is_err());
}
