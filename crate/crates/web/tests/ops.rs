use uges_web::{compare_json, concentrability_curve_json, occupancy_json};

#[test]
fn heatmap_covers_the_grid() {
    let v = occupancy_json("monolith5", "optimal").unwrap();
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(5), Some(5)));
    let visits: Vec<f64> = v["visits"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(visits.len(), 25);
    // The optimal walker never stands on the goal before retiring.
    assert_eq!(visits[12], 0.0);
    assert_eq!(v["c_star"], 1.0);
    assert!(occupancy_json("monolith4", "optimal").is_err());
    assert!(occupancy_json("monolith5", "greedy").is_err());
}

#[test]
fn curve_starts_at_one_and_grows() {
    let v = concentrability_curve_json("bandit2", 11).unwrap();
    let c: Vec<f64> = v["c_star"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(c[0], 1.0);
    assert!((c[10] - 2.0).abs() < 1e-12);
    assert!(c.windows(2).all(|w| w[0] <= w[1]));
    assert!(concentrability_curve_json("bandit2", 1).is_err());
}

#[test]
fn compare_returns_both_curves() {
    let v = compare_json("monolith5", 100, 0.05, 3).unwrap();
    for method in ["uges", "naive"] {
        assert_eq!(v[method]["steps"].as_array().unwrap().len(), 20);
    }
    assert_eq!(v["naive"]["ledger"]["mixed_batches"], 100);
}
