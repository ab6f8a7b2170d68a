use serde_json::Value;
use tatesens_demo::handle;

fn run(op: &str, json: &str) -> Value {
    serde_json::from_str(&handle(op, json).unwrap()).unwrap()
}

#[test]
fn sweep_is_a_straight_line_between_its_endpoints() {
    let v = run(
        "sweep",
        r#"{"treatment": {"estimate": 5, "se": 3}, "z_interaction": {"estimate": 3, "se": 1.5},
            "v_interaction": {"estimate": 0.2, "se": 0.2}, "z_mean": 2, "z_lo": 1.5, "z_hi": 2.5,
            "v_range": [20, 40], "grid_points": 5}"#,
    );
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let point = |k: usize| rows[k]["estimate"].as_f64().unwrap();
    assert!((point(0) - (5.0 + 3.0 * 2.0 + 0.2 * 20.0)).abs() < 1e-12);
    assert!((point(4) - (5.0 + 3.0 * 2.0 + 0.2 * 40.0)).abs() < 1e-12);
    assert!((point(2) - (point(0) + point(4)) / 2.0).abs() < 1e-12);
    for r in rows {
        assert!(r["lower"].as_f64().unwrap() < r["estimate"].as_f64().unwrap());
    }
    assert!(v["svg"].as_str().unwrap().starts_with("<svg"));
}

#[test]
fn bad_requests_are_reported() {
    assert!(handle("sweep", "{}").unwrap_err().starts_with("bad request"));
    assert!(handle(
        "sweep",
        r#"{"treatment": {"estimate": 1, "se": 1}, "z_interaction": {"estimate": 1, "se": 1},
            "v_interaction": {"estimate": 1, "se": 1}, "z_mean": 2, "z_lo": 1.5, "v_range": [0, 1]}"#
    )
    .is_err());
    assert!(handle("nothing", "{}").is_err());
    assert!(handle(
        "simulation",
        r#"{"preset": "none", "replicates": 5000, "n_trial": 100, "n_pop": 100, "seed": 1}"#
    )
    .is_err());
}

#[test]
fn weighting_moves_the_trial_to_the_population() {
    let v = run(
        "weighting",
        r#"{"n_trial": 800, "n_pop": 4000, "gamma_x": -0.5, "gamma_z": -0.7, "seed": 3}"#,
    );
    let tables = v["tables"].as_array().unwrap();
    assert_eq!(tables.len(), 3);
    let z_diff = |t: usize| {
        tables[t]["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["item"] == "Z")
            .unwrap()["std_diff_population"]
            .as_f64()
            .unwrap()
            .abs()
    };
    assert!(z_diff(0) > 0.4);
    assert!(z_diff(1) < 0.1 && z_diff(2) < 0.1);
}

#[test]
fn simulation_reports_three_rows() {
    let v = run(
        "simulation",
        r#"{"preset": "z_misspec", "replicates": 8, "n_trial": 200, "n_pop": 800, "seed": 5}"#,
    );
    assert_eq!(v["methods"].as_array().unwrap().len(), 3);
    assert_eq!(v["replicates"], 8);
    let again = run(
        "simulation",
        r#"{"preset": "z_misspec", "replicates": 8, "n_trial": 200, "n_pop": 800, "seed": 5}"#,
    );
    assert_eq!(v, again);
}
