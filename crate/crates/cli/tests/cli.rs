//! End-to-end tests of the `hfr` binary: CSV in, CSV/JSON out, exit codes,
//! and independence of results from the thread count.

mod common;

use common::{data_args, hfr, stdout, write_dataset};
use serde_json::Value;

#[test]
fn reconcile_emits_coherent_csv_at_the_latest_origin() {
    let dir = tempfile::tempdir().unwrap();
    let (h, a, f) = write_dataset(dir.path());

    let mut args = vec!["reconcile", "--method", "mint:shrink"];
    args.extend(data_args(&h, &a, &f));
    let text = stdout(&hfr(&args));

    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "origin,horizon,node,value");
    assert_eq!(lines.len(), 1 + 2 * 3);

    for horizon in 1..=2 {
        let row: Vec<Vec<&str>> = lines[1..]
            .iter()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|p| p[1] == horizon.to_string())
            .collect();
        assert_eq!(row.len(), 3);
        assert!(row.iter().all(|p| p[0] == "38"));
        let value = |node: &str| -> f64 {
            row.iter().find(|p| p[2] == node).unwrap()[3].parse().unwrap()
        };
        let defect = value("Total") - value("A") - value("B");
        assert!(defect.abs() < 1e-9, "h{horizon} defect {defect}");
    }
}

#[test]
fn reconcile_honors_an_explicit_origin_and_bottom_up_copies_leaves() {
    let dir = tempfile::tempdir().unwrap();
    let (h, a, f) = write_dataset(dir.path());

    let mut args = vec!["reconcile", "--method", "bu", "--origin", "20"];
    args.extend(data_args(&h, &a, &f));
    let text = stdout(&hfr(&args));

    for line in text.lines().skip(1) {
        assert!(line.starts_with("20,"));
    }
    let h1: Vec<&str> = text.lines().filter(|l| l.starts_with("20,1,")).collect();
    let field = |line: &str, idx: usize| line.split(',').nth(idx).unwrap().to_string();
    let a_val: f64 = field(h1[1], 3).parse().unwrap();
    let b_val: f64 = field(h1[2], 3).parse().unwrap();
    let total: f64 = field(h1[0], 3).parse().unwrap();
    assert_eq!(total, a_val + b_val);
}

#[test]
fn tune_reports_the_grid_and_a_positive_selection() {
    let dir = tempfile::tempdir().unwrap();
    let (h, a, f) = write_dataset(dir.path());

    let mut args = vec![
        "tune",
        "--method",
        "icomb:ridge:x:c1",
        "--validation-len",
        "8",
        "--cv-min-train",
        "8",
        "--refit-every",
        "10",
    ];
    args.extend(data_args(&h, &a, &f));
    let json: Value = serde_json::from_str(&stdout(&hfr(&args))).unwrap();

    let grid = json["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 200);
    let selected = json["selected"].as_f64().unwrap();
    assert!(selected > 0.0);
    assert_eq!(json["cv_curve"].as_array().unwrap().len(), 200);
    let idx = json["selected_index"].as_u64().unwrap() as usize;
    assert_eq!(grid[idx].as_f64().unwrap(), selected);
}

#[test]
fn evaluate_reports_per_level_accuracy_and_exact_bottom_up_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (h, a, f) = write_dataset(dir.path());

    let mut args = vec!["evaluate", "--methods", "bu,ols,emintu:c1", "--min-train", "8"];
    args.extend(data_args(&h, &a, &f));
    let json: Value = serde_json::from_str(&stdout(&hfr(&args))).unwrap();

    assert_eq!(json["nodes"], serde_json::json!(["Total", "A", "B"]));
    assert_eq!(json["levels"], serde_json::json!([0, 1]));
    let methods = json["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);

    let bu = methods.iter().find(|m| m["method"] == "bu").unwrap();
    for h_idx in 0..2 {
        for node in 1..3 {
            assert_eq!(bu["prial"][h_idx][node].as_f64().unwrap(), 0.0);
        }
    }
    let ols = methods.iter().find(|m| m["method"] == "ols").unwrap();
    assert!(ols["prial"][0][0].as_f64().unwrap().is_finite());
}

#[test]
fn bad_usage_missing_file_and_numerical_failure_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (h, a, f) = write_dataset(dir.path());

    // Unknown method tag: usage error.
    let mut args = vec!["reconcile", "--method", "magic"];
    args.extend(data_args(&h, &a, &f));
    let out = hfr(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    // Unreadable input file.
    let missing = dir.path().join("absent.csv");
    let missing = missing.to_str().unwrap();
    let mut args = vec!["reconcile", "--method", "ols"];
    args.extend(data_args(&h, missing, &f));
    assert_eq!(hfr(&args).status.code(), Some(4));

    // Forecasts of a node the hierarchy does not know: input validation.
    let alien = dir.path().join("alien.csv");
    std::fs::write(&alien, "origin,horizon,node,value\n20,1,Z,1.0\n").unwrap();
    let alien = alien.to_str().unwrap();
    let mut args = vec!["reconcile", "--method", "ols"];
    args.extend(data_args(&h, &a, alien));
    assert_eq!(hfr(&args).status.code(), Some(2));

    // Zero training error makes the sample covariance singular: numerics.
    let exact = dir.path().join("exact.csv");
    let actual_rows = std::fs::read_to_string(&a).unwrap();
    let mut long = String::from("origin,horizon,node,value\n");
    for line in actual_rows.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let t: usize = parts[0].parse().unwrap();
        if !(2..=40).contains(&t) {
            continue;
        }
        for (node, idx) in [("Total", 1), ("A", 2), ("B", 3)] {
            long.push_str(&format!("{},1,{node},{}\n", t - 1, parts[idx]));
        }
    }
    std::fs::write(&exact, long).unwrap();
    let exact = exact.to_str().unwrap();
    let mut args = vec!["reconcile", "--method", "mint:sample"];
    args.extend(data_args(&h, &a, exact));
    let out = hfr(&args);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn results_are_byte_identical_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (h, a, f) = write_dataset(dir.path());

    // Tuning runs its cross validation folds in parallel.
    let tune_out = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let out = out.to_str().unwrap();
        let mut args = vec![
            "tune",
            "--method",
            "icomb:mlasso:xy:c1",
            "--validation-len",
            "6",
            "--cv-min-train",
            "8",
            "--refit-every",
            "20",
            "--threads",
            threads,
            "--out",
            out,
        ];
        args.extend(data_args(&h, &a, &f));
        let run = hfr(&args);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        std::fs::read(out).unwrap()
    };
    let one = tune_out("1", "t1.json");
    let four = tune_out("4", "t4.json");
    assert_eq!(one, four);

    // The simulation study reduces per-replication sums in parallel; 5000
    // replications span two scheduling blocks.
    let sim_out = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let out = out.to_str().unwrap();
        let args = vec![
            "simulate",
            "--scenario",
            "factor",
            "--reps",
            "5000",
            "--seed",
            "11",
            "--oracle-draws",
            "20000",
            "--threads",
            threads,
            "--out",
            out,
        ];
        let run = hfr(&args);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        std::fs::read(out).unwrap()
    };
    let one = sim_out("1", "s1.json");
    let four = sim_out("4", "s4.json");
    assert_eq!(one, four);
}

#[test]
fn simulate_emits_the_study_and_the_unbiasedness_check_as_json() {
    let out = hfr(&[
        "simulate",
        "--reps",
        "500",
        "--seed",
        "3",
        "--oracle-draws",
        "20000",
    ]);
    let json: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["scenario"], "Univariate");
    assert_eq!(json["reps"], 500);
    assert!(json["base"].as_f64().unwrap() > 0.0);

    let check = hfr(&["simulate", "--unbiasedness-check", "--reps", "2000", "--seed", "3"]);
    let json: Value = serde_json::from_str(&stdout(&check)).unwrap();
    assert_eq!(json["gs"], serde_json::json!([[0.5, 0.5], [0.5, 0.5]]));
    assert_eq!(json["projection_identity_holds"], false);
    let mean = json["mean_error"][0].as_f64().unwrap();
    let se = json["mc_se"][0].as_f64().unwrap();
    assert!(mean.abs() < 5.0 * se);
}
