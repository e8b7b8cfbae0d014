//! Shared fixtures for the binary's integration tests.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Runs the compiled `hfr` binary with the given arguments.
pub fn hfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfr"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Asserts success and returns stdout as UTF-8.
pub fn stdout(output: &Output) -> String {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).expect("utf-8 output")
}

/// Deterministic three-series data set: coherent actuals over 40 periods
/// and perturbed forecasts of them for horizons 1 and 2. Returns the
/// hierarchy, actuals, and forecast file paths.
pub fn write_dataset(dir: &Path) -> (String, String, String) {
    let hierarchy = dir.join("hierarchy.csv");
    let actuals = dir.join("actuals.csv");
    let forecasts = dir.join("forecasts.csv");

    std::fs::write(&hierarchy, "child,parent\nTotal,\nA,Total\nB,Total\n").unwrap();

    let series = |t: usize| {
        let a = 5.0 + (t as f64 * 0.7).sin();
        let b = 3.0 + (t as f64 * 0.3).cos();
        (a, b)
    };

    let mut wide = String::from("time,Total,A,B\n");
    for t in 1..=40 {
        let (a, b) = series(t);
        wide.push_str(&format!("{t},{},{a},{b}\n", a + b));
    }
    std::fs::write(&actuals, wide).unwrap();

    let mut long = String::from("origin,horizon,node,value\n");
    for origin in 10..=38 {
        for horizon in 1..=2usize {
            let (a, b) = series(origin + horizon);
            let noise = |k: usize| 0.1 * ((origin * 7 + horizon * 3 + k) % 5) as f64 - 0.2;
            for (node, value, k) in [("Total", a + b, 0), ("A", a, 1), ("B", b, 2)] {
                long.push_str(&format!("{origin},{horizon},{node},{}\n", value + noise(k)));
            }
        }
    }
    std::fs::write(&forecasts, long).unwrap();

    (
        hierarchy.to_str().unwrap().into(),
        actuals.to_str().unwrap().into(),
        forecasts.to_str().unwrap().into(),
    )
}

/// `--hierarchy H --actuals A --forecasts F` argument triple.
pub fn data_args<'a>(h: &'a str, a: &'a str, f: &'a str) -> Vec<&'a str> {
    vec!["--hierarchy", h, "--actuals", a, "--forecasts", f]
}
