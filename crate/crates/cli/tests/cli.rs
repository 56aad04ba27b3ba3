use std::process::{Command, Output};

use serde_json::Value;

fn fbq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("valid json")
}

fn csv_rows(o: &Output) -> Vec<Vec<f64>> {
    stdout(o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn sojourn_on_the_flat_region() {
    let o = fbq(&[
        "sojourn",
        "--lambda",
        "0.4",
        "--mu",
        "0.6",
        "--q",
        "0.7",
        "--threshold",
        "0.5",
    ]);
    assert!(o.status.success());
    let rows = csv_rows(&o);
    let diag: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] == r[1]).collect();
    assert_eq!(diag.len(), 2);
    let (m, q) = (0.6, 0.7);
    assert!((diag[0][2] - 1.0 / (m * q)).abs() < 1e-12);
    assert!((diag[1][2] - (3.0 - q) / (m * q * (2.0 - q))).abs() < 1e-12);
}

#[test]
fn sojourn_table_covers_every_state() {
    let o = fbq(&[
        "sojourn",
        "--lambda",
        "0.4",
        "--mu",
        "0.6",
        "--q",
        "0.7",
        "--threshold",
        "10",
    ]);
    assert!(o.status.success());
    let rows = csv_rows(&o);
    assert_eq!(rows.len(), 11 * 12 / 2);
    let diag: Vec<f64> = rows.iter().filter(|r| r[0] == r[1]).map(|r| r[2]).collect();
    assert!(diag.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn custom_tagged_threshold_adds_payoffs() {
    let o = fbq(&[
        "sojourn",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.4",
        "--r0",
        "7.8",
        "--threshold",
        "2.5",
        "--mode",
        "r",
        "--tagged-threshold",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("i,j,w,z\n"));
    for r in csv_rows(&o) {
        assert!(r[2] > 0.0);
    }
}

#[test]
fn equilibrium_reports_both_games() {
    let o = fbq(&[
        "equilibrium",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.4",
        "--r0",
        "7.5",
    ]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["command"], "equilibrium");
    assert_eq!(v["params"]["r0"], 7.5);
    assert_eq!(v["result"]["x_e"], 2.0);
    let xh = v["result"]["x_hat_e"].as_f64().unwrap();
    assert!((xh - 2.1763).abs() < 1e-4);
    assert!(v["diagnostics"]["residuals"].is_object());
    assert!(v["version"].is_string());
}

#[test]
fn equilibrium_with_stability_grid() {
    let o = fbq(&[
        "equilibrium",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.4",
        "--r0",
        "7.8",
        "--mode",
        "n",
        "--ess",
    ]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["result"]["ess"]["is_ess"], true);
    assert!(v["result"]["x_hat_e"].is_null());
}

#[test]
fn json_round_trips() {
    let o = fbq(&[
        "paradox", "--lambda", "1", "--mu", "0.8", "--q", "0.4", "--r0", "7.8",
    ]);
    assert!(o.status.success());
    let first = json(&o);
    let again: Value = serde_json::from_str(&serde_json::to_string(&first).unwrap()).unwrap();
    assert_eq!(first, again);
    assert_eq!(first["result"]["holds"], true);
}

#[test]
fn first_paradox_across_two_rewards() {
    let o = fbq(&[
        "paradox", "--lambda", "1", "--mu", "0.8", "--q", "0.4", "--r0", "7.8", "--r0-2", "7.9",
    ]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["result"]["m"], 2);
    assert_eq!(v["result"]["holds"], true);
}

#[test]
fn welfare_curve_and_optimum() {
    let o = fbq(&[
        "welfare",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.8",
        "--r0",
        "18",
        "--grid-step",
        "0.01",
    ]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("n* = 3"), "{err}");
    assert!(err.contains("unimodal: N true, R true"), "{err}");
    assert!(stdout(&o).starts_with("x,S_N,S_R\n"));
    for r in csv_rows(&o) {
        if r[0].fract() == 0.0 {
            assert!((r[1] - r[2]).abs() < 1e-9);
        }
    }
}

#[test]
fn simulation_is_reproducible() {
    let args = [
        "simulate",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.4",
        "--threshold",
        "2.5",
        "--mode",
        "r",
        "--reps",
        "2000",
        "--seed",
        "42",
        "--start",
        "2,2",
    ];
    let (a, b) = (fbq(&args), fbq(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["result"]["seed"], 42);
}

#[test]
fn simulation_checks_against_analytic_values() {
    let o = fbq(&[
        "simulate",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.8",
        "--threshold",
        "2.5",
        "--mode",
        "r",
        "--events",
        "200000",
        "--check",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!(v["result"]["renege_fraction"]["analytic"].as_f64().unwrap() > 0.0);
    assert!(v["diagnostics"]["checks"]["event_race"].is_boolean());
}

#[test]
fn matrix_rows_are_substochastic() {
    let o = fbq(&[
        "matrix",
        "--lambda",
        "1",
        "--mu",
        "0.8",
        "--q",
        "0.4",
        "--threshold",
        "2.5",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for r in rows {
        let s: f64 = r.iter().sum();
        assert!(r.iter().all(|v| *v >= 0.0) && s <= 1.0 + 1e-12);
    }
}

#[test]
fn invalid_input_exits_nonzero() {
    let o = fbq(&[
        "sojourn",
        "--lambda",
        "-1",
        "--mu",
        "1",
        "--q",
        "0.5",
        "--threshold",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
    let o = fbq(&[
        "sojourn",
        "--lambda",
        "1",
        "--mu",
        "1",
        "--q",
        "0.5",
        "--threshold",
        "1",
        "--tagged-threshold",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = fbq(&[
        "paradox", "--lambda", "1", "--mu", "0.8", "--q", "0.4", "--r0", "7.8", "--r0-2", "9.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
