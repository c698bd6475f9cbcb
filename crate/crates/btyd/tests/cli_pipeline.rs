//! End-to-end behavior of the binary: pipeline composition, exit codes,
//! config merging, and output plumbing.

use btyd::bgnbd::BgnbdParams;
use btyd::clv::predict_customers;
use btyd::gammagamma::GgParams;
use btyd::ingest::read_rfm_csv;
use serde_json::json;
use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn btyd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btyd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = btyd(dir, args);
    assert!(
        out.status.success(),
        "btyd {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(dir: &Path, args: &[&str]) -> i32 {
    btyd(dir, args).status.code().expect("no signal")
}

/// A purchase history: first purchase Jan 1, repeats on day 10 and day 30.
fn write_hand_fixture(dir: &Path) {
    fs::write(
        dir.join("txns.csv"),
        "user_id,transaction_id,timestamp,value\n\
         u1,t1,2022-01-01T00:00:00Z,5\n\
         u1,t2,2022-01-11T09:00:00Z,7\n\
         u1,t3,2022-01-31T23:00:00Z,9\n",
    )
    .unwrap();
}

fn write_bgnbd_doc(path: &Path) {
    let coef = |name: &str, est: f64| {
        json!({
            "name": name,
            "estimate": est,
            "standard_error": 0.0,
            "ci95": {"lower": est, "upper": est},
        })
    };
    let doc = json!({
        "model": "bgnbd",
        "coefficients": [coef("r", 0.25), coef("alpha", 4.5), coef("a", 0.8), coef("b", 2.4)],
        "log_likelihood": -1.0,
        "n_customers": 1,
        "fit": {
            "penalizer": 0.0, "tolerance": 1e-8, "max_iterations": 10000,
            "restarts": 1, "initial_simplex_scale": 1.0, "iterations": 1, "converged": true,
        },
    });
    fs::write(path, doc.to_string()).unwrap();
}

fn write_gg_doc(path: &Path) {
    let coef = |name: &str, est: f64| {
        json!({
            "name": name,
            "estimate": est,
            "standard_error": 0.0,
            "ci95": {"lower": est, "upper": est},
        })
    };
    let mut gamma = coef("gamma", 15.0);
    gamma["alias"] = json!("lambda");
    let doc = json!({
        "model": "gamma-gamma",
        "coefficients": [coef("p", 6.0), coef("q", 4.0), gamma],
        "log_likelihood": -1.0,
        "n_customers": 1,
        "fit": {
            "penalizer": 0.0, "tolerance": 1e-8, "max_iterations": 10000,
            "restarts": 1, "initial_simplex_scale": 1.0, "iterations": 1, "converged": true,
        },
    });
    fs::write(path, doc.to_string()).unwrap();
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn pipeline_emits_one_prediction_per_customer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "simulate", "--n", "5000", "--horizon", "50", "--r", "0.25", "--alpha", "4.5",
            "--a", "0.8", "--b", "2.4", "--p-shape", "6", "--q-shape", "4", "--gamma", "15",
            "--seed", "42", "--output", "txns.csv",
        ],
    );
    ok(
        d,
        &[
            "summarize", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
            "transaction_id", "--time-col", "timestamp", "--value-col", "value",
            "--observation-end", "2022-02-20T00:00:00Z", "--output", "rfm.csv",
        ],
    );
    ok(d, &["fit-bgnbd", "--rfm", "rfm.csv", "--output", "bg.json"]);
    ok(d, &["fit-gg", "--rfm", "rfm.csv", "--output", "gg.json"]);
    ok(
        d,
        &[
            "predict", "--rfm", "rfm.csv", "--bgnbd", "bg.json", "--gg", "gg.json",
            "--horizon", "14", "--output", "pred.csv",
        ],
    );

    let pred = fs::read_to_string(d.join("pred.csv")).unwrap();
    let lines = data_lines(&pred);
    assert_eq!(lines[0], "user_id,p_alive,expected_txns,expected_value,expected_clv,horizon");
    assert_eq!(lines.len() - 1, 5000);

    // Saved documents must predict exactly like the in-memory fit they came
    // from; the emitted floats round-trip, so the comparison is bitwise.
    let bg = BgnbdParams::from_json(&fs::read_to_string(d.join("bg.json")).unwrap()).unwrap();
    let gg = GgParams::from_json(&fs::read_to_string(d.join("gg.json")).unwrap()).unwrap();
    let mut rows = read_rfm_csv(fs::File::open(d.join("rfm.csv")).unwrap()).unwrap();
    rows.sort_by(|x, y| x.user_id.cmp(&y.user_id));
    let mine = predict_customers(&bg.coefs, &gg.coefs, &rows, 14.0, 0.0).unwrap();
    let by_id: HashMap<&str, _> = mine.iter().map(|p| (p.user_id.as_str(), p)).collect();
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        let p = by_id[fields[0]];
        assert_eq!(fields[1].parse::<f64>().unwrap(), p.p_alive, "{line}");
        assert_eq!(fields[2].parse::<f64>().unwrap(), p.expected_transactions);
        assert_eq!(fields[3].parse::<f64>().unwrap(), p.expected_value_per_transaction);
        assert_eq!(fields[4].parse::<f64>().unwrap(), p.expected_clv);
        assert_eq!(fields[5].parse::<f64>().unwrap(), 14.0);
    }
}

#[test]
fn summary_reproduces_the_hand_counted_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_hand_fixture(d);
    ok(
        d,
        &[
            "summarize", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
            "transaction_id", "--time-col", "timestamp", "--value-col", "value",
            "--observation-end", "2022-02-10T00:00:00Z", "--output", "rfm.csv",
        ],
    );
    let rfm = fs::read_to_string(d.join("rfm.csv")).unwrap();
    let lines = data_lines(&rfm);
    assert_eq!(lines[0], "user_id,frequency,recency,age,monetary");
    // 2 repeat days, last on day 30, observed 40 days, repeat spends 7 and 9
    assert_eq!(lines[1], "u1,2,30,40,8");
    assert_eq!(lines.len(), 2);
}

#[test]
fn usage_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(exit_code(d, &["predict"]), 2);
    assert_eq!(exit_code(d, &["frobnicate"]), 2);
    write_hand_fixture(d);
    assert_eq!(
        exit_code(
            d,
            &[
                "summarize", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
                "transaction_id", "--time-col", "timestamp", "--value-col", "value",
                "--observation-end", "not-a-date", "--output", "rfm.csv",
            ],
        ),
        2
    );
    assert_eq!(
        exit_code(
            d,
            &[
                "summarize", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
                "transaction_id", "--time-col", "timestamp", "--value-col", "value",
                "--observation-end", "2022-02-10T00:00:00Z", "--delimiter", "ab",
                "--output", "rfm.csv",
            ],
        ),
        2
    );
    fs::write(d.join("bad.json"), "[1, 2]").unwrap();
    assert_eq!(
        exit_code(d, &["fit-bgnbd", "--config", "bad.json", "--rfm", "x.csv", "--output", "y"]),
        2
    );
    assert_eq!(exit_code(d, &["--help"]), 0);
}

#[test]
fn data_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        exit_code(d, &["fit-bgnbd", "--rfm", "missing.csv", "--output", "bg.json"]),
        1
    );

    // A table with no repeat buyers cannot identify the dropout parameters.
    fs::write(
        d.join("flat.csv"),
        "user_id,frequency,recency,age,monetary\nu1,0,0,10,0\nu2,0,0,12,0\n",
    )
    .unwrap();
    assert_eq!(exit_code(d, &["fit-bgnbd", "--rfm", "flat.csv", "--output", "bg.json"]), 1);

    write_hand_fixture(d);
    write_bgnbd_doc(&d.join("bg.json"));
    assert_eq!(
        exit_code(
            d,
            &[
                "churn-timeline", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
                "transaction_id", "--time-col", "timestamp", "--value-col", "value", "--user",
                "nobody", "--bgnbd", "bg.json", "--observation-end", "2022-02-10T00:00:00Z",
                "--output", "tl.csv",
            ],
        ),
        1
    );

    // A spend document is not a purchase-model document.
    write_gg_doc(&d.join("gg.json"));
    fs::write(
        d.join("rfm.csv"),
        "user_id,frequency,recency,age,monetary\nu1,2,20,30,8\n",
    )
    .unwrap();
    assert_eq!(
        exit_code(
            d,
            &[
                "predict", "--rfm", "rfm.csv", "--bgnbd", "gg.json", "--gg", "gg.json",
                "--horizon", "14", "--output", "p.csv",
            ],
        ),
        1
    );
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_bgnbd_doc(&d.join("bg.json"));
    write_gg_doc(&d.join("gg.json"));
    fs::write(
        d.join("rfm.csv"),
        "user_id,frequency,recency,age,monetary\nu1,2,20,30,8\nu2,0,0,25,0\n",
    )
    .unwrap();
    fs::write(
        d.join("config.json"),
        json!({
            "rfm": "rfm.csv",
            "bgnbd": "bg.json",
            "gg": "gg.json",
            "horizon": 14.0,
            "output": "p1.csv",
        })
        .to_string(),
    )
    .unwrap();

    ok(d, &["predict", "--config", "config.json"]);
    let p1 = fs::read_to_string(d.join("p1.csv")).unwrap();
    assert!(p1.contains("# horizon = 14"), "{p1}");

    ok(d, &["predict", "--config", "config.json", "--horizon", "7", "--output", "p2.csv"]);
    let p2 = fs::read_to_string(d.join("p2.csv")).unwrap();
    assert!(p2.contains("# horizon = 7"), "{p2}");
    assert_ne!(data_lines(&p1)[1], data_lines(&p2)[1]);
}

#[test]
fn stamp_is_opt_in_and_both_mode_spellings_work() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_bgnbd_doc(&d.join("bg.json"));
    ok(
        d,
        &[
            "matrix", "--bgnbd", "bg.json", "--mode", "p_alive", "--max-frequency", "3",
            "--max-recency", "5", "--age", "5", "--output", "m1.csv",
        ],
    );
    let m1 = fs::read_to_string(d.join("m1.csv")).unwrap();
    assert!(!m1.contains("generated_at"));

    ok(
        d,
        &[
            "--stamp", "matrix", "--bgnbd", "bg.json", "--mode", "p-alive", "--max-frequency",
            "3", "--max-recency", "5", "--age", "5", "--output", "m2.csv",
        ],
    );
    let m2 = fs::read_to_string(d.join("m2.csv")).unwrap();
    assert!(m2.contains("# generated_at = "), "{m2}");
    assert_eq!(data_lines(&m1), data_lines(&m2));
}

#[test]
fn dash_sends_the_table_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_hand_fixture(d);
    let out = ok(
        d,
        &[
            "summarize", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
            "transaction_id", "--time-col", "timestamp", "--value-col", "value",
            "--observation-end", "2022-02-10T00:00:00Z", "--output", "-",
        ],
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("u1,2,30,40,8"), "{stdout}");
}

#[test]
fn malformed_rows_warn_and_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("txns.csv"),
        "user_id,transaction_id,timestamp,value\n\
         u1,t1,2022-01-01T00:00:00Z,5\n\
         u1,t2,2022-01-11T00:00:00Z,oops\n\
         u2,t3,2022-01-05T00:00:00Z,3\n",
    )
    .unwrap();
    let out = ok(
        d,
        &[
            "summarize", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
            "transaction_id", "--time-col", "timestamp", "--value-col", "value",
            "--observation-end", "2022-02-10T00:00:00Z", "--output", "rfm.csv",
        ],
    );
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("skipped line 3"), "{stderr}");
    let rfm = fs::read_to_string(d.join("rfm.csv")).unwrap();
    assert!(rfm.contains("# rows_rejected = 1"), "{rfm}");
    assert_eq!(data_lines(&rfm).len(), 3); // header + u1 + u2
}

#[test]
fn churn_timeline_marks_each_purchase_day() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_hand_fixture(d);
    write_bgnbd_doc(&d.join("bg.json"));
    ok(
        d,
        &[
            "churn-timeline", "--input", "txns.csv", "--user-col", "user_id", "--id-col",
            "transaction_id", "--time-col", "timestamp", "--value-col", "value", "--user", "u1",
            "--bgnbd", "bg.json", "--observation-end", "2022-02-10T00:00:00Z", "--grid-step",
            "5", "--output", "tl.csv",
        ],
    );
    let tl = fs::read_to_string(d.join("tl.csv")).unwrap();
    let lines = data_lines(&tl);
    assert_eq!(lines[0], "time,p_alive,is_purchase");
    let mut purchases = Vec::new();
    let mut prev_time = f64::NEG_INFINITY;
    for line in &lines[1..] {
        let f: Vec<&str> = line.split(',').collect();
        let time: f64 = f[0].parse().unwrap();
        let p_alive: f64 = f[1].parse().unwrap();
        assert!(time > prev_time, "{line}");
        prev_time = time;
        assert!(p_alive > 0.0 && p_alive <= 1.0, "{line}");
        if f[2] == "true" {
            purchases.push(time);
        }
    }
    assert_eq!(purchases, [0.0, 10.0, 30.0]);
    // the curve runs out to the observation end, which is no purchase
    let last = lines.last().unwrap();
    assert!(last.starts_with("40,") && last.ends_with(",false"), "{last}");
}
