use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn indist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const RATES: &str = r#""gamma1": {"value": 40, "unit": "MHz_over_2pi"},
                       "gamma_pd": {"value": 15, "unit": "MHz_over_2pi"}"#;

fn cw_config(acq: &str) -> String {
    format!(
        r#"{{"emitter": {{{RATES}}}, "regime": "cw",
            "detector": {{"shape": "gaussian", "sigma": 0.35e-9}},
            "model": {{"v": 1.0, "m": 0.96}},
            {acq}
            "extraction": {{"s_values": [1.3, 4.4]}}}}"#
    )
}

const ACQ: &str = r#""acquisition": {"total_counts": 500000, "bin_width_s": 0.1e-9, "seed": 11},"#;

#[test]
fn hbt_simulation_fits_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "hbt.json",
        &format!(
            r#"{{"emitter": {{{RATES}, "s": 1.3}}, "regime": "hbt", "model": {{"v": 0.92}},
                "acquisition": {{"total_counts": 1000000, "bin_width_s": 0.1e-9, "seed": 5}}}}"#
        ),
    );
    let out = dir.path().join("sim");
    let o = indist(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hist = out.join("histogram_hbt.csv");
    let text = fs::read_to_string(&hist).unwrap();
    assert!(text.contains("# tool=indist"));
    assert!(text.contains("# config_sha256="));
    assert!(text.contains("# seed=5"));
    assert!(out.join("curve_hbt.csv").exists());

    let fit = dir.path().join("fit.json");
    let o = indist(&[
        "fit",
        "--data",
        s(&hist),
        "--family",
        "hbt_eq9",
        "--config",
        s(&cfg),
        "--out",
        s(&fit),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&fit);
    let names: Vec<&str> = r["fit"]["names"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let get = |n: &str, key: &str| {
        r["fit"][key][names.iter().position(|x| *x == n).unwrap()]
            .as_f64()
            .unwrap()
    };
    assert!((get("v", "params") - 0.92).abs() < 4.0 * get("v", "sigmas"));
    assert!((get("s", "params") - 1.3).abs() < 4.0 * get("s", "sigmas"));
    assert!(r["provenance"]["data_sha256"].is_string());
}

#[test]
fn cw_simulate_then_extrapolate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cw.json", &cw_config(ACQ));
    let out = dir.path().join("sim");
    let o = indist(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let h = |k: usize, pol: &str| out.join(format!("s{k}_histogram_{pol}.csv"));
    let res = dir.path().join("result.json");
    let o = indist(&[
        "extract",
        "--method",
        "extrapolate",
        "--config",
        s(&cfg),
        "--out",
        s(&res),
        "--par",
        s(&h(0, "parallel")),
        "--perp",
        s(&h(0, "perpendicular")),
        "--par",
        s(&h(1, "parallel")),
        "--perp",
        s(&h(1, "perpendicular")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&res);
    let v = r["result"]["value"].as_f64().unwrap();
    assert!((v - 0.53).abs() <= 0.03, "{v}");
    assert_eq!(r["result"]["method"], "cw_extrapolated");

    // The single-point direct cw integral works on the same files.
    let o = indist(&[
        "extract",
        "--method",
        "cw",
        "--out",
        s(&dir.path().join("cw.json.out")),
        "--par",
        s(&h(0, "parallel")),
        "--perp",
        s(&h(0, "perpendicular")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // Pulsed extraction refuses cw data.
    let o = indist(&[
        "extract",
        "--method",
        "pulsed",
        "--out",
        s(&dir.path().join("p.json")),
        "--par",
        s(&h(0, "parallel")),
        "--perp",
        s(&h(0, "perpendicular")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn pulsed_delay_correction_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        &format!(
            r#"{{"emitter": {{{RATES}}}, "regime": "pulsed",
                "model": {{"half_span_s": 40e-9, "step_s": 0.02e-9}},
                "extraction": {{"delay_mismatch_s": 0.4e-9}}}}"#
        ),
    );
    let out = dir.path().join("sim");
    assert_eq!(
        code(&indist(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&out)
        ])),
        0
    );
    let res = dir.path().join("r.json");
    let o = indist(&[
        "extract",
        "--method",
        "pulsed",
        "--config",
        s(&cfg),
        "--out",
        s(&res),
        "--par",
        s(&out.join("curve_parallel.csv")),
        "--perp",
        s(&out.join("curve_perpendicular.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&res)["result"].clone();
    let c = &r["corrections_applied"][0];
    assert_eq!(c["name"], "delay_mismatch");
    let factor = c["factor"].as_f64().unwrap();
    assert!((factor - 0.904).abs() < 5e-4);
    let raw = 40.0 / 70.0;
    assert!((r["value"].as_f64().unwrap() * factor / raw - 1.0).abs() < 1e-4);
}

#[test]
fn pipeline_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cw.json", &cw_config(ACQ));
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for out in [&a, &b] {
        let o = indist(&["pipeline", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["summary.csv", "extrapolation.csv", "report.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let o = indist(&[
        "pipeline",
        "--config",
        s(&cfg),
        "--out",
        s(&c),
        "--seed",
        "12",
    ]);
    assert_eq!(code(&o), 0);
    let sa = fs::read_to_string(a.join("summary.csv")).unwrap();
    let sc = fs::read_to_string(c.join("summary.csv")).unwrap();
    assert_ne!(sa, sc);
    assert!(sc.contains("# seed=12"));
    let i = |text: &str| -> f64 {
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("0,"));
        last.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((i(&sa) - 0.53).abs() <= 0.03 && (i(&sc) - 0.53).abs() <= 0.03);
    let band = fs::read_to_string(a.join("extrapolation.csv")).unwrap();
    assert!(band.contains("s,i_tilde_fit,band_lo,band_hi"));
}

#[test]
fn validation_errors_exit_2_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"emitter": {"gamma_pd": {"value": 15, "unit": "MHz_over_2pi"}, "s": 1.3}, "regime": "cw"}"#,
    );
    let o = indist(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("emitter.gamma1"), "{}", stderr(&o));

    let empty = write(
        dir.path(),
        "empty.json",
        &format!(r#"{{"emitter": {{{RATES}}}, "regime": "cw", "extraction": {{"s_values": []}}}}"#),
    );
    let o = indist(&[
        "pipeline",
        "--config",
        s(&empty),
        "--out",
        s(&dir.path().join("y")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = indist(&[
        "pipeline",
        "--config",
        s(&dir.path().join("missing.json")),
        "--out",
        "z",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "h.csv",
        "# regime=cw_normalized\ntau_s,counts\n0,1\n1e-10,oops\n",
    );
    let o = indist(&[
        "fit",
        "--data",
        s(&bad),
        "--family",
        "cw_eq7",
        "--out",
        s(&dir.path().join("f.json")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let header = write(dir.path(), "g.csv", "time,counts\n0,1\n");
    let o = indist(&[
        "fit",
        "--data",
        s(&header),
        "--family",
        "cw_eq7",
        "--out",
        s(&dir.path().join("f.json")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn grid_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "tau_s,value\n-1e-9,1\n0,0.5\n1e-9,1\n");
    let b = write(dir.path(), "b.csv", "tau_s,value\n-2e-9,1\n0,0.5\n2e-9,1\n");
    let o = indist(&[
        "extract",
        "--method",
        "cw",
        "--par",
        s(&a),
        "--perp",
        s(&b),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn noiseless_fit_round_trip_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cw.json", &cw_config(""));
    let out = dir.path().join("sim");
    assert_eq!(
        code(&indist(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&out)
        ])),
        0
    );
    // Curves are IRF-convolved; fitting with the same response recovers M.
    let fit = dir.path().join("f.json");
    let o = indist(&[
        "fit",
        "--data",
        s(&out.join("s0_curve_parallel.csv")),
        "--family",
        "cw_eq7",
        "--config",
        s(&cfg),
        "--out",
        s(&fit),
        "--fix",
        "v=1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&fit);
    let names = r["fit"]["names"].as_array().unwrap();
    let k = names.iter().position(|v| v == "m").unwrap();
    let m = r["fit"]["params"][k].as_f64().unwrap();
    assert!((m - 0.96).abs() < 2e-3, "{m}");
}
