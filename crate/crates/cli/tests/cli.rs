use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const EPOCH: &str = "1700000000";

fn tbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbm"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = tbm(args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    o
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn files_in(dir: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                if rel != "manifest.json" {
                    out.insert(rel);
                }
            }
        }
    }
    out
}

fn assert_manifest_complete(dir: &Path) {
    let listed: BTreeSet<String> = manifest(dir)["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, files_in(dir));
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = files_in(dir).into_iter().collect();
    files.push("manifest.json".into());
    files
        .into_iter()
        .map(|f| (f.clone(), std::fs::read(dir.join(&f)).unwrap()))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn meshgen_is_deterministic_and_lists_its_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let region = tmp.path().join("barrier.json");
    std::fs::write(&region, "[[[-3, 4.5], [13, 4.5], [13, 5.5], [-3, 5.5]]]").unwrap();
    let spec = format!("{}:2", s(&region));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = ok(&[
            "meshgen",
            "--rect",
            "0,10,0,10",
            "--max-edge",
            "0.5",
            "--buffer",
            "2",
            "--region",
            &spec,
            "--out",
            s(dir),
        ]);
        let line = String::from_utf8(o.stdout).unwrap();
        assert!(line.contains("841 nodes") && line.contains("2 subdomains"), "{line}");
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert_manifest_complete(&a);
}

#[test]
fn missing_region_file_is_a_usage_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_region.json");
    let o = tbm(&[
        "meshgen",
        "--rect",
        "0,10,0,10",
        "--max-edge",
        "1",
        "--region",
        &format!("{}:2", s(&missing)),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no_such_region.json"));
}

#[test]
fn config_keys_are_validated_and_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"mesh": {"fixture": "canal"}, "colour": "red"}"#).unwrap();
    let o = tbm(&["meshgen", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"));

    let negative = tmp.path().join("neg.json");
    std::fs::write(&negative, r#"{"mesh": {"fixture": "canal"}, "range": -1}"#).unwrap();
    assert_eq!(
        code(&tbm(&[
            "meshgen",
            "--config",
            s(&negative),
            "--out",
            s(&tmp.path().join("y"))
        ])),
        2
    );

    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    std::fs::write(
        &a,
        r#"{"seed": 3, "mesh": {"rect": {"x": [0, 4], "y": [0, 2], "max_edge": 0.5}}, "scenario": "s"}"#,
    )
    .unwrap();
    std::fs::write(
        &b,
        r#"{"scenario": "s", "mesh": {"rect": {"max_edge": 0.5, "y": [0, 2], "x": [0, 4]}}, "seed": 3}"#,
    )
    .unwrap();
    ok(&["meshgen", "--config", s(&a), "--out", s(&tmp.path().join("ma"))]);
    ok(&["meshgen", "--config", s(&b), "--out", s(&tmp.path().join("mb"))]);
    ok(&[
        "meshgen",
        "--config",
        s(&a),
        "--max-edge",
        "0.25",
        "--out",
        s(&tmp.path().join("mc")),
    ]);
    let (ma, mb, mc) = (
        manifest(&tmp.path().join("ma")),
        manifest(&tmp.path().join("mb")),
        manifest(&tmp.path().join("mc")),
    );
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_ne!(ma["config_hash"], mc["config_hash"]);
    assert_eq!(mc["config"]["mesh"]["rect"]["max_edge"], 0.25);
    assert_eq!(mc["seed"], 3);
}

#[test]
fn correlate_writes_a_panel_with_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = ok(&[
        "correlate",
        "--fixture",
        "canal",
        "--sweep",
        "1,0.8,0.7,0.5,0.3,0.2,0.01",
        "--point",
        "5,4",
        "--point",
        "5,6",
        "--lattice",
        "40",
        "--png",
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("7 rows x 2 nodes"));
    let files = files_in(&out);
    assert_eq!(files.iter().filter(|f| f.ends_with(".png")).count(), 14);
    assert_eq!(
        files
            .iter()
            .filter(|f| f.starts_with("corr_") && f.ends_with(".csv"))
            .count(),
        14
    );
    let grid = std::fs::read_to_string(out.join("corr_0_0.csv")).unwrap();
    assert!(grid.starts_with("x,y,value\n") && !grid.contains('\r'));
    assert_eq!(grid.lines().count(), 1 + 40 * 40);
    assert_manifest_complete(&out);
}

#[test]
fn correlate_reports_bad_references() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    let none = tbm(&["correlate", "--fixture", "canal", "--out", out]);
    assert_eq!(code(&none), 2);
    assert!(stderr(&none).contains("0..4225"), "{}", stderr(&none));
    let outside = tbm(&["correlate", "--fixture", "canal", "--point", "50,50", "--out", out]);
    assert_eq!(code(&outside), 2);
    assert!(stderr(&outside).contains("outside the mesh"));
    let index = tbm(&["correlate", "--fixture", "canal", "--nodes", "99999", "--out", out]);
    assert_eq!(code(&index), 2);
    let fractions = tbm(&[
        "correlate",
        "--fixture",
        "canal",
        "--nodes",
        "1",
        "--fractions",
        "1,1.5",
        "--out",
        out,
    ]);
    assert_eq!(code(&fractions), 2);
}

#[test]
fn calibrate_single_cell_gives_expected_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["calibrate", "--t", "0.2", "--c0", "0.5", "--out", s(tmp.path())]);
    let table = std::fs::read_to_string(tmp.path().join("transparency_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "t,c0,s,p_b,status");
    let cols: Vec<&str> = lines[1].split(',').collect();
    let s_val: f64 = cols[2].parse().unwrap();
    assert!((s_val - 1.86).abs() / 1.86 < 0.02, "s = {s_val}");
    assert_eq!(cols[4], "ok");

    let empty = tbm(&["calibrate", "--t", "", "--out", s(&tmp.path().join("e"))]);
    assert_eq!(code(&empty), 2);
}

#[test]
fn simulation_is_reproducible_from_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        ok(&[
            "simulate",
            "--rect",
            "0,6,0,4",
            "--max-edge",
            "0.5",
            "--buffer",
            "1",
            "--range",
            "1.5",
            "--n-obs",
            "50",
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        ok(&[
            "fit",
            "--rect",
            "0,6,0,4",
            "--max-edge",
            "0.5",
            "--buffer",
            "1",
            "--model",
            "stationary",
            "--out",
            s(&out),
        ]);
        out
    };
    let (a, b, c) = (run("4", "a"), run("4", "b"), run("5", "c"));
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert_ne!(
        std::fs::read(a.join("observations.csv")).unwrap(),
        std::fs::read(c.join("observations.csv")).unwrap()
    );
    let obs = std::fs::read_to_string(a.join("observations.csv")).unwrap();
    assert!(obs.starts_with("x,y,value\n"));
    assert_eq!(obs.lines().count(), 51);
    assert_manifest_complete(&a);
}

#[test]
fn empty_point_pattern_falls_back_to_the_prior() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    ok(&[
        "simulate",
        "--rect",
        "0,4,0,4",
        "--max-edge",
        "0.5",
        "--likelihood",
        "lgcp",
        "--beta0",
        "-40",
        "--out",
        s(out),
    ]);
    assert_eq!(std::fs::read_to_string(out.join("events.csv")).unwrap(), "x,y\n");
    let o = ok(&[
        "fit",
        "--rect",
        "0,4,0,4",
        "--max-edge",
        "0.5",
        "--model",
        "stationary",
        "--out",
        s(out),
    ]);
    assert!(stderr(&o).contains("warning"));
    let mean = std::fs::read_to_string(out.join("mean_stationary.csv")).unwrap();
    assert!(mean.lines().skip(1).all(|l| l.ends_with(",0")));
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit_stationary.json")).unwrap()).unwrap();
    assert_eq!(fit["prior_only"], true);
    assert_manifest_complete(out);
}

#[test]
fn report_skips_malformed_results_and_rejects_empty_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(
        code(&tbm(&[
            "report",
            "--input",
            s(&empty),
            "--out",
            s(&tmp.path().join("r0"))
        ])),
        2
    );

    let fits = tmp.path().join("fits");
    ok(&[
        "simulate",
        "--rect",
        "0,6,0,6",
        "--max-edge",
        "0.75",
        "--range",
        "2",
        "--n-obs",
        "60",
        "--seed",
        "2",
        "--out",
        s(&fits),
    ]);
    ok(&[
        "fit",
        "--rect",
        "0,6,0,6",
        "--max-edge",
        "0.75",
        "--model",
        "stationary",
        "--range",
        "2",
        "--sensitivity",
        "--out",
        s(&fits),
    ]);
    std::fs::write(fits.join("broken.json"), "{ not json").unwrap();
    let report_dir = tmp.path().join("report");
    let o = ok(&["report", "--input", s(&fits), "--out", s(&report_dir)]);
    assert!(stderr(&o).contains("broken.json"));
    let md = std::fs::read_to_string(report_dir.join("report.md")).unwrap();
    let range_rows = md
        .split("## Field standard deviation")
        .next()
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("| fit_"))
        .count();
    assert_eq!(range_rows, 8);
    for (r0, a) in [(21, 0.5), (6, 0.9)] {
        assert!(md.contains(&format!("| {r0}, {a} |")), "missing prior {r0}, {a}");
    }
    assert_manifest_complete(&report_dir);
}

#[test]
fn unwritable_output_is_an_internal_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let o = tbm(&["meshgen", "--rect", "0,1,0,1", "--max-edge", "0.5", "--out", s(&file)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn two_barrier_scenario_orders_the_range_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    ok(&[
        "simulate",
        "--fixture",
        "two-barrier",
        "--fractions",
        "1,0.01,0.8",
        "--seed",
        "6",
        "--out",
        s(out),
    ]);
    let fits: Vec<_> = [
        vec!["--model", "stationary"],
        vec!["--model", "tbm", "--fractions", "1,0.01,0.8"],
        vec!["--model", "barrier"],
    ]
    .into_iter()
    .map(|extra| {
        let mut args = vec!["fit", "--fixture", "two-barrier", "--out", s(out)];
        args.extend(extra);
        let args: Vec<String> = args.into_iter().map(String::from).collect();
        std::thread::spawn(move || {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            ok(&refs);
        })
    })
    .collect();
    for h in fits {
        h.join().unwrap();
    }
    let range = |m: &str| -> f64 {
        let v: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("fit_{m}.json"))).unwrap()).unwrap();
        v["theta_map"]["range"].as_f64().unwrap()
    };
    let (st, tb, ba) = (range("stationary"), range("tbm"), range("barrier"));
    assert!(st < tb && tb < ba, "stationary {st}, tbm {tb}, barrier {ba}");
    ok(&["report", "--out", s(out)]);
    assert!(std::fs::read_to_string(out.join("report.md"))
        .unwrap()
        .contains("| fit_tbm.json | tbm |"));
}
