use std::path::Path;
use std::process::{Command, Output};

fn bin(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tonecontour"))
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_input_directory_lists_every_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    let out = bin(dir.path(), &["ingest", "--input=data", "--output=out"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for f in ["tokens.csv", "f0.csv", "durations.csv"] {
        assert!(err.contains(f), "{f} not reported: {err}");
    }
}

#[test]
fn corrupted_csv_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let r = bin(dir.path(), &["synth", "--output=data"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let tokens = dir.path().join("data/tokens.csv");
    let text = std::fs::read_to_string(&tokens).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[3] = lines[3].replacen("T1-T1", "T5-T1", 1);
    lines[5] = lines[5].replacen(",female,", ",robot,", 1).replacen(",male,", ",robot,", 1);
    std::fs::write(&tokens, lines.join("\n") + "\n").unwrap();

    let out = bin(dir.path(), &["ingest", "--input=data", "--output=out"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 4") && err.contains("T5-T1"), "{err}");
    assert!(err.contains("line 6"), "{err}");
    assert!(!dir.path().join("out/ingested").exists());
}

#[test]
fn bad_configuration_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ctx.toml"), "[models]\ncontexts = [\"4.9\"]\n").unwrap();
    let out = bin(dir.path(), &["fit", "--config=ctx.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("4.9"));

    std::fs::write(dir.path().join("typo.toml"), "[models]\nfs_kk = 5\n").unwrap();
    let out = bin(dir.path(), &["fit", "--config=typo.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fs_kk"));

    // flags are --key=value only
    let out = bin(dir.path(), &["fit", "--config", "ctx.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_without_ingest_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["fit", "--output=out"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("ingested"));
}

#[test]
fn ingest_counts_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    assert!(bin(dir.path(), &["synth", "--output=data"]).status.success());
    let out = bin(dir.path(), &["ingest", "--input=data", "--output=out"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let truth = json(&dir.path().join("data/ground_truth.json"));
    let report = json(&dir.path().join("out/trim_report.json"));
    let n = truth["n_tokens"].as_u64().unwrap();
    assert_eq!(report["input_tokens"].as_u64().unwrap(), n);
    let removed: u64 = [
        "removed_too_short",
        "removed_outlier",
        "removed_below_min_tokens",
        "removed_above_cap",
        "removed_single_gender",
    ]
    .iter()
    .map(|k| report[k].as_u64().unwrap())
    .sum();
    assert_eq!(removed + report["retained_tokens"].as_u64().unwrap(), n);
    // planted octave jumps are the roughest tracks there are
    let dropped: Vec<&str> = report["removals"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["reason"] == "outlier")
        .map(|r| r["token_id"].as_str().unwrap())
        .collect();
    // the cut is a fixed percentile, so a mild jump can slip under it
    let planted = truth["pitch_error_tokens"].as_array().unwrap();
    let caught = planted.iter().filter(|t| dropped.contains(&t.as_str().unwrap())).count();
    assert!(caught as f64 >= 0.95 * planted.len() as f64, "{caught}/{}", planted.len());
}

#[test]
fn noiseless_run_without_permutations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "input = \"data\"\noutput = \"out\"\n\n[models]\nmethods = [\"II\"]\ncontexts = [\"4.4\", \"3.4\"]\nwithhold = []\n\n[evaluate]\npermutations = 0\n\n[synth]\nn_words = 40\n",
    )
    .unwrap();
    let r = bin(dir.path(), &["synth", "--config=run.toml", "--noiseless"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let r = bin(dir.path(), &["all", "--config=run.toml"]);
    assert!(r.status.success(), "{}", stderr(&r));

    let out = dir.path().join("out");
    let eval = json(&out.join("eval_report.json"));
    let m = &eval["methods"][0];
    assert_eq!(m["method"], "II");
    assert_eq!(m["accuracy_test"].as_f64(), Some(1.0));
    assert!(m["permutation_baseline"].is_null());
    assert!(out.join("contours_II.csv").exists() && !out.join("contours_I.csv").exists());

    // sections reconcile: evaluated tokens = contour rows = modeled tokens
    let run = json(&out.join("run_report.json"));
    assert_eq!(run["schema_version"], 1);
    let rows = std::fs::read_to_string(out.join("contours_II.csv")).unwrap().lines().count() as u64 - 1;
    let evaluated = eval["split"]["n_train"].as_u64().unwrap() + eval["split"]["n_test"].as_u64().unwrap();
    assert_eq!(rows, evaluated);
    assert_eq!(rows, run["fit"]["scope"]["modeled_tokens"].as_u64().unwrap());
    let scope = &run["fit"]["scope"];
    assert_eq!(
        scope["ingested_tokens"].as_u64().unwrap(),
        run["trim"]["retained_tokens"].as_u64().unwrap()
    );
    assert!(std::fs::read_to_string(out.join("aic_table.csv")).unwrap().lines().count() == 1);
    assert!(std::fs::read_to_string(out.join("prototypes.svg")).unwrap().starts_with("<svg"));
}
