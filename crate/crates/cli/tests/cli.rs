use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fgnam(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgnam"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = fgnam(cwd, args);
    assert!(
        out.status.success(),
        "fgnam {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("schema.toml"),
        "time_col = \"time\"\nevent_col = \"event\"\nnum_risks = 2\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "schema = \"schema.toml\"\nseed = 1\n\n[train]\nmax_epochs = 10\nbatch_size = 64\n\n[simulate]\nn = 200\np = 4\neffects = [[{ kind = \"linear\", beta = 1.0 }, { kind = \"zero\" }, { kind = \"zero\" }, { kind = \"zero\" }], [{ kind = \"zero\" }, { kind = \"linear\", beta = 1.0 }, { kind = \"zero\" }, { kind = \"zero\" }]]\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &["--config", "run.toml", "simulate", "--out", "sim"],
    );
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "train",
            "--data",
            "sim/dataset.csv",
            "--out",
            "model",
        ],
    );
    dir
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn train_writes_its_artifacts() {
    let dir = setup();
    for f in ["checkpoint.json", "baseline.csv", "train_report.json"] {
        assert!(dir.path().join("model").join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("sim/truth.csv").is_file());
}

#[test]
fn predict_emits_one_row_per_subject_risk_and_time() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "predict",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--times",
            "0.2,0.5,1",
            "--out",
            "pred",
        ],
    );
    let rows = csv_rows(&dir.path().join("pred/cif.csv"));
    assert_eq!(rows.len(), 200 * 2 * 3);
    for row in &rows {
        let v: f64 = row.last().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn explain_reports_every_feature_and_risk() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "explain",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--grid-size",
            "10",
            "--out",
            "explain",
        ],
    );
    let out = dir.path().join("explain");
    assert_eq!(csv_rows(&out.join("importance.csv")).len(), 4 * 2);
    assert_eq!(csv_rows(&out.join("shapes.csv")).len(), 4 * 2 * 10);
    for k in 1..=2 {
        for stem in ["shapes", "importance"] {
            let svg = fs::read_to_string(out.join(format!("{stem}_risk{k}.svg"))).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
        let shapes = fs::read_to_string(out.join(format!("shapes_risk{k}.svg"))).unwrap();
        assert_eq!(shapes.matches(&format!("(risk {k})")).count(), 4);
    }
}

#[test]
fn evaluate_and_cv_write_metrics() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "evaluate",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--out",
            "eval",
        ],
    );
    assert!(!csv_rows(&dir.path().join("eval/metrics.csv")).is_empty());
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "cv",
            "--data",
            "sim/dataset.csv",
            "--folds",
            "2",
            "--out",
            "cv",
        ],
    );
    assert!(!csv_rows(&dir.path().join("cv/cv_folds.csv")).is_empty());
    assert!(!csv_rows(&dir.path().join("cv/cv_aggregate.csv")).is_empty());
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = setup();
    let p = dir.path();
    let missing = fgnam(
        p,
        &[
            "train",
            "--data",
            "nope.csv",
            "--schema",
            "schema.toml",
            "--out",
            "x",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    fs::write(p.join("short.csv"), "x1,x2\n1,2\n").unwrap();
    let columns = fgnam(
        p,
        &[
            "predict",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "short.csv",
            "--times",
            "1",
            "--out",
            "y",
        ],
    );
    assert_eq!(columns.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&columns.stderr).contains("x3"));

    let times = fgnam(
        p,
        &[
            "predict",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--times",
            "2,1",
            "--out",
            "z",
        ],
    );
    assert_eq!(times.status.code(), Some(2));

    assert_eq!(fgnam(p, &["frobnicate"]).status.code(), Some(2));
    fs::write(p.join("bad.toml"), "[train]\nlearning_rat = 1.0\n").unwrap();
    assert_eq!(
        fgnam(p, &["--config", "bad.toml", "simulate"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn same_seed_same_checkpoint() {
    let dir = setup();
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "train",
            "--data",
            "sim/dataset.csv",
            "--out",
            "again",
        ],
    );
    let a = fs::read(dir.path().join("model/checkpoint.json")).unwrap();
    let b = fs::read(dir.path().join("again/checkpoint.json")).unwrap();
    assert_eq!(a, b);
}
