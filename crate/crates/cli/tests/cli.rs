use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gaware"));
    for (k, _) in std::env::vars() {
        if k.starts_with("GAWARE_") {
            c.env_remove(k);
        }
    }
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    let mut m = path.as_os_str().to_owned();
    m.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(PathBuf::from(m)).unwrap()).unwrap()
}

#[test]
fn fit_on_sample_emits_model_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.csv");
    let input = data("sample_estimates.csv");
    let before = std::fs::read(&input).unwrap();
    let out = run(&[
        "fit", "--input", s(&input), "--sigma2", "1.5", "--depth", "3", "--groups", "4",
        "--out", s(&model), "--report", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tree = gaware::io::load_tree(&model).unwrap();
    assert_eq!(tree.meta.depth, 3);
    let lines = std::fs::read_to_string(&report).unwrap();
    let table = gaware::io::read_estimate_table(&input).unwrap();
    assert_eq!(lines.lines().count(), table.len() + 1);
    assert!(lines.starts_with("type_id,leaf,label,prediction_outcome"));
    let m = manifest(&model);
    assert_eq!(m["subcommand"], "fit");
    assert_eq!(m["config"]["sigma2"], 1.5);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 1);
    assert_eq!(std::fs::read(&input).unwrap(), before, "input mutated");
}

#[test]
fn sweep_grid_gives_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("frontier.csv");
    let out = run(&[
        "sweep", "--input", s(&data("sample_estimates.csv")), "--sigma2-grid", "0.5:5.5:1.0",
        "--out", s(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sigma2,basin_mass,r_hat,w_hat,n_archetypes,error");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("0.5,") && rows[5].starts_with("5.5,"));
}

#[test]
fn missing_input_exits_one_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("does_not_exist.csv");
    let out = run(&["fit", "--input", s(&missing), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does_not_exist.csv"));
}

#[test]
fn usage_errors_exit_one_and_version_exits_zero() {
    assert_eq!(run(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    let v = run(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn invalid_settings_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit", "--input", s(&data("sample_estimates.csv")), "--groups", "1",
        "--out", s(&dir.path().join("m.json")), "--report", s(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_and_environment_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"sigma2": 0.25, "min_leaf": 3, "depth": 1}"#).unwrap();
    let model = dir.path().join("m.json");
    let input = data("sample_estimates.csv");
    let report = dir.path().join("r.csv");
    let base = [
        "fit", "--config", s(&cfg), "--input", s(&input), "--report", s(&report), "--out", s(&model),
    ];
    let out = run(&base);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&model);
    assert_eq!(m["config"]["sigma2"], 0.25);
    assert_eq!(m["config"]["min_leaf"], 3);

    let mut args = base.to_vec();
    args.extend(["--sigma2", "2"]);
    assert!(run(&args).status.success());
    assert_eq!(manifest(&model)["config"]["sigma2"], 2.0);

    let out = bin().args(base).env("GAWARE_SIGMA2", "4").output().unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&model)["config"]["sigma2"], 4.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("sample_estimates.csv");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let f = dir.path().join(format!("forest{k}.json"));
        let sc = dir.path().join(format!("scores{k}.csv"));
        let out = run(&[
            "forest", "--input", s(&input), "--trees", "6", "--vars", "2", "--seed", "9",
            "--sigma2", "1", "--out", s(&f), "--scores", s(&sc), "--threads", "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(&f).unwrap(), std::fs::read(&sc).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn split_then_infer() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("est.csv");
    let out = run(&[
        "build-estimates", "--input", s(&data("sample_study.csv")), "--out", s(&base), "--split", "--seed", "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let main = dir.path().join("est.main.csv");
    let holdout = dir.path().join("est.holdout.csv");
    assert!(main.exists() && holdout.exists());

    let cands = dir.path().join("cands");
    std::fs::create_dir(&cands).unwrap();
    for (name, sigma2) in [("a", "0.5"), ("b", "3")] {
        let out = run(&[
            "fit", "--input", s(&main), "--sigma2", sigma2, "--out", s(&cands.join(format!("{name}.json"))),
            "--report", s(&dir.path().join(format!("{name}.csv"))),
        ]);
        assert!(out.status.success());
    }
    let tests = dir.path().join("tests.csv");
    let out = run(&[
        "infer", "--main", s(&main), "--holdout", s(&holdout), "--candidates", s(&cands),
        "--gamma", "0.1", "--out", s(&tests),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&tests).unwrap();
    assert!(text.starts_with("candidate,t_hat,v2_hat,critical,gamma_star,retained,degenerate,p_value"));
    assert_eq!(text.lines().count(), 3);
    assert_eq!(manifest(&tests)["inputs"].as_object().unwrap().len(), 4);
}

#[test]
fn estimators_build() {
    let dir = tempfile::tempdir().unwrap();
    for est in ["ipw", "dr", "match", "param"] {
        let out_path = dir.path().join(format!("{est}.csv"));
        let out = run(&[
            "build-estimates", "--input", s(&data("sample_study.csv")), "--out", s(&out_path),
            "--estimator", est, "--folds", "3",
        ]);
        assert!(out.status.success(), "{est}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(gaware::io::read_estimate_table(&out_path).is_ok());
    }
}

#[test]
fn simulate_small() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench.csv");
    let summary = dir.path().join("summary.json");
    let out = run(&[
        "simulate", "--scales", "0.1,3", "--sigma2-grid", "0.5,2", "--reps", "2", "--n", "300",
        "--seed", "1", "--out", s(&bench), "--summary", s(&summary),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // 2 scales x 2 reps x (2 gaware + plain + 2 shrinkage)
    assert_eq!(std::fs::read_to_string(&bench).unwrap().lines().count(), 1 + 2 * 2 * 5);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(v["summary"]["headlines"].as_array().unwrap().len(), 2);
}
