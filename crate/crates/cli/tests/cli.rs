use std::path::Path;
use std::process::{Command, Output};

fn lpvmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpvmax")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lpvmax(args);
    assert!(
        out.status.success(),
        "lpvmax {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_simulate_identify_realize() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let data = dir.path().join("data.csv");
    let clean = dir.path().join("clean.csv");
    let out = dir.path().join("est.json");
    let report = dir.path().join("report.json");
    let (g, h) = (dir.path().join("g.csv"), dir.path().join("h.csv"));
    let spectrum = dir.path().join("sv.csv");

    ok(&["generate-model", "--dims", "2,1,1,1", "--seed", "3", "--out", s(&model)]);
    ok(&[
        "simulate", "--model", s(&model), "--samples", "1500", "--seed", "5", "--snr", "40",
        "--out", s(&data), "--clean-out", s(&clean),
    ]);
    let header = std::fs::read_to_string(&data).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t,u1,p1,y1");
    assert_eq!(header.lines().count(), 1501);

    let stdout = ok(&[
        "identify", "--data", s(&data), "--n-b", "4", "--n-c", "2",
        "--out", s(&out), "--report", s(&report), "--process-table", s(&g),
        "--noise-table", s(&h), "--spectrum", s(&spectrum),
    ]);
    assert!(stdout.contains("n_x 2"), "{stdout}");
    let est = lpvmax::LpvSsModel::load(&out).unwrap();
    assert_eq!(est.dims(), lpvmax::Dims::new(2, 1, 1, 1));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["orders"]["n_c"], 2);

    let again = dir.path().join("again.json");
    let stdout = ok(&[
        "realize", "--process-table", s(&g), "--noise-table", s(&h), "--n-p", "1", "--n-x", "2",
        "--out", s(&again),
    ]);
    assert!(stdout.contains("n_x 2"));
    let again = lpvmax::LpvSsModel::load(&again).unwrap();
    let sim = lpvmax::ho_kalman::similarity_check_tol(&est, &again, 3, 1e-8).unwrap();
    assert!(sim.isomorphic, "{sim:?}");
}

#[test]
fn simulate_on_given_inputs_is_noise_free_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let inputs = dir.path().join("inputs.csv");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["generate-model", "--dims", "2,1,1,1", "--out", s(&model)]);
    std::fs::write(&inputs, "t,u1,p1\n1,1.0,0.5\n2,0.0,-0.5\n3,-1.0,0.2\n").unwrap();
    ok(&["simulate", "--model", s(&model), "--inputs", s(&inputs), "--out", s(&a)]);
    ok(&["simulate", "--model", s(&model), "--inputs", s(&inputs), "--seed", "9", "--out", s(&b)]);
    // noise-free output does not depend on the seed
    assert_eq!(std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
}

#[test]
fn benchmark_sweep_writes_summary_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
snr_db = "inf"
n_train = 800
n_val = 300
n_mc = 2

[model]
source = "random"
seed = 1
dims = { n_x = 2, n_u = 1, n_y = 1, n_p = 1 }

[orders]
n_b = 4
n_c = 2
"#,
    )
    .unwrap();
    let (summary, runs) = (dir.path().join("summary.csv"), dir.path().join("runs.csv"));
    let stdout = ok(&[
        "benchmark", "--config", s(&cfg), "--snr", "inf", "--snr", "30", "--seed", "4",
        "--out", s(&summary), "--runs", s(&runs),
    ]);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    let text = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("inf,"));
    assert_eq!(std::fs::read_to_string(&runs).unwrap().lines().count(), 5);

    // same seed, same numbers
    let summary2 = dir.path().join("summary2.csv");
    ok(&["benchmark", "--config", s(&cfg), "--snr", "inf", "--snr", "30", "--seed", "4", "--out", s(&summary2)]);
    assert_eq!(text, std::fs::read_to_string(&summary2).unwrap());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, "t,u1,p1,y1\n1,0,0,0\n2,1,0,1\n").unwrap();
    let out = lpvmax(&["identify", "--data", s(&data), "--out", s(&dir.path().join("m.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("orders missing"));

    let out = lpvmax(&["simulate", "--model", "/nonexistent.json", "--samples", "5", "--out", "x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
