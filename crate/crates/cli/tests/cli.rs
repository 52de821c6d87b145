use std::path::Path;
use std::process::{Command, Output};

fn gradnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradnet")).args(args).output().expect("spawn gradnet")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_TRAIN: &str = r#"
trials = 1

[task]
kind = "convex2d"

[model]
architecture = "gradnet_m"
mode = "monotone"
activation = { kind = "softmax", t = 1.0 }
modules = 2
hidden = 4

[train]
learning_rates = [LR]
batch_size = 100
epochs = 2
train_points = 500
val_points = 300
test_points = 300
eval_every = 5
seed = 11

[output]
dir = "OUT"
"#;

fn write_config(dir: &Path, name: &str, lr: &str) -> std::path::PathBuf {
    let out = dir.join(format!("{name}_out"));
    let text = SMALL_TRAIN.replace("LR", lr).replace("OUT", out.to_str().unwrap());
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("fresh.json");
    let m = model.to_str().unwrap();
    let o = gradnet(&["verify", "--builtin", "gradnet-m", "--monotone", "--dim", "3", "--pairs", "2000", "--save", m]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("overall = PASS"));
    assert_eq!(code(&gradnet(&["verify", m, "--pairs", "2000"])), 0);

    let mut file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    for p in file["params"].as_array_mut().unwrap() {
        *p = serde_json::json!(-1.0);
    }
    let bad = tmp.path().join("corrupt.json");
    std::fs::write(&bad, file.to_string()).unwrap();
    let o = gradnet(&["verify", bad.to_str().unwrap(), "--pairs", "2000"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("constraints = FAIL"));

    assert_eq!(code(&gradnet(&["verify", tmp.path().join("missing.json").to_str().unwrap()])), 2);
    std::fs::write(tmp.path().join("garbage.json"), "{not json").unwrap();
    assert_eq!(code(&gradnet(&["verify", tmp.path().join("garbage.json").to_str().unwrap()])), 2);
    for b in ["single", "gradnet-c"] {
        assert_eq!(code(&gradnet(&["verify", "--builtin", b, "--monotone", "--pairs", "1000"])), 0, "{b}");
        assert_eq!(code(&gradnet(&["verify", "--builtin", b, "--pairs", "1000"])), 0, "{b}");
    }
}

#[test]
fn lse_exit_codes() {
    let o = gradnet(&["lse", "affine", "--m", "3", "--t", "10", "--d", "2"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = gradnet(&["lse", "quadratic", "--m", "5", "--t", "500", "--d", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("pass = true"));
    assert_eq!(code(&gradnet(&["lse", "quadratic", "--m", "30", "--d", "2"])), 1);
    assert_eq!(code(&gradnet(&["lse", "quadratic", "--m", "5", "--d", "2", "--cap", "100"])), 1);
    assert_eq!(code(&gradnet(&["lse", "cubic"])), 2);
    assert_eq!(code(&gradnet(&["lse", "convex2d", "--d", "3"])), 2);
    assert_eq!(code(&gradnet(&["lse", "quadratic", "--t", "0"])), 2);
}

#[test]
fn train_writes_reproducible_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run", "0.01");
    let o = gradnet(&["train", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("MSE_dB"));
    let out = tmp.path().join("run_out");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(out.join("curve_trial0_lr0.csv").exists());
    assert!(out.join("summary.txt").exists());

    let again = tmp.path().join("again");
    assert_eq!(code(&gradnet(&["train", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()])), 0);
    for f in ["metrics.csv", "curve_trial0_lr0.csv", "summary.txt", "model_trial0.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let plot = tmp.path().join("field.csv");
    let model = out.join("model_trial0.json");
    let o = gradnet(&["export-plot-data", "--model", model.to_str().unwrap(), "--task", "convex2d", "--grid", "11", "--out", plot.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(&plot).unwrap();
    assert!(csv.starts_with("x1,x2,true1,true2,pred1,pred2,err\n"));
    assert_eq!(csv.lines().count(), 122);
}

#[test]
fn zero_learning_rate_keeps_initial_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "frozen", "0.0");
    assert_eq!(code(&gradnet(&["train", cfg.to_str().unwrap()])), 0);
    let metrics = std::fs::read_to_string(tmp.path().join("frozen_out/metrics.csv")).unwrap();
    let header: Vec<&str> = metrics.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("initial_val_mse"), col("val_mse"));
}

#[test]
fn malformed_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let cases = [
        "this is = = not toml".to_string(),
        SMALL_TRAIN.replace("LR", "0.01").replace("OUT", out.to_str().unwrap()).replace("hidden = 4", "hidden = 0"),
        SMALL_TRAIN.replace("LR", "0.01").replace("OUT", out.to_str().unwrap()).replace("seed = 11", "seed = 11\ncolour = 3"),
        SMALL_TRAIN.replace("LR", "-1.0").replace("OUT", out.to_str().unwrap()),
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = tmp.path().join(format!("bad{i}.toml"));
        std::fs::write(&path, text).unwrap();
        let o = gradnet(&["train", path.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "case {i}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "case {i} created output");
    }
    assert_eq!(code(&gradnet(&["train", tmp.path().join("absent.toml").to_str().unwrap()])), 2);
    assert_eq!(code(&gradnet(&["hamiltonian", tmp.path().join("bad0.toml").to_str().unwrap()])), 2);
    assert_eq!(code(&gradnet(&["frobnicate"])), 2);
}

#[test]
fn hamiltonian_sanity_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = tmp.path().join("truth.toml");
    std::fs::write(&truth, "field = \"ground_truth\"\n[orbit]\nsteps = 400\n[data]\ntest_orbits = 2\n[output]\ndir = \"unused\"\n").unwrap();
    let out = tmp.path().join("truth_out");
    let o = gradnet(&["hamiltonian", truth.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header: Vec<&str> = metrics.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let db: f64 = row[header.iter().position(|h| *h == "coordinate_mse_db").unwrap()].parse().unwrap();
    assert!(db <= -80.0, "{db}");
    let traj = std::fs::read_to_string(out.join("trajectory_trial0_orbit0_truth.csv")).unwrap();
    assert!(traj.starts_with("t,q1x,q1y,q2x,q2y,energy\n"));
    assert_eq!(traj.lines().count(), 402);

    let zero = tmp.path().join("zero.toml");
    std::fs::write(&zero, std::fs::read_to_string(&truth).unwrap().replace("ground_truth", "zero")).unwrap();
    let o = gradnet(&["hamiltonian", zero.to_str().unwrap(), "--out", tmp.path().join("zero_out").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
}
