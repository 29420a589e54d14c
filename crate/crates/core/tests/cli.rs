use std::path::Path;
use std::process::{Command, Output};

use pinn_generalization::experiments::preset;

fn pinn_gen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinn-gen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_writes_a_model_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("model.json");
    let o = pinn_gen(&[
        "train", "--hidden", "8", "--lo", "-3.14159", "--hi", "-1.0", "--n-cp", "12",
        "--adam-iters", "50", "--lbfgs-iters", "20", "--seed", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["seed"], 3);
    assert_eq!(v["params"].as_array().unwrap().len(), 8 * 3 + 1);
    assert!(v["final_loss"].as_f64().unwrap() >= 0.0);
    assert!(v["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(v["converged_by"].is_string());
}

#[test]
fn exit_codes() {
    // usage errors
    assert_eq!(pinn_gen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pinn_gen(&["sweep"]).status.code(), Some(1));
    assert_eq!(pinn_gen(&["sweep", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(pinn_gen(&["train", "--hidden", "0"]).status.code(), Some(1));
    assert_eq!(pinn_gen(&["--help"]).status.code(), Some(0));
    // training abort
    let o = pinn_gen(&["train", "--hidden", "4", "--adam-iters", "20", "--lbfgs-iters", "0", "--lr", "1e300"]);
    assert_eq!(o.status.code(), Some(2));
    // store problems
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    assert_eq!(pinn_gen(&["genlevel", "--store", root, "--sweep", "neurons"]).status.code(), Some(3));
    assert_eq!(pinn_gen(&["plot-data", "--store", root, "--sweep", "layers"]).status.code(), Some(3));
}

fn tiny_spec(path: &Path) {
    let mut spec = preset("collocation_points").unwrap().with_ensemble_size(3).with_adam_iters(60).with_lbfgs_iters(20);
    spec.levels.truncate(2);
    spec.n_grid = 300;
    std::fs::write(path, serde_json::to_vec_pretty(&spec).unwrap()).unwrap();
}

#[test]
fn sweep_then_report_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    tiny_spec(&cfg);
    let store = dir.path().join("store");
    let store = store.to_str().unwrap();
    let o = pinn_gen(&["sweep", "--config", cfg.to_str().unwrap(), "--store", store]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Kruskal-Wallis"));

    let g = pinn_gen(&["genlevel", "--store", store, "--sweep", "collocation_points"]);
    assert_eq!(g.status.code(), Some(0));
    assert!(stdout(&g).contains("eps=1e-2"));
    let s = pinn_gen(&["stats", "--store", store, "--sweep", "collocation_points"]);
    assert_eq!(s.status.code(), Some(0));
    let p = pinn_gen(&["plot-data", "--store", store, "--sweep", "collocation_points"]);
    assert_eq!(p.status.code(), Some(0));
    let files: Vec<String> = stdout(&p).lines().map(String::from).collect();
    assert!(files.iter().any(|f| f.ends_with("genlevel.csv")));
    assert!(files.iter().all(|f| Path::new(f).is_file()));
}

#[test]
fn sweep_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    tiny_spec(&cfg);
    let store = dir.path().join("store");
    let o = pinn_gen(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--ensemble", "2", "--seed", "9",
        "--adam-iters", "10", "--lbfgs-iters", "5", "--store", store.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s = pinn_generalization::experiments::ResultsStore::open(&store).unwrap();
    let spec = s.load_spec("collocation_points").unwrap();
    assert_eq!((spec.ensemble_size, spec.base_seed), (2, 9));
    assert_eq!((spec.train_config.adam_iters, spec.train_config.lbfgs_max_iters), (10, 5));
}
