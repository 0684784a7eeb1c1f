use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rbmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbmp")).args(args).env_remove("RBMP_LOG").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Last column of the first data row of the estimate table.
fn estimate_value(o: &Output) -> f64 {
    let out = stdout(o);
    let line = out.lines().nth(1).expect("data row");
    line.split_whitespace().last().unwrap().parse().unwrap()
}

fn value_after(o: &Output, key: &str) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim_start_matches([' ', '=']).trim().to_string()))
        .unwrap_or_else(|| panic!("no {key} in {}", stdout(o)))
}

#[test]
fn estimate_examples() {
    let o = rbmp(&["estimate", "--variant", "B", "--m", "1", "--n", "100", "--D", "2", "--p", "2", "--mode", "nearest"]);
    assert_eq!(code(&o), 0);
    assert!((estimate_value(&o) - 0.05).abs() < 1e-8);

    let o = rbmp(&["estimate", "--variant", "I", "--m", "1", "--n", "1", "--D", "1", "--R", "1", "--mode", "nearest"]);
    assert!((estimate_value(&o) - 0.5).abs() < 1e-8);

    let o = rbmp(&["estimate", "--variant", "S", "--m", "100", "--n", "100", "--D", "1", "--mode", "refined"]);
    assert!((estimate_value(&o) - 0.03133).abs() < 1e-5);
    assert!(stdout(&o).contains("refined_corrected"));
}

#[test]
fn estimate_several_modes_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est.csv");
    let o = rbmp(&[
        "estimate", "--variant", "I", "--m", "10", "--n", "30", "--d", "2", "--mode", "greedy,kappa0,kappa1,refined", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 5);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "variant,D,p,R,m,n,mode,moment,estimate");
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("est.manifest.json").exists());
}

#[test]
fn exit_codes() {
    let o = rbmp(&["estimate", "--variant", "I", "--m", "10", "--n", "5", "--D", "2"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("m <= n"));
    assert_eq!(code(&rbmp(&["estimate", "--variant", "Q", "--m", "1", "--n", "1", "--D", "1"])), 64);
    assert_eq!(code(&rbmp(&["estimate", "--variant", "I", "--m", "1"])), 64);
    assert_eq!(code(&rbmp(&["estimate", "--variant", "I", "--m", "1", "--n", "2", "--D", "1", "--mode", "best"])), 64);
    assert_eq!(code(&rbmp(&["estimate", "--variant", "B", "--m", "1", "--n", "2", "--D", "2", "--R", "3"])), 64);
    assert_eq!(code(&rbmp(&["--jobs", "0", "mobility", "cobb"])), 64);
    assert_eq!(code(&rbmp(&["frobnicate"])), 64);
    assert_eq!(code(&rbmp(&["--help"])), 0);
    assert_eq!(code(&rbmp(&["--version"])), 0);
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
variant = "I"
m = [4]
n = { start = 4, end = 12, step = 4 }
dim = 2
instances_per_point = 60
seed = 11
modes = ["refined", "nearest"]
"#;

#[test]
fn verify_single_point_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", "variant = \"B\"\nm = 3\nn = 9\ndim = 2\ninstances_per_point = 30\n");
    let out = dir.path().join("out");
    let o = rbmp(&["verify", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("verify.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,D,p,m,n,mode,estimate,sim_mean,sim_sd,sim_se,rel_err,greedy_mean,greedy_se"
    );
    assert_eq!(lines.count(), 1);
}

#[test]
fn verify_is_deterministic_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let run = |tag: &str, jobs: &str| {
        let out = dir.path().join(tag);
        let o = rbmp(&["--jobs", jobs, "verify", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out.join("verify.csv")).unwrap(), fs::read(out.join("verify.json")).unwrap())
    };
    let a = run("a", "4");
    let b = run("b", "4");
    let c = run("c", "1");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(String::from_utf8_lossy(&a.0).lines().count(), 7);
}

#[test]
fn verify_seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let csv = |seed: &str| {
        let out = dir.path().join(seed);
        assert_eq!(code(&rbmp(&["verify", &cfg, "--seed", seed, "--out", out.to_str().unwrap()])), 0);
        fs::read(out.join("verify.csv")).unwrap()
    };
    assert_ne!(csv("1"), csv("2"));
}

#[test]
fn verify_outputs_reference_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    assert_eq!(code(&rbmp(&["verify", &cfg, "--out", out.to_str().unwrap(), "--name", "sweep"])), 0);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["manifest"], "sweep.manifest.json");
    assert_eq!(summary["config"]["seed"], 11);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sweep.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "verify");
    assert_eq!(manifest["seed"], 11);
    let outputs: Vec<String> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert!(outputs.iter().any(|p| p.ends_with("sweep.csv")));
    assert!(outputs.iter().any(|p| p.ends_with("sweep.json")));
    assert!(manifest["started"].as_str().unwrap() <= manifest["finished"].as_str().unwrap());
}

#[test]
fn verify_threshold_violation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[thresholds]\nmax_rel_err = 0.0001\n");
    let cfg = write(dir.path(), "strict.toml", &text);
    let out = dir.path().join("o");
    let o = rbmp(&["verify", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("threshold violation"));
    assert!(out.join("verify.csv").exists());
}

#[test]
fn verify_accepts_json_and_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let json = write(
        dir.path(),
        "c.json",
        r#"{"variant": "S", "m": [3], "n": [6], "dim": 1, "instances_per_point": 20, "modes": ["refined_corrected", "kappa0"]}"#,
    );
    let o = rbmp(&["verify", &json, "--out", dir.path().join("j").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let unknown = write(dir.path(), "u.toml", &format!("{SMALL}\nbogus = 1\n"));
    assert_eq!(code(&rbmp(&["verify", &unknown])), 65);
    let broken = write(dir.path(), "b.toml", "variant = [\n");
    assert_eq!(code(&rbmp(&["verify", &broken])), 65);
    let m_gt_n = write(dir.path(), "g.toml", "variant = \"I\"\nm = 5\nn = 3\ndim = 1\n");
    assert_eq!(code(&rbmp(&["verify", &m_gt_n])), 65);
    assert_eq!(code(&rbmp(&["verify", dir.path().join("missing.toml").to_str().unwrap()])), 65);
}

#[test]
fn mobility_examples() {
    let o = rbmp(&["mobility", "cobb", "--p", "2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(value_after(&o, "alpha0").parse::<f64>().unwrap(), 2.0);
    assert_eq!(value_after(&o, "alpha1").parse::<f64>().unwrap(), 1.0);
    assert_eq!(value_after(&o, "alpha2").parse::<f64>().unwrap(), 0.5);

    let o = rbmp(&["mobility", "min-fleet", "--lambda", "200", "--p", "2"]);
    let s: i64 = stdout(&o).trim().parse().unwrap();
    assert!((s - 143).abs() <= 5, "{s}");

    let o = rbmp(&["mobility", "optimize-open", "--lambda", "200", "--lambda-prime", "200", "--ni", "100"]);
    assert_eq!(value_after(&o, "tau_star").parse::<f64>().unwrap(), 0.005);
    assert_eq!(value_after(&o, "regime"), "instant_matching");
}

#[test]
fn mobility_infeasible_exits_two() {
    assert_eq!(code(&rbmp(&["mobility", "optimize-closed", "--lambda", "200", "--fleet", "100"])), 2);
    assert_eq!(code(&rbmp(&["mobility", "optimize-open", "--lambda", "200", "--lambda-prime", "0", "--ni", "0"])), 2);
    assert_eq!(code(&rbmp(&["mobility", "cobb", "--p", "0.5"])), 2);
}

#[test]
fn mobility_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rbmp(&["mobility", "optimize-closed", "--lambda", "200", "--fleet", "155", "--taus", "0.005,0.05,0.09", "--out", out]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("optimize-closed.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "tau,model_objective,sim_mean,sim_se,n_i_root_efficient,n_i_root_inefficient,lost_fraction"
    );
    // two equilibria at small τ, only the efficient one near 0.09
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(!first[4].is_empty() && !first[5].is_empty());
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert!(!last[4].is_empty() && last[5].is_empty());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("optimize-closed.json")).unwrap()).unwrap();
    assert_eq!(report["manifest"], "optimize-closed.manifest.json");
    assert_eq!(report["tau_star"], 0.005);
}

#[test]
fn closed_loop_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let o = rbmp(&[
            "mobility", "simulate-closed", "--lambda", "100", "--fleet", "200", "--taus", "0.01,0.05", "--horizon", "4", "--warmup", "1",
            "--seed", "5", "--trajectory-stride", "50", "--out", dir.path().to_str().unwrap(), "--name", name,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(format!("{name}.csv"))).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let lost: f64 = cols[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&lost));
        assert!(cols[2].parse::<f64>().unwrap() > 0.0);
    }
    assert!(dir.path().join("a.trajectory.csv").exists());
}

#[test]
fn open_loop_simulation_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = rbmp(&[
        "mobility", "simulate-open", "--lambda", "500", "--lambda-prime", "500", "--ni", "30", "--taus", "0.002,0.02", "--reps", "200",
        "--seed", "3", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("simulate-open.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn log_env_var_is_accepted() {
    let o = Command::new(env!("CARGO_BIN_EXE_rbmp"))
        .args(["mobility", "cobb"])
        .env("RBMP_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg: rbmp_core::montecarlo::ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).unwrap(),
            Some("toml") => toml::from_str(&text).unwrap(),
            _ => continue,
        };
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 3);
}
