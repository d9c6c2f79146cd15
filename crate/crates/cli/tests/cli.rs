use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pfcontrol::lti::PlantModel;

fn pfctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfctl")).args(args).output().expect("pfctl runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_file(dir: &Path, text: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("scenario.cfg");
    fs::write(&cfg, text).unwrap();
    let out = dir.join("out");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    pfctl(&args)
}

/// Last value of a named column in a trajectory file.
fn last_value(csv_path: &Path, column: &str) -> f64 {
    let text = fs::read_to_string(csv_path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == column).expect("column exists");
    lines.last().unwrap().split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn builtin_scenario_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("di");
    let o = pfctl(&["run", "double-integrator-sine", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sigma = 1.000000"));
    for f in ["trajectory.csv", "columns.csv", "manifest.txt", "summary.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let header = fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,x1,x2,u1,R1,V1,x_norm,V");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 0"));
    assert!(manifest.contains("controller.lambdas = "));
    assert!(manifest.contains("[config]"));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("check decay_rate PASS"));
    assert!(summary.contains("check lyapunov_bound PASS"));
}

#[test]
fn zero_step_is_a_config_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(
        dir.path(),
        "mode = theorem1\ndt = 0\n[plant]\nbuiltin = double-integrator\nx0 = 1, 0\n[gains]\ng1 = sine\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(
        dir.path(),
        "mode = theorem1\n[plant]\nbuiltin = double-integrator\nx0 = 1, 0\n[gains]\ng1 = sine\nslak = 2\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 7: unknown key `gains.slak`"), "{}", stderr(&o));
}

#[test]
fn bad_gain_and_bad_schedule_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = "mode = theorem1\n[plant]\nbuiltin = double-integrator\nx0 = 1, 0\n[gains]\n";
    let o = run_file(dir.path(), &format!("{base}g1 = wobble\n"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 6"));
    let o = run_file(dir.path(), &format!("{base}g1 = schedule1 on1=2 gap=1 on2=2 period=3\n"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn uncontrollable_plant_is_a_numeric_failure_naming_the_module() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        run_file(dir.path(), "mode = theorem1\n[plant]\na = 1 0; 0 2\nb = 1; 0\nx0 = 1, 1\n[gains]\ng1 = sine\n", &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("lti_model"), "{}", stderr(&o));
}

#[test]
fn failed_assertion_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(
        dir.path(),
        "mode = theorem1\nhorizon = 2\n[plant]\nbuiltin = double-integrator\nx0 = 1, 0\n[gains]\ng1 = sine\n[assert]\nfinal_ratio = 1e-12\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stdout(&o).contains("check final_ratio FAIL"));
}

#[test]
fn list_names_the_scenarios() {
    let o = pfctl(&["list"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in
        ["paper-spacecraft", "double-integrator-sine", "two-block-coupled", "adaptive-scalar", "observer-two-block"]
    {
        assert!(s.contains(name), "missing {name}");
    }
}

#[test]
fn random_start_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = "mode = theorem1\nhorizon = 20\n[plant]\nbuiltin = two-state-unstable\nx0 = random\n[gains]\ng1 = sinusoid offset=0.5 amplitude=1 omega=2\n";
    let read = |seed: &str, sub: &str| {
        let o = run_file(&dir.path().join(sub), text, &["--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(sub).join("out/trajectory.csv")).unwrap()
    };
    fs::create_dir_all(dir.path().join("a")).unwrap();
    fs::create_dir_all(dir.path().join("b")).unwrap();
    fs::create_dir_all(dir.path().join("c")).unwrap();
    assert_eq!(read("7", "a"), read("7", "b"));
    assert_ne!(read("7", "a"), read("8", "c"));
}

#[test]
fn plant_and_gain_files_resolve_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let plant = PlantModel::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]], &[&[0.0], &[1.0]]).unwrap();
    fs::write(dir.path().join("osc.plant"), plant.to_text()).unwrap();
    let table: String =
        (0..=400).map(|i| format!("{} {}\n", i as f64 * 0.05, 1.0 + 0.5 * (i as f64 * 0.05).sin())).collect();
    fs::write(dir.path().join("gain.txt"), table).unwrap();
    let o = run_file(
        dir.path(),
        "mode = theorem1\nhorizon = 15\n[plant]\nfile = osc.plant\nx0 = 1, 0\n[gains]\ng1 = table gain.txt\n",
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(last_value(&dir.path().join("out/trajectory.csv"), "x_norm") < 1e-3);
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let o = pfctl(&[
        "run",
        "double-integrator-sine",
        "--out",
        out.to_str().unwrap(),
        "--horizon",
        "10",
        "--sweep",
        "controller.slack:0.5..2:3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(index.lines().count(), 4);
    assert!(index.starts_with("index,controller.slack,status,detail"));
    for i in 0..3 {
        assert!(out.join(format!("sweep-{i:03}/summary.txt")).is_file());
    }
    assert!(fs::read_to_string(out.join("sweep-002/manifest.txt")).unwrap().contains("controller.slack = 2"));
}

#[test]
fn observer_replays_recorded_measurements() {
    // x1' = x2, x2' = 0 with x(0) = (1, 0.5); recorded y = g(t) x1
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..=300)
        .map(|i| i as f64 * 0.05)
        .map(|t| format!("{t} {}\n", (1.0 + 0.5 * t.sin()) * (1.0 + 0.5 * t)))
        .collect();
    fs::write(dir.path().join("y.txt"), format!("[outputs]\n{rows}")).unwrap();
    let o = run_file(
        dir.path(),
        "mode = observer\nhorizon = 15\n[plant]\na = 0 1; 0 0\nc = 1 0\n[gains]\ng1 = sinusoid offset=1 amplitude=0.5 omega=1\n[observer]\nmeasurements = y.txt\n",
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = dir.path().join("out/trajectory.csv");
    assert!((last_value(&traj, "x_hat1") - 8.5).abs() < 1e-3);
    assert!((last_value(&traj, "x_hat2") - 0.5).abs() < 1e-3);
}

#[test]
fn spacecraft_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(
        dir.path(),
        "mode = spacecraft\nhorizon = 40\n[spacecraft]\nangle_deg = 30\naxis = 1, 0, 1\nthird_axis = dedicated\n[assert]\nfinal_ratio = 0.5\n",
        &[],
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    let q0 = (15f64).to_radians().cos();
    assert!(manifest.contains(&format!("spacecraft.initial_state = {q0}")));
    let o = run_file(dir.path(), "mode = spacecraft\n[spacecraft]\ninertia = 1, 2, 3\n", &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reference_spacecraft_scenario_passes_its_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sc");
    let o = pfctl(&["run", "paper-spacecraft", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    for name in ["quaternion_norm", "lambda_hat2_monotone", "axis1_idle_when_g1_off", "final_ratio"] {
        assert!(summary.contains(&format!("check {name} PASS")), "{summary}");
    }
    let header = fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("t,q0,q1,q2,q3,w1,w2,w3,u1,u2,u3,R1,R2,lambda_hat2,R3"));
}

#[test]
fn observer_replay_uses_recorded_inputs() {
    // x1' = x2, x2' = u with u = 1, x(0) = (1, 0); recorded y = g(t) x1
    let dir = tempfile::tempdir().unwrap();
    let g = |t: f64| 1.0 + 0.5 * t.sin();
    let ts: Vec<f64> = (0..=300).map(|i| i as f64 * 0.05).collect();
    let outputs: String = ts.iter().map(|&t| format!("{t} {}\n", g(t) * (1.0 + 0.5 * t * t))).collect();
    let inputs: String = ts.iter().map(|&t| format!("{t} 1\n")).collect();
    fs::write(dir.path().join("y.txt"), format!("[outputs]\n{outputs}[inputs]\n{inputs}")).unwrap();
    let base = "mode = observer\nhorizon = 15\n[plant]\na = 0 1; 0 0\nc = 1 0\n[gains]\ng1 = sinusoid offset=1 amplitude=0.5 omega=1\n[observer]\nmeasurements = y.txt\n";
    let o = run_file(dir.path(), &format!("{base}b = 0; 1\n"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = dir.path().join("out/trajectory.csv");
    assert!((last_value(&traj, "x_hat1") - 113.5).abs() < 1e-2);
    assert!((last_value(&traj, "x_hat2") - 15.0).abs() < 1e-2);
    let o = run_file(dir.path(), base, &[]);
    assert_eq!(o.status.code(), Some(2));
}
