use std::path::Path;
use std::process::{Command, Output};

fn polyflow(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_polyflow"))
        .current_dir(dir)
        .arg("--config")
        .arg(&path)
        .args(args)
        .env("POLYFLOW_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SHEAR: &str = r#"
[grid]
dim = 2
n = 16
[basis]
n_q = 4
[stepper]
dt = 0.02
t_end = 1.0
[initial-data]
family = "modal"
amplitude = 1e-3
mode = [0, 1]
q_index = [1, 1]
weights = [0.0, 1.0, 1.0]
"#;

#[test]
fn simulate_on_zero_data_writes_zero_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\nn = 16\n[basis]\nn_q = 3\n[stepper]\ndt = 0.1\nt_end = 0.5\n[output]\ncsv = \"zero.csv\"\n";
    let out = polyflow(dir.path(), cfg, &["simulate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("zero.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(str::to_string).collect();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        for (name, v) in header.iter().zip(row.iter()) {
            let v: f64 = v.parse().unwrap();
            match name.as_str() {
                "t" | "eta" | "baseline" | "polymer_mass" | "fluid_mass" | "min_one_plus_g" => {}
                _ => assert_eq!(v, 0.0, "{name}"),
            }
        }
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("worker threads: 2"));
}

#[test]
fn weak_fene_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[basis]\npotential = \"fene\"\nk = 0.5\n[output]\nreport = \"report.txt\"\n";
    let out = polyflow(dir.path(), cfg, &["validate-potential"]);
    assert_eq!(out.status.code(), Some(4), "{}", stdout(&out));
    let kv = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(kv.contains("passed = false"));
    let out = polyflow(dir.path(), "[basis]\nn_q = 4\n", &["validate-potential"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn audit_energy_measures_the_scheme_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = polyflow(dir.path(), SHEAR, &["audit-energy"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    let order: f64 = text
        .split("measured order ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((order - 1.0).abs() < 0.2, "{text}");
}

#[test]
fn identical_seeds_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\n[grid]\nn = 16\n[basis]\nn_q = 4\n[stepper]\ndt = 0.01\nt_end = 0.1\n[initial-data]\nfamily = \"random\"\namplitude = 1e-3\n[output]\ncsv = \"a.csv\"\n";
    assert_eq!(polyflow(dir.path(), cfg, &["simulate"]).status.code(), Some(0));
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(polyflow(dir.path(), cfg, &["simulate"]).status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), a);
    assert_eq!(polyflow(dir.path(), cfg, &["--seed", "4", "simulate"]).status.code(), Some(0));
    assert_ne!(std::fs::read(dir.path().join("a.csv")).unwrap(), a);
}

#[test]
fn sweeps_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\nn = 16\n[basis]\nn_q = 3\n[stepper]\ndt = 0.05\nt_end = 0.2\n[initial-data]\nfamily = \"modal\"\n[output]\ncsv = \"s.csv\"\nsnapshot_prefix = \"snap\"\n[sweep]\nkey = \"initial-data.amplitude\"\nvalues = [1e-3, 2e-3]\n";
    let out = polyflow(dir.path(), cfg, &["--jobs", "2", "simulate", "--snapshot-every", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..2 {
        assert!(dir.path().join(format!("s_{i}.csv")).is_file());
        assert!(dir.path().join(format!("snap_{i}_000004.snap")).is_file());
    }
    // a snapshot restarts a run
    let restart = format!(
        "[grid]\nn = 16\n[basis]\nn_q = 3\n[stepper]\ndt = 0.05\nt_end = 0.1\n[initial-data]\nfamily = \"snapshot\"\npath = \"{}\"\n",
        dir.path().join("snap_1_000004.snap").display()
    );
    assert_eq!(polyflow(dir.path(), &restart, &["simulate"]).status.code(), Some(0));
    let wrong = restart.replace("n_q = 3", "n_q = 4");
    assert_eq!(polyflow(dir.path(), &wrong, &["simulate"]).status.code(), Some(3));
}

#[test]
fn diagnostics_pass_on_good_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = polyflow(dir.path(), "[grid]\nn = 32\n[basis]\nn_q = 6\n[diagnostics]\nsamples = 3\n", &["cancellation-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let closure = SHEAR.replace("t_end = 1.0", "t_end = 0.2");
    let out = polyflow(dir.path(), &closure, &["closure-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("max deviation"));
    let out = polyflow(dir.path(), "[basis]\nn_q = 10\n", &["spectrum"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("poincare constant = 1.000000000000"));
}

#[test]
fn picard_guard_maps_to_its_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let base = "[grid]\nn = 32\n[basis]\nn_q = 6\n[stepper]\ndt = 2.0\nt_end = 4.0\nscheme = \"picard\"\n[initial-data]\nfamily = \"modal\"\nmode = [2]\nq_index = [2]\nweights = [0.1, 1.0, 1.0]\n";
    let small = format!("{base}amplitude = 1e-3\n");
    let out = polyflow(dir.path(), &small, &["picard-demo"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("ratios ["));
    let large = format!("{base}amplitude = 2.0\n");
    assert_eq!(polyflow(dir.path(), &large, &["picard-demo"]).status.code(), Some(7));
}

#[test]
fn usage_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(polyflow(dir.path(), "[model]\ngamma = 0.5\n", &["simulate"]).status.code(), Some(2));
    assert_eq!(polyflow(dir.path(), "[grid]\nbogus = 1\n", &["spectrum"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_polyflow"))
        .args(["--config", "/nonexistent/run.toml", "simulate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let out = Command::new(env!("CARGO_BIN_EXE_polyflow")).arg("simulate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
