use std::path::Path;
use std::process::{Command, Output};

use pfsmooth_harness::CSV_HEADER;

const SMALL: &str = r#"
[model]
kind = "lgssm"
phi = 0.9
sigma_v = 1.0
sigma_w = 1.0
observations = { simulate = { seed = 7, length = 11 } }

[algorithm]
smoother = "ffbsi_linear"
n_particles = 200

[experiment]
kind = "oracle_compare"
seeds = [4, 5, 6]
target_times = [0, 10]

[output]
csv = "small.csv"
json = "small.json"
"#;

fn pfsmooth(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pfsmooth"));
    cmd.args(args).env_remove("PFSMOOTH_OUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("PFSMOOTH_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn smooth_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = pfsmooth(&["smooth", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());

    let csv = std::fs::read_to_string(out.join("small.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r.len(), 10);
        // ffbsi runs carry their counters; the fallback count is always present
        assert!(!r[6].is_empty() && !r[7].is_empty());
        assert_eq!(r[8], "0");
        // untimed runs leave wall_ms empty
        assert!(r[9].is_empty());
        let est: f64 = r[3].parse().unwrap();
        let orc: f64 = r[4].parse().unwrap();
        let err: f64 = r[5].parse().unwrap();
        assert_eq!(est - orc, err);
    }
    assert_eq!(rows[0][0], "4");
    assert_eq!(rows[0][1], "200");

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("small.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["algorithm"]["n_particles"], 200);
    assert_eq!(json["summary"]["fallback_total"], 0);
    assert!(json["version"].is_string());
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = pfsmooth(&["smooth", "--config", &cfg, "--out", d.to_str().unwrap(), "--quiet"], None);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["small.csv", "small.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_replaces_the_first_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = pfsmooth(&["smooth", "--config", &cfg, "--seed", "99", "--quiet"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("small.csv")).unwrap();
    let seeds: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["99", "99", "5", "5", "6", "6"]);
}

#[test]
fn out_flag_beats_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (env_dir, flag_dir) = (dir.path().join("env"), dir.path().join("flag"));
    let o = pfsmooth(&["smooth", "--config", &cfg, "--quiet"], Some(&env_dir));
    assert!(o.status.success());
    assert!(env_dir.join("small.csv").exists());
    let o = pfsmooth(
        &["smooth", "--config", &cfg, "--out", flag_dir.to_str().unwrap(), "--quiet"],
        Some(&env_dir.join("unused")),
    );
    assert!(o.status.success());
    assert!(flag_dir.join("small.csv").exists());
    assert!(!env_dir.join("unused").exists());
}

#[test]
fn misspelled_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n_particles = 200", "n_particles = 200\nn_partcles = 300");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = pfsmooth(&["smooth", "--config", &cfg], Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_partcles"), "{}", stderr(&o));
}

#[test]
fn validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("seeds = [4, 5, 6]", "seeds = []"), "experiment.seeds"),
        (SMALL.replace("target_times = [0, 10]", "target_times = [0, 11]"), "experiment.target_times"),
        (SMALL.replace("sigma_v = 1.0", "sigma_v = -1.0"), "model.sigma_v"),
        (SMALL.replace("kind = \"oracle_compare\"", "kind = \"scaling\""), "experiment.sweep_n"),
    ];
    for (text, field) in cases {
        let cfg = write_config(dir.path(), "c.toml", &text);
        let o = pfsmooth(&["smooth", "--config", &cfg], Some(dir.path()));
        assert_eq!(o.status.code(), Some(1), "{field}");
        assert!(stderr(&o).contains(field), "{field}: {}", stderr(&o));
    }
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(pfsmooth(&["smooth", "--bogus"], None).status.code(), Some(1));
    assert_eq!(pfsmooth(&["smooth"], None).status.code(), Some(1));
    assert_eq!(pfsmooth(&["--help"], None).status.code(), Some(0));
}

#[test]
fn command_must_fit_the_experiment_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = pfsmooth(&["bench", "--config", &cfg], Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("experiment.kind"));
}

#[test]
fn fully_adapted_compact_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[model]
kind = "compact_rw"
kappa = 1.0
sigma_obs = 0.1
observations = { values = [0.2, 0.4] }

[algorithm]
filter = "fully_adapted"
smoother = "ffbsm"
n_particles = 50

[experiment]
kind = "oracle_compare"
seeds = [1]
"#;
    let cfg = write_config(dir.path(), "c.toml", text);
    let o = pfsmooth(&["smooth", "--config", &cfg], Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("algorithm.filter"));
}

#[test]
fn impossible_observations_are_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[model]
kind = "compact_rw"
kappa = 1.0
sigma_obs = 0.001
observations = { values = [0.5, 80.0] }

[algorithm]
smoother = "ffbsm"
n_particles = 50

[experiment]
kind = "oracle_compare"
seeds = [1]
grid_size = 64
"#;
    let cfg = write_config(dir.path(), "c.toml", text);
    let o = pfsmooth(&["smooth", "--config", &cfg], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn rb_check_rows_carry_both_values() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("length = 11", "length = 3")
        .replace("n_particles = 200", "n_particles = 3\nn_paths = 20000")
        .replace("oracle_compare", "rb_check")
        .replace("[0, 10]", "[1]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = pfsmooth(&["rb-check", "--config", &cfg, "--quiet"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("small.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (ffbsi, ffbsm, err): (f64, f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap(), f[5].parse().unwrap());
        assert_eq!(ffbsi - ffbsm, err);
        assert!(err.abs() < 0.1);
    }
}

#[test]
fn filter_and_oracle_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = pfsmooth(&["filter", "--config", &cfg, "--quiet"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("small.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    // the filter at T is the smoother at T, so both commands share the oracle there
    let filter_oracle_t: Vec<String> = csv
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(2) == Some("10"))
        .map(|l| l.split(',').nth(4).unwrap().to_string())
        .collect();

    let o = pfsmooth(&["oracle", "--config", &cfg, "--quiet"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("small.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r[3].is_empty() && !r[4].is_empty()));
    let smooth_t: f64 = rows[10][4].parse().unwrap();
    let filt_t: f64 = filter_oracle_t[0].parse().unwrap();
    assert!((smooth_t - filt_t).abs() < 1e-12);
}

#[test]
fn selftest_passes_and_catches_mutations() {
    let o = pfsmooth(&["selftest", "--quiet"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = pfsmooth(&["selftest", "--inject", "gallop-boundary"], None);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL galloping-correctness")), "{text}");
    let o = pfsmooth(&["selftest", "--inject", "sigma-plus-understated"], None);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL bound-violation")), "{text}");
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            pfsmooth_harness::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
