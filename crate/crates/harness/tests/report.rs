use pfsmooth_harness::{emit_report, ExperimentConfig, OutputPaths, Row, RunReport, Summary, CSV_HEADER};

const CFG: &str = r#"
[model]
kind = "discrete"
trans = [[0.9, 0.1], [0.2, 0.8]]
init = [0.5, 0.5]
means = [0.0, 1.0]
emission_sd = 0.8
observations = { values = [0.1, 0.9, 1.2] }

[algorithm]
smoother = "ffbsm"
n_particles = 100

[experiment]
kind = "oracle_compare"
seeds = [1]
"#;

fn report(rows: Vec<Row>) -> RunReport {
    RunReport {
        version: "0",
        command: "smooth".into(),
        config: ExperimentConfig::from_toml(CFG).unwrap(),
        rows,
        summary: Summary::default(),
    }
}

#[test]
fn empty_report_is_header_only() {
    assert_eq!(report(Vec::new()).csv(), format!("{CSV_HEADER}\n"));
}

#[test]
fn numbers_keep_seventeen_significant_digits() {
    let x = 0.1f64 + 0.2;
    let r = report(vec![Row {
        seed: 3,
        sweep_value: 100,
        time_index: 2,
        estimate: Some(x),
        oracle: Some(1.0 / 3.0),
        error: Some(x - 1.0 / 3.0),
        ar_trials: Some(12),
        elementary_ops: Some(40),
        fallback_count: Some(0),
        wall_ms: None,
    }]);
    let csv = r.csv();
    let line = csv.lines().nth(1).unwrap();
    assert_eq!(line, "3,100,2,3.0000000000000004e-1,3.3333333333333331e-1,-3.3333333333333270e-2,12,40,0,");
    let back: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(back, x);
}

#[test]
fn config_round_trips_through_the_json_echo() {
    let cfg = ExperimentConfig::from_toml(CFG).unwrap();
    let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let paths = OutputPaths {
        csv: blocker.join("r.csv"),
        json: blocker.join("r.json"),
    };
    let e = emit_report(&report(Vec::new()), &paths).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}
