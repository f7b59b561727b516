use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimo-detect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn missing_config_is_a_validation_error_naming_the_file() {
    let out = cli(&["sweep", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("missing.json"), "{}", text(&out.stderr));
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = cli(&["sweep", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"), "{}", text(&out.stderr));
}

#[test]
fn help_exits_0() {
    let out = cli(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for sub in ["gen-channels", "train", "train-online", "eval", "sweep", "bench", "gradcheck"] {
        assert!(text(&out.stdout).contains(sub), "help lacks {sub}");
    }
}

#[test]
fn gradcheck_fsnet_passes() {
    let out = cli(&["gradcheck", "--family", "fsnet", "--K", "4", "--N", "8", "--L", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let err: f64 = stdout
        .split("max relative error ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("reports the max relative error");
    assert!(err < 1e-5);
}

#[test]
fn gradcheck_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = cli(&[
        "gradcheck", "--family", "mmnet-iid", "--K", "2", "--N", "4", "--L", "2", "--seed", "3", "--out",
        path_str(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["family"], "mmnet_iid");
}

#[test]
fn missing_required_flags_exit_1() {
    let out = cli(&["train", "--family", "fsnet"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("--K"));
    let out = cli(&["bench"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_contents_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, r#"{"detector": {"kind": "lmmse"}, "K": 2, "N": 4, "alphabet": "qpsk", "snr_grid_db": [5, 1], "max_trials": 10}"#).unwrap();
    let out = cli(&["sweep", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("increasing"));
}

#[test]
fn detector_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    // More users than antennas leaves HᵀH singular, which OAMP-Net2 cannot
    // handle without noise.
    fs::write(
        &cfg,
        r#"{"detector": {"kind": "untrained", "family": "oampnet2", "layers": 2}, "K": 4, "N": 2,
            "alphabet": "qpsk", "snr_grid_db": ["inf"], "max_trials": 10}"#,
    )
    .unwrap();
    let out = cli(&["sweep", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn sweep_writes_csv_with_one_line_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    let csv = dir.path().join("ser.csv");
    fs::write(
        &cfg,
        r#"{"detector": {"kind": "lmmse"}, "K": 2, "N": 4, "alphabet": "qpsk",
            "snr_grid_db": [0, 5, 10], "min_errors": 20, "max_trials": 2000, "seed": 1}"#,
    )
    .unwrap();
    let out = cli(&["sweep", "--config", path_str(&cfg), "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().count(), 4);
    assert!(body.starts_with("snr_db,trials,errors,ser,lo95,hi95"));

    let again = dir.path().join("again.csv");
    cli(&["sweep", "--config", path_str(&cfg), "--out", path_str(&again)]);
    assert_eq!(fs::read_to_string(again).unwrap(), body);
}

#[test]
fn eval_prints_a_single_point() {
    let out = cli(&[
        "eval", "--detector", "zf", "--K", "2", "--N", "4", "--alphabet", "qpsk", "--snr", "10", "--max-trials", "500",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 2);
}

#[test]
fn channel_file_train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let channels = dir.path().join("channels.json");
    let out = cli(&[
        "gen-channels", "--K", "2", "--N", "4", "--count", "3", "--rho", "0.5", "--seed", "9", "--out",
        path_str(&channels),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let file: serde_json::Value = serde_json::from_str(&fs::read_to_string(&channels).unwrap()).unwrap();
    assert_eq!(file["count"], 3);

    let online = dir.path().join("mmnet.json");
    let out = cli(&[
        "train-online", "--channels", path_str(&channels), "--index", "2", "--L", "2", "--alphabet", "qpsk", "--snr", "10",
        "--epochs", "5", "--out", path_str(&online),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(online.exists());
    let out = cli(&["train-online", "--channels", path_str(&channels), "--index", "7", "--L", "2", "--alphabet", "qpsk", "--snr", "10"]);
    assert_eq!(out.status.code(), Some(1));

    let model = dir.path().join("fsnet.json");
    let curve = dir.path().join("curve.csv");
    let out = cli(&[
        "train", "--family", "fsnet", "--K", "2", "--N", "4", "--L", "2", "--alphabet", "qpsk", "--snr-min", "0",
        "--snr-max", "10", "--iterations", "3", "--out", path_str(&model), "--curve", path_str(&curve),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(fs::read_to_string(&curve).unwrap().lines().count(), 4);

    let out = cli(&[
        "eval", "--model", path_str(&model), "--K", "2", "--N", "4", "--alphabet", "qpsk", "--snr", "10", "--max-trials",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let out = cli(&[
        "eval", "--model", path_str(&model), "--K", "3", "--N", "4", "--alphabet", "qpsk", "--snr", "10", "--max-trials",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_preset_emits_runtime_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("table.csv");
    let out = cli(&["bench", "--preset", "table1-qpsk", "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(
        lines[0],
        "alphabet,LMMSE,FS-Net,MMNet-iid,OAMP-Net2,DetNet,SD,MMNet-10,MMNet-100,MMNet-500"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("qpsk,"));
    assert!(lines[1].split(',').skip(1).all(|v| v.parse::<f64>().map_or(false, |t| t > 0.0)));
}
