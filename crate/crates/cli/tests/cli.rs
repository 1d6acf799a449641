use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn conelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conelab")).args(args).env_remove("CONELAB_OUT_DIR").output().expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("report is JSON")
}

fn read_json(path: &Path) -> Value {
    json(&std::fs::read(path).unwrap())
}

#[test]
fn cone_report_carries_the_opening_angle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cone7.json");
    let run = conelab(&["cone", "--dim", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    let report = read_json(&out);
    assert_eq!(report["schema"], 1);
    assert_eq!(report["tool"], "conelab");
    assert_eq!(report["config"]["dim"], "7");
    assert!(report["wall_clock_s"].as_f64().is_some());
    let sin = report["result"]["cone"]["sin_theta0"].as_f64().unwrap();
    assert!((sin - 0.517331).abs() < 5e-6, "{sin}");
}

#[test]
fn dimension_two_is_a_usage_error() {
    let run = conelab(&["cone", "--dim", "2"]);
    assert_eq!(run.status.code(), Some(64));
    let report = json(&run.stdout);
    assert_eq!(report["status"], "error");
    assert_eq!(report["error"]["exit_code"], 64);
}

#[test]
fn cone_check_passes_every_invariant() {
    let run = conelab(&["cone", "--dim", "7", "--check"]);
    assert_eq!(run.status.code(), Some(0));
    let report = json(&run.stdout);
    let checks = report["result"]["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert_eq!(report["tolerances"].as_object().unwrap().len(), checks.len());
}

#[test]
fn spectrum_counts_negative_modes_with_multiplicity() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("spec.csv");
    let run = conelab(&["spectrum", "--dim", "7", "--ell-max", "4", "--csv", csv.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    let report = json(&run.stdout);
    assert_eq!(report["result"]["index"], 7);
    assert_eq!(report["result"]["kernel_dim"], 6);

    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ell,parity,multiplicity,eigenvalue,classification,closed_form,residual"));
    let negatives: u64 = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[4] == "negative")
        .map(|f| f[2].parse::<u64>().unwrap())
        .sum();
    assert_eq!(negatives, 7);
}

#[test]
fn decay_holder_summary_matches_closed_form() {
    let run = conelab(&["decay", "--gamma", "0", "--eps", "0.05", "--dim", "7"]);
    assert_eq!(run.status.code(), Some(0));
    let report = json(&run.stdout);
    let holder = &report["result"]["holder"];
    let predicted = 7.0 * 0.05 / 0.95;
    assert!((holder["predicted"].as_f64().unwrap() - predicted).abs() < 1e-15);
    assert!((holder["fitted"].as_f64().unwrap() - predicted).abs() < 1e-6 * predicted);
    assert_eq!(report["result"]["modulus"]["branch"], "holder");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "dim = 7\ncolour = blue\n").unwrap();
    let run = conelab(&["cone", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(64));
    let report = json(&run.stdout);
    assert!(report["error"]["message"].as_str().unwrap().contains("colour"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# decay run\neps = 0.2\ngamma = 0\ndim = 9\n").unwrap();
    let run = conelab(&["decay", "--config", cfg.to_str().unwrap(), "--dim", "7"]);
    assert_eq!(run.status.code(), Some(0));
    let report = json(&run.stdout);
    assert_eq!(report["config"]["dim"], "7");
    assert_eq!(report["config"]["eps"], "0.2");
    assert_eq!(report["result"]["input"]["d"], 7);
}

#[test]
fn bad_flag_is_a_usage_error() {
    let run = conelab(&["spectrum", "--dimension", "7"]);
    assert_eq!(run.status.code(), Some(64));
    assert_eq!(json(&run.stdout)["error"]["kind"], "usage");
    assert_eq!(conelab(&["--help"]).status.code(), Some(0));
}

#[test]
fn reproducible_reports_are_byte_identical() {
    let args = ["epi", "--dim", "7", "--samples", "2", "--seed", "5", "--jobs", "2", "--reproducible"];
    let first = conelab(&args);
    let second = conelab(&args);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    assert!(!String::from_utf8_lossy(&first.stdout).contains("wall_clock_s"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_conelab"))
        .args(["flow", "--energy", "quartic", "--start", "0.4"])
        .env("CONELAB_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert!(run.stdout.is_empty());
    let report = read_json(&dir.path().join("flow.json"));
    let gamma = report["result"]["lojasiewicz"]["gamma"].as_f64().unwrap();
    assert!((gamma - 0.25).abs() < 0.03);
}

#[test]
fn failed_certificate_exits_one() {
    let run = conelab(&["integrability", "--dim", "7", "--certify-d7"]);
    assert_eq!(run.status.code(), Some(1));
    let report = json(&run.stdout);
    assert_eq!(report["status"], "fail");
    assert_eq!(report["result"]["dimensions"][0]["verdict"]["integrable"], true);
    assert_eq!(report["result"]["certificate"]["passed"], false);
    assert!(String::from_utf8_lossy(&run.stderr).contains("FAIL"));
}

#[test]
fn epi_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    std::fs::write(
        &scenario,
        r#"{"dim": 7, "traces": [{"kappa": 0.98, "band_shift": [0.01, -0.005], "high_modes": [[3, 0.01]]}]}"#,
    )
    .unwrap();
    let run = conelab(&["epi", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    let report = json(&run.stdout);
    assert_eq!(report["result"]["count"], 1);
    assert!(report["result"]["worst_epsilon_hat"].as_f64().unwrap() >= 1e-4);

    std::fs::write(&scenario, r#"{"dim": 7, "traces": [{"kappa": 0.5, "band_shift": [0, 0], "high_modes": []}]}"#)
        .unwrap();
    assert_eq!(conelab(&["epi", "--scenario", scenario.to_str().unwrap()]).status.code(), Some(64));
}
