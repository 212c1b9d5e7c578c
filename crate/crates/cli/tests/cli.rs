use std::fs;
use std::path::Path;
use std::process::Command;

fn hvacft(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hvacft")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const TINY: &str = r#"
zones = 1
[onoff]
log_steps = 120
heldout_steps = 60
[predictor]
hidden = [8, 8, 8]
epochs = 1
[selector]
conv_channels = [2]
dense = [8]
epochs = 1
[mal]
sizes = [60]
"#;

#[test]
fn collect_onoff_writes_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = hvacft(&["collect-onoff", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("collect-onoff/onoff_log.csv").exists());
    let manifest = fs::read_to_string(out.join("collect-onoff/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));
    assert!(manifest.contains("config_sha256"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zones = 3\n");
    assert_eq!(hvacft(&["collect-onoff", "--config", &cfg]).status.code(), Some(2));
    let cfg = write_config(dir.path(), TINY);
    assert_eq!(hvacft(&["no-such-recipe", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn missing_prerequisite_names_the_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = hvacft(&["train-predictor", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run the `collect-onoff` recipe first"));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{TINY}\n[dqn]\nhidden = [8]\nlr = 1000.0\nreward_scale = 1e9\ndivergence_bound = 1000.0\nepisodes = 1\nepisode_days = 2\nlearning_starts = 40\n"
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = hvacft(&["train-dqn", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
