use std::fs;
use std::process::Command;

const SMALL: &str = r#"
trials = 2
snr_db = [0.0]
variants = ["proposed-2d-markov", "subarray-omp"]
record_timing = false

[array]
m_x = 16
m_z = 4
k_x = 4
k_z = 2

[grid]
m1 = 8
m2 = 4
n_r = 3

[algorithm]
outer_iters = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xlmimo-vr"))
}

#[test]
fn run_writes_results_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let st = bin().arg("run").arg(&cfg).arg("--out").arg(&out).arg("--threads").arg("1").output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        assert!(dir.path().join(name.replace(".csv", ".summary.csv")).exists());
        assert!(dir.path().join(name.replace(".csv", ".traces.csv")).exists());
        outputs.push(fs::read_to_string(&out).unwrap());
    }
    let rows: Vec<&str> = outputs[0].lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 2 * 2);
    assert!(rows[0].starts_with("variant,snr_db,trial,seed"));
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_replaces_snr_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("s.csv");
    let st = bin()
        .args(["sweep", cfg.to_str().unwrap(), "--snr", "-5,5", "--variant", "subarray-omp", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("subarray-omp,")).count(), 4);
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "trials = 1\nunknown_key = 3\n").unwrap();
    let st = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("error"));

    let st = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn inspect_prints_scene_and_observation() {
    let st = bin().args(["inspect", "--trial", "1", "--snr", "-4"]).output().unwrap();
    assert!(st.status.success());
    let text = String::from_utf8_lossy(&st.stdout);
    assert!(text.contains("\"paths\"") && text.contains("\"noise_precision\""));
}

#[test]
fn oracle_checks_pass() {
    let st = bin().arg("oracle").output().unwrap();
    let text = String::from_utf8_lossy(&st.stdout);
    assert!(st.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
