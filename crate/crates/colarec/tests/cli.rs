//! End-to-end tests of the command-line binary: stage chaining on a tiny
//! synthetic dataset, output formats, and single-line failure modes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_colarec"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn colarec")
}

fn assert_ok(out: &Output) -> (String, String) {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "stdout:\n{stdout}\nstderr:\n{stderr}");
    (stdout, stderr)
}

/// Flags for a model small enough to train in a blink.
const TINY: &[&str] = &[
    "--model-dim",
    "8",
    "--n-heads",
    "2",
    "--enc-layers",
    "1",
    "--dec-layers",
    "1",
    "--epochs",
    "1",
    "--patience",
    "1",
    "--items-per-user",
    "3",
    "--max-len",
    "48",
    "--eval-beam",
    "4",
    "--cutoffs",
    "1,5",
    "--beam",
    "8",
    "--repeats",
    "1",
];

fn make_fixture(dir: &Path) -> (String, String) {
    let out = run(bin()
        .args(["make-synthetic", "--n-users", "20", "--n-items", "16"])
        .args(["--out", dir.join("raw").to_str().unwrap()]));
    assert_ok(&out);
    (
        dir.join("raw/records.tsv").to_str().unwrap().to_string(),
        dir.join("raw/content.tsv").to_str().unwrap().to_string(),
    )
}

fn prepare_and_build(dir: &Path, run_dir: &str, gid_args: &[&str]) {
    let (records, content) = make_fixture(dir);
    let out = run(bin()
        .args(["prepare", "--run", run_dir])
        .args(["--records", &records, "--content", &content]));
    assert_ok(&out);
    let out = run(bin().args(["build-gid", "--run", run_dir]).args(gid_args));
    assert_ok(&out);
}

#[test]
fn pipeline_smoke_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let run_dir = run_dir.to_str().unwrap();
    prepare_and_build(
        tmp.path(),
        run_dir,
        &["--strategy", "random", "--gid-k", "4", "--gid-l", "2"],
    );

    let out = run(bin().args(["train", "--run", run_dir]).args(TINY));
    let (_, stderr) = assert_ok(&out);
    assert!(stderr.contains("trained 1 epochs"), "{stderr}");

    let out = run(bin()
        .args(["recommend", "--run", run_dir, "--user", "u0", "--topn", "3"])
        .args(TINY)
        .env("COLAREC_THREADS", "2"));
    let (stdout, _) = assert_ok(&out);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "rank\titem_index\tlog_score");
    assert_eq!(lines.len(), 4);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "bad row {line:?}");
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1].parse::<usize>().is_ok());
        let score: f64 = fields[2].parse().unwrap();
        assert!(score <= 0.0, "log score {score}");
    }

    let out = run(bin().args(["evaluate", "--run", run_dir]).args(TINY));
    let (stdout, _) = assert_ok(&out);
    assert!(stdout.starts_with("# config_hash="), "{stdout}");
    assert!(stdout.contains("segment\tn\trecall\tndcg\tusers"));
    let report = std::fs::read_to_string(tmp.path().join("run/report.tsv")).unwrap();
    assert_eq!(report, stdout);
}

#[test]
fn collaborative_identifiers_before_pretraining_fail_with_the_checkpoint_path() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let run_dir = run_dir.to_str().unwrap();
    let (records, content) = make_fixture(tmp.path());
    let out = run(bin()
        .args(["prepare", "--run", run_dir])
        .args(["--records", &records, "--content", &content]));
    assert_ok(&out);

    let out = run(bin().args(["build-gid", "--run", run_dir, "--strategy", "collaborative"]));
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let error_lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(error_lines.len(), 1, "{stderr}");
    assert!(error_lines[0].contains("cf.ckpt"), "{stderr}");
    assert!(error_lines[0].contains("pretrain-cf"), "{stderr}");
}

#[test]
fn gid_length_sweep_emits_one_row_per_requested_value() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let run_dir = run_dir.to_str().unwrap();
    prepare_and_build(
        tmp.path(),
        run_dir,
        &["--strategy", "random", "--gid-k", "16", "--gid-l", "2"],
    );

    let out = run(bin()
        .args(["sweep", "--run", run_dir, "--axis", "gid-length", "--values", "1,2"])
        .args(TINY));
    let (stdout, _) = assert_ok(&out);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "# axis=gid-length");
    assert!(lines[1].starts_with("config\tusers\trecall@1"));
    assert!(lines[2].starts_with("l=1\t"));
    assert!(lines[3].starts_with("l=2\t"));
    assert_eq!(lines.len(), 4);
}

#[test]
fn unknown_config_keys_fail_naming_the_file_and_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("bad.cfg");
    std::fs::write(&cfg_path, "not-a-key = 3\n").unwrap();
    let out = run(bin()
        .args(["train", "--run", "nowhere"])
        .args(["--config", cfg_path.to_str().unwrap()]));
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.cfg:1"), "{stderr}");
    assert!(stderr.contains("not-a-key"), "{stderr}");
}

#[test]
fn invalid_thread_cap_is_rejected() {
    let out = run(bin()
        .args(["make-synthetic", "--out", "/tmp/unused-by-thread-test"])
        .env("COLAREC_THREADS", "0"));
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("COLAREC_THREADS"), "{stderr}");
}
