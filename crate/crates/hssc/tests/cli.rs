//! Spawns the real binary and checks the process-level contract: exit
//! codes, the stderr prefix, and stdout numbers that agree with the files
//! on disk. Behavior details are covered in-process by the cli module's
//! unit tests; this file only verifies what a shell script would see.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hssc");

fn hssc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hssc(args);
    assert!(
        out.status.success(),
        "hssc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stdout_value(stdout: &str, key: &str) -> f64 {
    let line = stdout
        .lines()
        .find(|l| l.starts_with(&format!("{key} ")))
        .unwrap_or_else(|| panic!("no {key} line in {stdout:?}"));
    line[key.len() + 1..].trim().parse().unwrap()
}

#[test]
fn version_and_help_exit_cleanly() {
    assert!(hssc(&["--version"]).status.success());
    assert!(hssc(&["--help"]).status.success());
    assert!(hssc(&["compress", "--help"]).status.success());
}

#[test]
fn parse_and_usage_errors_exit_with_2() {
    // clap rejects the unknown flag before our code runs.
    assert_eq!(hssc(&["synth", "--bogus"]).status.code(), Some(2));
    // A missing required flag is our own usage error.
    let out = hssc(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("hssc: "), "{err}");
    assert!(err.contains("--n"), "{err}");
}

#[test]
fn missing_and_malformed_files_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = hssc(&[
        "decompress",
        "--ckpt",
        "/nonexistent.ckpt",
        "--in",
        "/nonexistent.bit",
        "--out",
        dir.path().join("x.hssc").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let garbage = dir.path().join("garbage.bit");
    std::fs::write(&garbage, b"not a bitstream at all").unwrap();
    // Reuse a real checkpoint so the failure is the file, not the model.
    let (data, run) = trained_fixture(dir.path());
    let _ = data;
    let out = hssc(&[
        "decompress",
        "--ckpt",
        run.join("model.ckpt").to_str().unwrap(),
        "--in",
        garbage.to_str().unwrap(),
        "--out",
        dir.path().join("x.hssc").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("magic"), "{err}");
}

/// Synthesizes a 10-cube dataset and trains a two-step throwaway model
/// under `base`, returning the dataset and run directories.
fn trained_fixture(base: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = base.join("data");
    let run = base.join("run");
    ok(&[
        "synth",
        "--n",
        "10",
        "--bands",
        "2",
        "--size",
        "16",
        "--seed",
        "5",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    ok(&[
        "train",
        "--variant",
        "se",
        "--rt",
        "0.2",
        "--width-scale",
        "0.0625",
        "--steps-pretrain",
        "1",
        "--steps-gan",
        "1",
        "--batch",
        "1",
        "--seed",
        "1",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    (data, run)
}

#[test]
fn reported_bpp_matches_the_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained_fixture(dir.path());
    let ckpt = run.join("model.ckpt");
    let bit = dir.path().join("cube.bit");
    let stdout = ok(&[
        "compress",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        data.join("cube_0000.hssc").to_str().unwrap(),
        "--out",
        bit.to_str().unwrap(),
    ]);

    // Recount from the artifact alone: every byte on disk, spread over the
    // band-pixels of the 2x16x16 input.
    let disk_bits = 8 * std::fs::metadata(&bit).unwrap().len();
    let recount = disk_bits as f64 / (2.0 * 16.0 * 16.0);
    let reported = stdout_value(&stdout, "bpp");
    assert!(
        (reported - recount).abs() < 1e-9,
        "reported {reported}, recount {recount}"
    );
    assert!(stdout_value(&stdout, "psnr_db").is_finite());
    assert!(stdout.contains("\nssim "), "{stdout}");

    // The same invocation again produces the identical artifact.
    let bit2 = dir.path().join("cube2.bit");
    ok(&[
        "compress",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        data.join("cube_0000.hssc").to_str().unwrap(),
        "--out",
        bit2.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&bit).unwrap(),
        std::fs::read(&bit2).unwrap()
    );

    let recon = dir.path().join("recon.hssc");
    let stdout = ok(&[
        "decompress",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        bit.to_str().unwrap(),
        "--out",
        recon.to_str().unwrap(),
    ]);
    assert!(stdout.contains("2x16x16"), "{stdout}");

    // And the sweep over the run directory agrees with eval on the means.
    let eval_csv = dir.path().join("eval.csv");
    let eval_out = ok(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-csv",
        eval_csv.to_str().unwrap(),
    ]);
    let rd_csv = dir.path().join("rd.csv");
    ok(&[
        "rd",
        "--ckpt-dir",
        dir.path().to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-csv",
        rd_csv.to_str().unwrap(),
    ]);
    let rd_text = std::fs::read_to_string(&rd_csv).unwrap();
    let row = rd_text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "se");
    assert_eq!(fields[1], "0.2");
    let rd_bpp: f64 = fields[2].parse().unwrap();
    assert_eq!(rd_bpp, stdout_value(&eval_out, "bpp"));
}
