use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contractive"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

const TINY: &str = "latent_dim=4\nimplicit_dim=3\ncoupling_layers=2\ncoupling_width=8\nhorizon=10\nmetric=mse\nlog_every=5\n";

/// Generates a sine dataset and trains a tiny model on it.
fn trained(dir: &Path) {
    ok(
        dir,
        &[
            "gen-data", "--kind", "sine", "--M", "3", "--H", "40", "--seed", "2", "--out", "d.csv",
        ],
    );
    std::fs::write(dir.join("c.kv"), TINY).unwrap();
    ok(
        dir,
        &[
            "train", "--data", "d.csv", "--config", "c.kv", "--out", "m.ckpt", "--epochs", "10",
            "--seed", "1",
        ],
    );
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Usage"));
    assert_eq!(run(dir.path(), &["bound", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["eval", "--nope"]).status.code(), Some(1));
    assert_eq!(
        run(
            dir.path(),
            &["gen-data", "--kind", "spiral", "--out", "x.csv"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn term_two_calculator() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &[
            "bound", "--alpha", "1", "--R", "1", "--gamma", "1", "--H", "10", "--M", "1",
        ],
    );
    let v: f64 = out
        .trim()
        .strip_prefix("term_two ")
        .unwrap()
        .parse()
        .unwrap();
    let series: f64 = (0..10).map(|i| (-0.2 * i as f64).exp()).sum::<f64>() / 10.0;
    assert!((v - series).abs() <= 1e-6, "{out}");
}

#[test]
fn pipeline_writes_log_rollouts_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let log = std::fs::read_to_string(d.join("m.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.starts_with("{\"epoch\":")));

    ok(
        d,
        &[
            "rollout",
            "--ckpt",
            "m.ckpt",
            "--from-data",
            "d.csv",
            "--out",
            "r.csv",
        ],
    );
    let r = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(r.starts_with("demo_id,t,y0,y1\n"));
    assert_eq!(r.lines().count(), 1 + 3 * 10);
    let single = ok(d, &["rollout", "--ckpt", "m.ckpt", "--y0", "-0.9,0.5"]);
    let first: Vec<f64> = single
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(2)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((first[0] + 0.9).abs() < 1e-8 && (first[1] - 0.5).abs() < 1e-8);

    let e1 = ok(
        d,
        &[
            "eval",
            "--ckpt",
            "m.ckpt",
            "--data",
            "d.csv",
            "--samples",
            "8",
            "--seed",
            "3",
            "--trajectories",
            "t",
        ],
    );
    let e2 = ok(
        d,
        &[
            "eval",
            "--ckpt",
            "m.ckpt",
            "--data",
            "d.csv",
            "--samples",
            "8",
            "--seed",
            "3",
        ],
    );
    assert_eq!(
        e1.lines().take(3).collect::<Vec<_>>(),
        e2.lines().collect::<Vec<_>>()
    );
    assert!(d.join("t.oos.csv").exists() && d.join("t.in_sample.csv").exists());

    let zero = ok(
        d,
        &[
            "eval",
            "--ckpt",
            "m.ckpt",
            "--data",
            "d.csv",
            "--oos-radius-scale",
            "0",
        ],
    );
    let rows: Vec<&str> = zero.lines().collect();
    assert_eq!(
        rows[1].trim_start_matches("in-sample"),
        rows[2].trim_start_matches("oos      ")
    );

    let b = ok(
        d,
        &[
            "bound",
            "--ckpt",
            "m.ckpt",
            "--data",
            "d.csv",
            "--samples",
            "30",
            "--seed",
            "4",
        ],
    );
    assert!(b.contains("violations       0/30"), "{b}");
}

#[test]
fn training_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    std::fs::rename(d.join("m.ckpt"), d.join("first.ckpt")).unwrap();
    ok(
        d,
        &[
            "train", "--data", "d.csv", "--config", "c.kv", "--out", "m.ckpt", "--epochs", "10",
            "--seed", "1",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("first.ckpt")).unwrap(),
        std::fs::read(d.join("m.ckpt")).unwrap()
    );
}

#[test]
fn dimension_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &[
            "gen-data", "--kind", "line", "--dim", "3", "--out", "d3.csv",
        ],
    );
    assert_eq!(
        run(d, &["eval", "--ckpt", "m.ckpt", "--data", "d3.csv"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(d, &["rollout", "--ckpt", "m.ckpt", "--y0", "1,2,3"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn missing_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["rollout", "--ckpt", "none.ckpt", "--y0", "1,2"]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn verify_detects_broken_lmi() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["verify", "--break-lmi"]);
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FAIL lmi")), "{text}");
}
