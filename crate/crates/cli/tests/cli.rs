use std::path::Path;
use std::process::{Command, Output};

use mandala::cifar;

fn mandala(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mandala"))
        .args(args)
        .env_remove("CIFAR10_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_fast_passes() {
    let o = mandala(&["--threads", "2", "verify", "--level", "fast"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 15);
    assert!(!text.contains("FAIL"));
}

#[test]
fn usage_and_input_errors_exit_3() {
    assert_eq!(mandala(&["distmat"]).status.code(), Some(3));
    assert_eq!(mandala(&["pipeline", "--s", "2"]).status.code(), Some(3));

    let empty = tempfile::tempdir().unwrap();
    let o = mandala(&["pipeline", "--data-dir", arg(empty.path()), "--out-dir", arg(&empty.path().join("out"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data_batch_1.bin"));

    assert_eq!(mandala(&["--help"]).status.code(), Some(0));
}

#[test]
fn dataset_reports_layout_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    cifar::write_synthetic_dataset(dir.path(), 2, 5).unwrap();
    let o = mandala(&["dataset", "--data-dir", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains(cifar::TARBALL_MD5));
    assert!(text.contains("data_batch_5.bin"));
}

#[test]
fn staged_commands_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cifar::write_synthetic_dataset(&data, 4, 11).unwrap();
    let work = dir.path().join("staged");

    for (class, stem) in [("0", "airplane"), ("5", "dog")] {
        let o = mandala(&[
            "estimate", "--data-dir", arg(&data), "--class", class, "--ridge", "0.5",
            "--out", arg(&work.join(stem)),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = mandala(&[
        "distmat", "--p", arg(&work.join("airplane.json")), "--q", arg(&work.join("dog.json")),
        "--kind", "chernoff", "--s", "0.3", "--out", arg(&work.join("d")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("relative residual"));

    let o = mandala(&["accumulate", "--distance", arg(&work.join("d.json")), "--out", arg(&work.join("phi"))]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["phi.json", "phi.f64", "phi.pgm", "phi.ppm"] {
        assert!(work.join(f).is_file(), "{f}");
    }

    let o = mandala(&[
        "cluster", "--distance", arg(&work.join("d.json")), "--accumulation", arg(&work.join("phi.json")),
        "--k", "3,10", "--out-dir", arg(&work.join("clusters")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["dendrogram.json", "labels_k3.pgm", "labels_k3.legend.json", "labels_k10.ppm"] {
        assert!(work.join("clusters").join(f).is_file(), "{f}");
    }

    let o = mandala(&["render", "--accumulation", arg(&work.join("phi.json")), "--out", arg(&work.join("heat.ppm"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(work.join("heat.pgm").is_file());

    let out = dir.path().join("out");
    let o = mandala(&[
        "pipeline", "--data-dir", arg(&data), "--classes", "0,5", "--kind", "chernoff", "--s", "0.3",
        "--ridge", "0.5", "--out-dir", arg(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("airplane-dog_chernoff");
    let read = |p: std::path::PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(run.join("distance.f64")), read(work.join("d.f64")));
    assert_eq!(read(run.join("accumulation.f64")), read(work.join("phi.f64")));
    assert_eq!(read(run.join("dendrogram.json")), read(work.join("clusters/dendrogram.json")));
    assert_eq!(read(run.join("labels_k10.pgm")), read(work.join("clusters/labels_k10.pgm")));

    let manifest: serde_json::Value = serde_json::from_slice(&read(run.join("manifest.json"))).unwrap();
    for key in ["variant", "ridge", "symmetrizeMode", "grayMode"] {
        assert!(manifest["settings"].get(key).is_some(), "{key}");
    }
}
