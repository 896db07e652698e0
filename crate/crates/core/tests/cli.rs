use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedquad::report::{parse_results_csv, RESULTS_HEADER, SUMMARY_HEADER};

fn fedquad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedquad"))
        .args(args)
        .env_remove("FEDQUAD_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.cfg");
    let text = format!(
        "\
seed = 3
dataset.classes = 3
dataset.dim = 4
dataset.per_class = 40
dataset.std = 0.5
dataset.separation = 2
partition.mode = dirichlet
partition.alpha = 0.5
federation.clients = 4
federation.rounds = 3
federation.local_epochs = 2
federation.batch_size = 8
federation.untrainable = ce_fallback
model.hidden = 16
model.embedding_dim = 8
output.dir = {}
{extra}",
        dir.join("run").display()
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_writes_600_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = fedquad(&[
            "generate",
            "--classes",
            "3",
            "--dim",
            "8",
            "--per-class",
            "200",
            "--std",
            "0.3",
            "--seed",
            "7",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let text = fs::read_to_string(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "label,f0,f1,f2,f3,f4,f5,f6,f7");
    assert_eq!(lines.count(), 600);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn invalid_generate_flags_exit_with_config_code() {
    for args in [
        &[
            "generate",
            "--classes",
            "1",
            "--dim",
            "8",
            "--per-class",
            "10",
            "--std",
            "0.3",
        ][..],
        &[
            "generate",
            "--classes",
            "3",
            "--dim",
            "8",
            "--per-class",
            "10",
            "--std",
            "0",
        ],
        &[
            "generate",
            "--classes",
            "3",
            "--dim",
            "8",
            "--per-class",
            "10",
            "--std",
            "-1",
        ],
        &["generate", "--classes", "3", "--dim", "8", "--std", "0.3"],
        &[
            "generate",
            "--classes",
            "3",
            "--dim",
            "8",
            "--per-class",
            "10",
            "--std",
            "0.3",
            "--bogus",
        ],
    ] {
        let out = fedquad(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!stderr(&out).is_empty(), "{args:?}");
    }
}

#[test]
fn partition_writes_a_covering_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let manifest = dir.path().join("p.csv");
    let out = fedquad(&[
        "generate",
        "--classes",
        "3",
        "--dim",
        "2",
        "--per-class",
        "30",
        "--std",
        "0.3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = fedquad(&[
        "partition",
        "--data",
        data.to_str().unwrap(),
        "--clients",
        "5",
        "--mode",
        "dirichlet",
        "--alpha",
        "0.3",
        "--min-samples",
        "2",
        "--seed",
        "1",
        "--out",
        manifest.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.starts_with("client_id,row_index\n"));
    let mut rows: Vec<usize> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    rows.sort_unstable();
    assert_eq!(rows, (0..90).collect::<Vec<_>>());

    let out = fedquad(&[
        "partition",
        "--data",
        data.to_str().unwrap(),
        "--clients",
        "5",
        "--alpha",
        "0.3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_outputs_and_manifest_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = fedquad(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));

    let run = dir.path().join("run");
    for f in [
        "results.csv",
        "run_manifest.cfg",
        "partitions.csv",
        "final_model.ckpt",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let results = fs::read_to_string(run.join("results.csv")).unwrap();
    assert!(results.starts_with(RESULTS_HEADER));
    assert_eq!(parse_results_csv(&results).unwrap().len(), 3);

    // the manifest lists every key, defaults included
    let manifest = fs::read_to_string(run.join("run_manifest.cfg")).unwrap();
    for key in [
        "optimizer.beta2 = 0.999",
        "loss.margin2 = 0.5",
        "metrics.sample_cap = 50000",
    ] {
        assert!(manifest.contains(key), "{key} missing from manifest");
    }

    let rerun = dir.path().join("rerun");
    let out = fedquad(&[
        "run",
        "--config",
        run.join("run_manifest.cfg").to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(run.join("results.csv")).unwrap(),
        fs::read(rerun.join("results.csv")).unwrap()
    );
    assert_eq!(
        fs::read(run.join("final_model.ckpt")).unwrap(),
        fs::read(rerun.join("final_model.ckpt")).unwrap()
    );
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = Command::new(env!("CARGO_BIN_EXE_fedquad"))
            .args(["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()])
            .env("FEDQUAD_WORKERS", workers)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let out = Command::new(env!("CARGO_BIN_EXE_fedquad"))
        .args(["run", "--config", &cfg])
        .env("FEDQUAD_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(fedquad(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    assert!(fedquad(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "2",
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    assert_ne!(
        fs::read(a.join("results.csv")).unwrap(),
        fs::read(b.join("results.csv")).unwrap()
    );
    assert!(fs::read_to_string(b.join("run_manifest.cfg"))
        .unwrap()
        .starts_with("seed = 2\n"));
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = small_config(dir.path(), "loss.margin1 = -1\n");
    let out = fedquad(&["run", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("margin"));

    let missing = dir.path().join("nope.cfg");
    let out = fedquad(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nope.cfg"));

    // two classes can never form a quadruplet, so every client is skipped
    let two_class = dir.path().join("two.cfg");
    fs::write(
        &two_class,
        "dataset.classes = 2\ndataset.dim = 2\ndataset.per_class = 20\nfederation.clients = 2\nfederation.rounds = 1\n",
    )
    .unwrap();
    let out = fedquad(&[
        "run",
        "--config",
        two_class.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn compare_copies_final_round_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let quad = dir.path().join("quad");
    let ce = dir.path().join("ce");
    assert!(
        fedquad(&["run", "--config", &cfg, "--out", quad.to_str().unwrap()])
            .status
            .success()
    );
    let ce_cfg = small_config(dir.path(), "loss.variant = ce_only\nloss.beta = 0\n");
    assert!(
        fedquad(&["run", "--config", &ce_cfg, "--out", ce.to_str().unwrap()])
            .status
            .success()
    );

    let summary_path = dir.path().join("summary.csv");
    let out = fedquad(&[
        "compare",
        quad.to_str().unwrap(),
        ce.join("results.csv").to_str().unwrap(),
        "--out",
        summary_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(&summary_path).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines.len(), 3);

    for (line, run, method) in [(lines[1], &quad, "fedquad"), (lines[2], &ce, "ce_only")] {
        let rows =
            parse_results_csv(&fs::read_to_string(run.join("results.csv")).unwrap()).unwrap();
        let last = rows.last().unwrap();
        let expected = format!(
            "{method},dirichlet,0.5,{},{}",
            last.accuracy(),
            last.ratio()
        );
        assert_eq!(line, expected);
    }

    let gone = dir.path().join("gone");
    let out = fedquad(&["compare", quad.to_str().unwrap(), gone.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("gone"));

    let out = fedquad(&["compare", quad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let junk = dir.path().join("junk");
    fs::create_dir(&junk).unwrap();
    fs::write(junk.join("results.csv"), "a,b,c\n1,2,3\n").unwrap();
    let out = fedquad(&["compare", quad.to_str().unwrap(), junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("schema"));
}
