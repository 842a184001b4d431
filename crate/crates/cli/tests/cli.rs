use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use orchardseg::config::CONFIG_ENV;
use orchardseg::datasetio::{self, read_checkpoint, read_manifest, MANIFEST_FILE};
use orchardseg::eval::{read_comparison_csv, Metric, MetricsTable};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_orchardseg"));
    cmd.env_remove(CONFIG_ENV);
    cmd
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root` with its contents, in a stable order.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn tiny_gen(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "gen",
        "--out",
        s(out),
        "--train",
        "4",
        "--val",
        "2",
        "--test",
        "2",
        "--size",
        "32",
    ];
    args.extend_from_slice(extra);
    run(&args);
}

#[test]
fn generation_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    tiny_gen(&a, &["--seed", "5"]);
    tiny_gen(&b, &["--seed", "5", "--threads", "1"]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 2 + 8 * 12, "manifest, config and twelve files per sample");
    assert!(ta == tb, "outputs differ");
    let c = dir.path().join("c");
    tiny_gen(&c, &["--seed", "6"]);
    assert!(tree(&c) != ta);
}

#[test]
fn zero_count_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    run(&["gen", "--out", s(dir.path()), "--count", "0"]);
    assert!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap().is_empty());
    assert!(!dir.path().join("samples").exists());
}

#[test]
fn flow_of_identical_frames_is_still_and_white() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run(&["gen", "--out", s(&data), "--count", "1", "--size", "32"]);
    let frame = data.join("samples/000000/rgb_a.ppm");
    let out = dir.path().join("still/flow.flo");
    run(&["flow", s(&frame), s(&frame), "--out", s(&out)]);
    let flow = datasetio::read_flo(&out).unwrap();
    assert_eq!(flow.valid_count(), 32 * 32);
    assert!(flow.u().iter().chain(flow.v()).all(|c| c.abs() < 1e-3));
    let color = datasetio::read_image(&out.with_extension("ppm")).unwrap();
    assert!(color.data().iter().all(|&c| c == 1.0));
    assert!(out.with_extension("toml").is_file(), "settings are recorded");
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ppm");
    let out = bin()
        .args(["flow", s(&missing), s(&missing), "--out", s(&dir.path().join("f.flo"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.ppm"), "{stderr}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nno_such_key = 2\n").unwrap();
    let out = bin()
        .env(CONFIG_ENV, &bad)
        .args(["gen", "--out", s(&dir.path().join("g")), "--count", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "unknown config keys are rejected");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = bin()
        .args(["train", "--data", s(dir.path()), "--out", s(&dir.path().join("run"))])
        .output()
        .unwrap();
    assert!(!out.status.success(), "a directory without a manifest is not a dataset");
    assert!(String::from_utf8_lossy(&out.stderr).contains(MANIFEST_FILE));
}

#[test]
fn comparing_a_table_with_itself_finds_no_difference() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    std::fs::write(
        &metrics,
        "sample_id,iou,fp_rate,fn_rate\na,0.5,0.1,0.2\nb,0.7,0.2,0.1\nc,0.6,0.0,0.3\n",
    )
    .unwrap();
    let report = dir.path().join("cmp.csv");
    run(&["compare", s(&metrics), s(&metrics), "--out", s(&report)]);
    let rows = read_comparison_csv(std::fs::File::open(&report).unwrap()).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.metric.as_str()).collect::<Vec<_>>(),
        ["iou", "fp_rate", "fn_rate"]
    );
    for r in rows {
        assert_eq!((r.t, r.p), (0.0, 1.0), "{}", r.metric);
        assert_eq!(r.mean_a, r.mean_b);
    }
}

#[test]
fn interrupted_training_leaves_a_readable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_gen(&data, &[]);
    let run_dir = dir.path().join("run");
    let last = run_dir.join("last.ckpt");
    let mut child = bin()
        .args([
            "train",
            "--data",
            s(&data),
            "--out",
            s(&run_dir),
            "--max-images",
            "1000000",
            "--val-every",
            "1",
        ])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    // Let several checkpoints land, then kill at an arbitrary point.
    while !(last.exists() && std::fs::read(run_dir.join("train_log.csv")).map_or(0, |b| b.len()) > 400) {
        assert!(start.elapsed() < Duration::from_secs(120), "no checkpoint appeared");
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let ck = read_checkpoint(&last).unwrap();
    assert!(ck.images_seen >= 1);
    assert!(read_checkpoint(&run_dir.join("best.ckpt")).is_ok());

    // A restart in the same directory runs to completion over the leftovers.
    run(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run_dir),
        "--max-images",
        "8",
        "--val-every",
        "4",
    ]);
    assert_eq!(read_checkpoint(&last).unwrap().images_seen, 8);
    let log = datasetio::decode_train_log(&std::fs::read(run_dir.join("train_log.csv")).unwrap()).unwrap();
    assert_eq!(log.iter().map(|e| e.images_seen).collect::<Vec<_>>(), [4, 8]);
}

#[test]
fn generate_train_evaluate_and_compare_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 3\n[data]\ntrain = 4\nval = 2\ntest = 3\ntest_min_rows = 2\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    let cfg_run = |args: &[&str]| {
        let out = bin().env(CONFIG_ENV, &config).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    cfg_run(&["gen", "--out", s(&data), "--size", "32"]);
    assert_eq!(read_manifest(&data.join(MANIFEST_FILE)).unwrap().len(), 9);

    let mut metrics = Vec::new();
    for mode in ["rgb_plus_flow", "rgb_only"] {
        let out = dir.path().join(mode);
        cfg_run(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--mode",
            mode,
            "--max-images",
            "12",
            "--val-every",
            "4",
        ]);
        for f in ["best.ckpt", "last.ckpt", "train_log.csv", "config.toml"] {
            assert!(out.join(f).is_file(), "{mode}: {f}");
        }
        let csv = out.join("metrics.csv");
        cfg_run(&[
            "eval",
            "--data",
            s(&data),
            "--checkpoint",
            s(&out.join("best.ckpt")),
            "--out",
            s(&csv),
        ]);
        let table = MetricsTable::read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
        assert_eq!(table.values(Metric::Iou).len(), 3, "one row per test image");
        assert!(out.join("metrics_summary.csv").is_file());
        metrics.push(csv);
    }
    let oracle = dir.path().join("oracle.csv");
    cfg_run(&["eval", "--data", s(&data), "--oracle", "--out", s(&oracle)]);
    let perfect = MetricsTable::read_csv(std::fs::File::open(&oracle).unwrap()).unwrap();
    assert!(perfect.values(Metric::Iou).iter().all(|&v| v == 1.0));
    assert!(perfect
        .values(Metric::FpRate)
        .iter()
        .chain(&perfect.values(Metric::FnRate))
        .all(|&v| v == 0.0));

    let report = dir.path().join("cmp.csv");
    cfg_run(&["compare", s(&metrics[0]), s(&metrics[1]), "--out", s(&report)]);
    let rows = read_comparison_csv(std::fs::File::open(&report).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.p)));
}
