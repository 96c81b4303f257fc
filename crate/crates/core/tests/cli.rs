use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use csmgan::acoustics::{read_model_set, sample_model};
use csmgan::gan::{read_epoch_log, GanModel};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_csmgan"));
    c.stdin(Stdio::null()).env_remove("CSMGAN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn desk_dataset(dir: &Path, task: &str) -> PathBuf {
    let ds = dir.join(format!("ds{task}"));
    ok(&[
        "build-dataset",
        "--task",
        task,
        "--seed",
        "1",
        "--out",
        s(&ds),
    ]);
    ds
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_creates_a_self_describing_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = desk_dataset(tmp.path(), "1");
    let cfg = config(tmp.path(), "[optimizer]\nepochs = 3\neval_every = 2\n");
    let run_dir = PathBuf::from(ok(&[
        "train",
        "--task",
        "1",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(&tmp.path().join("runs")),
    ]));
    assert!(run_dir
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("run-"));
    for f in [
        "config.echo",
        "epochs.csv",
        "scatter.csv",
        "checkpoints/final.ckpt",
        "checkpoints/latest.ckpt",
        "checkpoints/epoch-0002.ckpt",
    ] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let echo = fs::read_to_string(run_dir.join("config.echo")).unwrap();
    assert!(
        echo.contains("lambda = 200.0") && echo.contains("epochs = 3"),
        "{echo}"
    );
    assert!(
        echo.contains("models = 1"),
        "dataset seed not echoed: {echo}"
    );

    let log = read_epoch_log(&run_dir.join("epochs.csv")).unwrap();
    assert_eq!(log.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(
        log.iter()
            .map(|r| r.test_g_acc.is_some())
            .collect::<Vec<_>>(),
        [false, true, true]
    );
    assert!(log.iter().all(|r| r.batches == 16));

    let (model, train) = GanModel::load(&run_dir.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(model.epoch, 3);
    assert_eq!(train.epochs, 3);

    let report = tmp.path().join("report.csv");
    let stdout = ok(&[
        "eval",
        "--checkpoint",
        s(&run_dir.join("checkpoints/final.ckpt")),
        "--dataset",
        s(&ds),
        "--report",
        s(&report),
    ]);
    assert!(stdout.contains("64 samples"), "{stdout}");
    let mut rd = csv::Reader::from_path(&report).unwrap();
    assert_eq!(rd.records().count(), 64);

    let scatter = tmp.path().join("scatter.csv");
    ok(&[
        "export-scatter",
        "--report",
        s(&report),
        "--out",
        s(&scatter),
    ]);
    let mut rd = csv::Reader::from_path(&scatter).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        ["model_index", "g_acc_G", "g_acc_Id"]
    );
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 64);
    for r in &rows {
        let g: f64 = r[1].parse().unwrap();
        let id: f64 = r[2].parse().unwrap();
        assert!(g.is_finite() && g <= 1.0 + 1e-12);
        assert_eq!(id, 1.0);
    }
    assert_eq!(
        fs::read(&scatter).unwrap(),
        fs::read(run_dir.join("scatter.csv")).unwrap()
    );
}

#[test]
fn killed_run_resumes_to_the_uninterrupted_result() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = desk_dataset(tmp.path(), "1");
    let cfg = config(tmp.path(), "[optimizer]\nepochs = 60\neval_every = 20\n");
    let parent = tmp.path().join("killed");
    let mut child = bin()
        .args([
            "--threads",
            "1",
            "train",
            "--config",
            s(&cfg),
            "--dataset",
            s(&ds),
            "--checkpoint-dir",
            s(&parent),
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(120);
    let run_dir = loop {
        assert!(Instant::now() < deadline, "no progress before the deadline");
        let found = fs::read_dir(&parent)
            .ok()
            .and_then(|mut d| d.next())
            .map(|e| e.unwrap().path());
        if let Some(dir) = found {
            let log = dir.join("epochs.csv");
            if log.exists() && fs::read_to_string(&log).unwrap().lines().count() > 3 {
                break dir;
            }
        }
        sleep(Duration::from_millis(10));
    };
    child.kill().unwrap();
    child.wait().unwrap();

    let (partial, _) = GanModel::load(&run_dir.join("checkpoints/latest.ckpt")).unwrap();
    assert!(
        partial.epoch >= 3 && partial.epoch < 60,
        "epoch {}",
        partial.epoch
    );
    assert!(!run_dir.join("checkpoints/final.ckpt").exists());

    ok(&[
        "--threads",
        "1",
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(&parent),
        "--resume",
        s(&run_dir),
    ]);
    let straight = PathBuf::from(ok(&[
        "--threads",
        "1",
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(&tmp.path().join("straight")),
    ]));
    for f in ["checkpoints/final.ckpt", "epochs.csv", "scatter.csv"] {
        assert_eq!(
            fs::read(run_dir.join(f)).unwrap(),
            fs::read(straight.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn resume_rejects_a_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = desk_dataset(tmp.path(), "1");
    let cfg = config(tmp.path(), "[optimizer]\nepochs = 1\n");
    let run_dir = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(tmp.path()),
    ]);
    let cfg = config(tmp.path(), "[optimizer]\nepochs = 2\nlambda = 10.0\n");
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(tmp.path()),
        "--resume",
        &run_dir,
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(
        run(&[
            "--threads",
            "0",
            "gen-models",
            "--count",
            "1",
            "--out",
            s(&tmp.path().join("m"))
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let ds = desk_dataset(tmp.path(), "2");
    let missing = run(&[
        "train",
        "--config",
        "/nonexistent.toml",
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(tmp.path()),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent.toml"));

    let unknown = config(tmp.path(), "[optimizer]\nlearning_rate = 1e-3\n");
    let out = run(&[
        "train",
        "--config",
        s(&unknown),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = run(&[
        "train",
        "--task",
        "1",
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2), "task mismatch");

    let paper = config(tmp.path(), "scale = \"paper\"\n");
    let out = run(&[
        "train",
        "--config",
        s(&paper),
        "--dataset",
        s(&ds),
        "--checkpoint-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2), "scale mismatch");

    let off_grid = config(tmp.path(), "[architecture]\nn_gen = 48\n");
    let out = run(&[
        "hpo",
        "--grid",
        s(&off_grid),
        "--subset",
        "first:1",
        "--budget",
        "1",
        "--dataset",
        s(&ds),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "eval",
        "--checkpoint",
        s(&tmp.path().join("none.ckpt")),
        "--dataset",
        s(&ds),
        "--report",
        s(&tmp.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&[
        "train",
        "--dataset",
        s(&tmp.path().join("absent")),
        "--checkpoint-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_models_writes_the_sampled_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("models.txt");
    ok(&[
        "gen-models",
        "--seed",
        "4",
        "--count",
        "5",
        "--start",
        "10",
        "--out",
        s(&out),
    ]);
    let models = read_model_set(BufReader::new(fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(models.len(), 5);
    for (i, m) in models.iter().enumerate() {
        let expected = sample_model(4, 10 + i as u64);
        assert_eq!(m.index, expected.index);
        assert_eq!(m.sources.len(), expected.sources.len());
        assert!((m.level - expected.level).abs() <= 1e-12 * expected.level.abs());
    }
}

#[test]
fn thread_cap_from_environment_keeps_results_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&[
        "--threads",
        "1",
        "build-dataset",
        "--task",
        "5",
        "--out",
        s(&a),
        "--train-models",
        "12",
        "--test-models",
        "4",
    ]);
    let out = bin()
        .env("CSMGAN_THREADS", "3")
        .args([
            "build-dataset",
            "--task",
            "5",
            "--out",
            s(&b),
            "--train-models",
            "12",
            "--test-models",
            "4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["train.csmd", "test.csmd", "manifest.toml"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}
