use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fine(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fine"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_TOY1: &str = "\
[data]
benchmark = toy1
samples = 6
n = 32
path = data/toy1.bin

[model]
latent_dim = 2
depth = 2
segments = 4

[train]
epochs = 4
lr = 0.001
checkpoint_every = 2
run_dir = runs/toy1
";

fn setup(cfg: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), cfg).unwrap();
    let o = fine(dir.path(), &["gen-data", "run.cfg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_data_fills_and_echoes_defaults() {
    let dir = setup(SMALL_TOY1);
    let d = dir.path();
    let data = fine::io::load_dataset(&d.join("data/toy1.bin")).unwrap();
    assert_eq!((data.len(), data.grid().len()), (6, 32));
    let meta = fs::read_to_string(d.join("data/meta.txt")).unwrap();
    // The seed key is absent from the config and comes back as the default.
    assert!(meta.contains("seed = 0"), "{meta}");
    assert!(meta.contains("sha256="));
}

#[test]
fn default_toy1_preset_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let preset = concat!(env!("CARGO_MANIFEST_DIR"), "/../../presets/toy1.cfg");
    let o = fine(dir.path(), &["gen-data", preset]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = fine::io::load_dataset(&dir.path().join("data/toy1.bin")).unwrap();
    assert_eq!((data.len(), data.grid().len()), (100, 128));
}

#[test]
fn config_errors_exit_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "[data]\nbenchmark = toy1\nsampels = 3\n").unwrap();
    let o = fine(dir.path(), &["gen-data", "bad.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    fs::write(dir.path().join("bad.cfg"), "[model]\ndepth: 3\n").unwrap();
    let o = fine(dir.path(), &["gen-data", "bad.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fine(dir.path(), &[])), 1);
    assert_eq!(code(&fine(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&fine(dir.path(), &["sweep", "x.cfg"])), 1);
    assert_eq!(code(&fine(dir.path(), &["--help"])), 0);
    let o = fine(dir.path(), &["train", "missing.cfg"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fine"))
        .args(["gen-data", "x.cfg"])
        .env("FINE_THREADS", "lots")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("FINE_THREADS"));
}

#[test]
fn solver_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[data]\nbenchmark = turb2d\nn = 16\nrealizations = 1\ndt = 2\nt_end = 4\nenergy = 50\n";
    fs::write(dir.path().join("t.cfg"), cfg).unwrap();
    let o = fine(dir.path(), &["gen-data", "t.cfg"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn zero_epoch_run_evaluates_to_baseline() {
    let dir = setup(SMALL_TOY1);
    let d = dir.path();
    let o = fine(d, &["train", "run.cfg", "--epochs", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&d.join("runs/toy1/loss.csv")).len(), 1);
    assert!(fs::read_to_string(d.join("runs/toy1/config.txt")).unwrap().contains("epochs = 0"));

    let o = fine(d, &["eval", "runs/toy1/final.bin", "data/toy1.bin", "--reconstruct", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = csv_rows(&d.join("runs/toy1/metrics.csv"));
    let ratio: f64 = metrics.iter().find(|r| r[0] == "ratio").unwrap()[1].parse().unwrap();
    assert!((ratio - 1.0).abs() < 1e-10, "ratio {ratio}");

    let recon = csv_rows(&d.join("runs/toy1/reconstruction.csv"));
    assert_eq!(recon.len(), 32);
    assert!(recon.iter().all(|r| r.len() == 4));
    for r in &recon {
        let (b, m): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((b - m).abs() < 1e-10);
    }
    for f in ["spectrum.csv", "covariance.csv", "latent_scatter.csv", "per_sample.csv"] {
        assert!(d.join("runs/toy1").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn eval_rejects_incompatible_grid() {
    let dir = setup(SMALL_TOY1);
    let d = dir.path();
    assert_eq!(code(&fine(d, &["train", "run.cfg", "--epochs", "0"])), 0);
    fs::write(
        d.join("other.cfg"),
        "[data]\nbenchmark = toy1\nsamples = 2\nn = 16\npath = other/toy1.bin\n",
    )
    .unwrap();
    assert_eq!(code(&fine(d, &["gen-data", "other.cfg"])), 0);
    let o = fine(d, &["eval", "runs/toy1/final.bin", "other/toy1.bin"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("grid mismatch"), "{}", stderr(&o));
}

#[test]
fn resumed_run_continues_epoch_numbering() {
    let dir = setup(SMALL_TOY1);
    let d = dir.path();
    // Stop after the first checkpoint, then finish the configured 4 epochs.
    assert_eq!(code(&fine(d, &["train", "run.cfg", "--epochs", "2"])), 0);
    let o = fine(d, &["train", "run.cfg", "--resume", "runs/toy1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&d.join("runs/toy1/loss.csv"));
    let epochs: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(epochs, vec![0, 1, 2, 3, 4]);

    // The same 4 epochs in one go give the same history.
    fs::write(d.join("straight.cfg"), SMALL_TOY1.replace("runs/toy1", "runs/straight")).unwrap();
    assert_eq!(code(&fine(d, &["train", "straight.cfg"])), 0);
    let straight = csv_rows(&d.join("runs/straight/loss.csv"));
    for (a, b) in rows.iter().zip(&straight) {
        assert_eq!(a[2], b[2]);
    }
}

#[test]
fn sweep_writes_rows_and_skips_completed_dims() {
    // A few epochs of Adam can sit just above the identity loss; train long enough to descend.
    let dir = setup(&SMALL_TOY1.replace("epochs = 4", "epochs = 40"));
    let d = dir.path();
    let o = fine(d, &["sweep", "run.cfg", "--dims", "1,2,3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = d.join("runs/toy1/sweep.csv");
    let first = fs::read_to_string(&path).unwrap();
    assert_eq!(first.lines().count(), 4);
    let o = fine(d, &["sweep", "run.cfg", "--dims", "1,2,3"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&path).unwrap(), first);
}

#[test]
fn gradcheck_passes_on_small_model() {
    let dir = setup(SMALL_TOY1);
    let o = fine(dir.path(), &["gradcheck", "run.cfg"]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS"));
}
