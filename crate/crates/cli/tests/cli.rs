use std::path::{Path, PathBuf};
use std::process::Command;

use mcdnn_cli::commands;
use mcdnn_cli::{CliError, RunConfig};
use mcdnn_core::dataset::{self, synthetic_shapes};
use mcdnn_core::Rng;

const DESCRIPTOR: &str = "1x12x12-4C3-MP2-5C2-MP2-10N-4N";

fn quiet(_: &str) {}

fn write_shapes(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let ds = synthetic_shapes(&mut Rng::new(seed), n, 4, 12).unwrap();
    let path = dir.join(name);
    dataset::save_mcds(&ds, &path).unwrap();
    path
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    write_shapes(dir, "train.mcds", 64, 1);
    write_shapes(dir, "test.mcds", 32, 2);
    let text = format!(
        "descriptor = {DESCRIPTOR}\ntrain = train.mcds\ntest = test.mcds\n\
         eta_start = 0.01\neta_factor = 0.9\neta_min = 0.0001\nmax_epochs = 3\nseed = 11\n{extra}"
    );
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcdnn"))
}

#[test]
fn train_writes_models_and_manifest_then_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_config(
        dir.path(),
        "columns = 2\npreprocessors = original, imadjust\n",
    ))
    .unwrap();
    let out = commands::train(&cfg, &quiet).unwrap();
    assert_eq!(out.models.len(), 4);
    let manifest = std::fs::read_to_string(&out.manifest).unwrap();
    assert_eq!(
        manifest.lines().collect::<Vec<_>>(),
        [
            "column_000.mcd",
            "column_001.mcd",
            "column_002.mcd",
            "column_003.mcd"
        ]
    );
    let report = out.test_report.unwrap();
    assert_eq!(report.total, 32);

    let report_dir = dir.path().join("report");
    let again = commands::eval(
        &out.manifest,
        &dir.path().join("test.mcds"),
        None,
        &report_dir,
        1,
        &quiet,
    )
    .unwrap();
    assert_eq!(again.error_rate, report.error_rate);
    for f in [
        "error",
        "confusion.txt",
        "confusion.csv",
        "rejection.csv",
        "errors.csv",
    ] {
        assert!(report_dir.join(f).is_file(), "{f} missing");
    }

    // a single model file is accepted as well
    let single = commands::load_columns(&out.models[2]).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].seed, 13);
    assert_eq!(single[0].preprocessor.to_string(), "imadjust");
}

#[test]
fn geometry_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_config(dir.path(), "pad = 14x14\n")).unwrap();
    let err = commands::train(&cfg, &quiet).err().unwrap();
    assert!(matches!(err, CliError::Data(_)), "{err}");
    assert!(err.to_string().contains("1x14x14"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn manifest_with_missing_model_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.txt");
    std::fs::write(&manifest, "# models\nnope.mcd\n").unwrap();
    let err = commands::load_columns(&manifest).err().unwrap();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn preprocess_writes_a_loadable_container() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_shapes(dir.path(), "in.mcds", 8, 3);
    let out = dir.path().join("out.mcds");
    let derived = commands::preprocess(&src, "histeq+resize:10:16", &out, None, &quiet).unwrap();
    assert_eq!(derived.image_shape(), Some([1, 16, 16]));
    let back = dataset::load_mcds(&out).unwrap();
    assert_eq!((back.images, back.labels), (derived.images, derived.labels));
    assert!(matches!(
        commands::preprocess(&src, "sharpen", &out, None, &quiet),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn augment_preview_writes_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_shapes(dir.path(), "in.mcds", 8, 4);
    let params = mcdnn_core::DistortionParams::mnist();
    let files =
        commands::augment_preview(&src, &params, 3, 9, &dir.path().join("prev"), &quiet).unwrap();
    assert_eq!(files.len(), 6);
    let a = dataset::parse_pnm(&std::fs::read(&files[0]).unwrap()).unwrap();
    let b = dataset::parse_pnm(&std::fs::read(&files[1]).unwrap()).unwrap();
    assert_eq!(a.shape(), b.shape());
    assert_ne!(a, b);
}

#[test]
fn inspect_lists_every_layer() {
    let table = commands::inspect("1x29x29-20C4-MP2-40C5-MP3-150N-10N").unwrap();
    assert!(table.contains("26x26") && table.contains("150"), "{table}");
    assert!(matches!(
        commands::inspect("1x29x29-20C40"),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin().args(["inspect", DESCRIPTOR]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("10"));

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "descriptor = 1x8x8-2N\ncolour = red\n").unwrap();
    let out = bin().arg("train").arg(&bad_cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = bin()
        .args(["eval"])
        .arg(dir.path().join("none.mcd"))
        .arg(dir.path().join("none.mcds"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let usage = bin().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn binary_train_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "output = out\n");
    let out = bin().arg("train").arg(&cfg).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("config | seed = 11"));
    assert!(stdout.contains("test error"));
    assert!(dir.path().join("out/column_000.mcd").is_file());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!cfg.column_plans().is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 3);
    let desk = RunConfig::load(&dir.join("mnist_desk.cfg")).unwrap();
    assert_eq!((desk.validation_fraction * 11000.0).ceil() as usize, 1000);
    assert_eq!(
        RunConfig::load(&dir.join("mnist_35.cfg"))
            .unwrap()
            .column_plans()
            .len(),
        35
    );
}
