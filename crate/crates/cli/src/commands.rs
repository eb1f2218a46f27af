//! Subcommand implementations. Log text goes through the `log` callback;
//! every machine-readable result is written to a file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mcdnn_core::augment::{self, DistortionParams};
use mcdnn_core::dataset::{self, encode_pnm};
use mcdnn_core::ensemble::{average, Column};
use mcdnn_core::eval::{self, EvaluationReport};
use mcdnn_core::model_file;
use mcdnn_core::trainer::{self, EpochReport};
use mcdnn_core::{Dataset, NetDescriptor, Preprocessor, Rng, Tensor};

use crate::config::{ColumnPlan, RunConfig};
use crate::error::CliError;

pub type Log<'a> = &'a (dyn Fn(&str) + Sync);

pub const MANIFEST: &str = "manifest.txt";

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

/// Loads a dataset by path and optionally pads it to `pad` (height, width).
pub fn load_dataset(path: &Path, pad: Option<(usize, usize)>) -> Result<Dataset, CliError> {
    let ds = dataset::load_any(path)?;
    match pad {
        Some((h, w)) => Ok(dataset::pad_canvas(&ds, h, w)?),
        None => Ok(ds),
    }
}

/// Applies `p` to every image of `ds`.
pub fn preprocess_dataset(ds: &Dataset, p: &Preprocessor) -> Result<Dataset, CliError> {
    if *p == Preprocessor::Original {
        return Ok(ds.clone());
    }
    let images = ds
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            p.apply(img)
                .map_err(|e| CliError::Data(format!("image {i}: {p}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(
        ds.name.clone(),
        images,
        ds.labels.clone(),
        ds.class_count,
    )?)
}

fn check_geometry(descriptor: &NetDescriptor, ds: &Dataset, what: &str) -> Result<(), CliError> {
    let (m, h, w) = descriptor.input_shape();
    match ds.image_shape() {
        Some(shape) if shape != [m, h, w] => Err(CliError::Data(format!(
            "{what}: images are {}x{}x{} but the network expects {m}x{h}x{w}",
            shape[0], shape[1], shape[2]
        ))),
        _ => Ok(()),
    }
}

pub struct TrainOutcome {
    pub models: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub test_report: Option<EvaluationReport>,
}

pub fn model_name(index: usize) -> String {
    format!("column_{index:03}.mcd")
}

/// Trains every configured column, writes one model file per column and a
/// manifest listing them.
pub fn train(cfg: &RunConfig, log: Log) -> Result<TrainOutcome, CliError> {
    for line in cfg.source.lines() {
        log(&format!("config | {line}"));
    }
    let mut full = load_dataset(&cfg.train, cfg.pad)?;
    if let Some(n) = cfg.train_limit {
        full = full.slice(0..n.min(full.len()))?;
    }
    let (train_raw, val_raw) = match &cfg.validation {
        Some(path) => (full, load_dataset(path, cfg.pad)?),
        None => {
            let held = (cfg.validation_fraction * full.len() as f64).ceil() as usize;
            let cut = full.len() - held.min(full.len());
            (full.slice(0..cut)?, full.slice(cut..full.len())?)
        }
    };
    if train_raw.is_empty() {
        return Err(CliError::Data("training set is empty".into()));
    }
    log(&format!(
        "training on {} images, validating on {}",
        train_raw.len(),
        val_raw.len()
    ));
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.output.display())))?;

    let plans = cfg.column_plans();
    let train_one = |plan: &ColumnPlan| -> Result<PathBuf, CliError> {
        let train = preprocess_dataset(&train_raw, &plan.preprocessor)?;
        let val = preprocess_dataset(&val_raw, &plan.preprocessor)?;
        check_geometry(&cfg.descriptor, &train, "training set")?;
        let mut tc = cfg.train_config.clone();
        tc.seed = plan.seed;
        let on_epoch = |r: &EpochReport| {
            let val = r
                .validation_error
                .map_or_else(|| "-".to_string(), |v| format!("{:.4}%", 100.0 * v));
            log(&format!(
                "column {} epoch {} eta {:.6e} loss {:.6} validation {}",
                plan.index, r.epoch, r.eta, r.train_loss, val
            ));
        };
        let (net, state) = trainer::train_new(cfg.descriptor.clone(), &train, &val, &tc, on_epoch)?;
        log(&format!(
            "column {} ({}, seed {}) stopped after {} epochs: {:?}",
            plan.index,
            plan.preprocessor,
            plan.seed,
            state.epoch,
            state.stop.expect("fit sets a stop reason")
        ));
        let path = cfg.output.join(model_name(plan.index));
        model_file::save(
            &Column::new(net, plan.preprocessor.clone(), plan.seed),
            &path,
        )?;
        Ok(path)
    };
    let models = pool(cfg.threads)?.install(|| {
        plans
            .par_iter()
            .map(train_one)
            .collect::<Result<Vec<_>, _>>()
    })?;

    let manifest = cfg.output.join(MANIFEST);
    let body: String = models
        .iter()
        .map(|p| {
            format!(
                "{}\n",
                p.file_name().expect("model file name").to_string_lossy()
            )
        })
        .collect();
    std::fs::write(&manifest, body)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest.display())))?;
    log(&format!(
        "wrote {} model(s) and {}",
        models.len(),
        manifest.display()
    ));

    let test_report = match &cfg.test {
        Some(path) => {
            let test = load_dataset(path, cfg.pad)?;
            let columns = load_columns(&manifest)?;
            let report = evaluate_columns(&columns, &test, cfg.threads)?;
            log(&format!("test error {:.4}%", 100.0 * report.error_rate));
            report.write_to(&cfg.output.join("test_report"))?;
            Some(report)
        }
        None => None,
    };
    Ok(TrainOutcome {
        models,
        manifest,
        test_report,
    })
}

/// Loads a single model file or every model listed in a manifest (paths
/// relative to the manifest's directory).
pub fn load_columns(path: &Path) -> Result<Vec<Column>, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(model_file::MAGIC) {
        return Ok(vec![model_file::decode(&bytes)?]);
    }
    let text = String::from_utf8(bytes).map_err(|_| {
        CliError::Data(format!(
            "{} is neither a model nor a manifest",
            path.display()
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut columns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = base.join(line);
        if !p.is_file() {
            return Err(CliError::Data(format!(
                "{} line {}: model file {} not found",
                path.display(),
                i + 1,
                p.display()
            )));
        }
        columns.push(model_file::load(&p)?);
    }
    if columns.is_empty() {
        return Err(CliError::Data(format!(
            "{} lists no models",
            path.display()
        )));
    }
    Ok(columns)
}

/// Per-sample averaged probabilities of `columns` (summed in list order).
pub fn ensemble_predictions(
    columns: &[Column],
    ds: &Dataset,
    threads: usize,
) -> Result<Vec<Vec<f64>>, CliError> {
    let classes = columns[0].class_count();
    if columns.iter().any(|c| c.class_count() != classes) {
        return Err(CliError::Data("columns disagree on the class count".into()));
    }
    if classes != ds.class_count {
        return Err(CliError::Data(format!(
            "models predict {classes} classes, the dataset has {}",
            ds.class_count
        )));
    }
    let per_column = pool(threads)?.install(|| {
        columns
            .iter()
            .map(|c| {
                let pre = preprocess_dataset(ds, &c.preprocessor)?;
                check_geometry(c.network.descriptor(), &pre, "dataset")?;
                pre.images
                    .par_iter()
                    .map(|x| {
                        c.predict_preprocessed(x)
                            .map_err(|e| CliError::Internal(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    (0..ds.len())
        .map(|i| {
            let outputs: Vec<Vec<f64>> = per_column.iter().map(|p| p[i].clone()).collect();
            average(&outputs).map_err(|e| CliError::Internal(e.to_string()))
        })
        .collect()
}

pub fn evaluate_columns(
    columns: &[Column],
    ds: &Dataset,
    threads: usize,
) -> Result<EvaluationReport, CliError> {
    let preds = ensemble_predictions(columns, ds, threads)?;
    Ok(eval::evaluate(&preds, &ds.labels)?)
}

/// Evaluates a model or manifest on a dataset and writes the report files.
pub fn eval(
    model: &Path,
    data: &Path,
    pad: Option<(usize, usize)>,
    out: &Path,
    threads: usize,
    log: Log,
) -> Result<EvaluationReport, CliError> {
    let columns = load_columns(model)?;
    let ds = load_dataset(data, pad)?;
    log(&format!(
        "evaluating {} column(s) on {} images",
        columns.len(),
        ds.len()
    ));
    let report = evaluate_columns(&columns, &ds, threads)?;
    report.write_to(out)?;
    log(&report.summary());
    log(&report.confusion.render());
    Ok(report)
}

pub fn inspect(descriptor: &str) -> Result<String, CliError> {
    Ok(NetDescriptor::parse(descriptor)?.table())
}

/// Writes the preprocessed dataset as an MCDS1 container.
pub fn preprocess(
    data: &Path,
    chain: &str,
    out: &Path,
    pad: Option<(usize, usize)>,
    log: Log,
) -> Result<Dataset, CliError> {
    let p: Preprocessor = chain
        .parse()
        .map_err(|e: mcdnn_core::PreprocessError| CliError::Usage(e.to_string()))?;
    let ds = load_dataset(data, pad)?;
    let derived = preprocess_dataset(&ds, &p)?;
    dataset::save_mcds(&derived, out)?;
    log(&format!(
        "wrote {} images preprocessed with {p} to {}",
        derived.len(),
        out.display()
    ));
    Ok(derived)
}

/// Writes the first `n` images and one distorted version of each as
/// portable maps.
pub fn augment_preview(
    data: &Path,
    params: &DistortionParams,
    n: usize,
    seed: u64,
    out: &Path,
    log: Log,
) -> Result<Vec<PathBuf>, CliError> {
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = load_dataset(data, None)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let mut rng = Rng::new(seed);
    let mut written = Vec::new();
    for (i, img) in ds.images.iter().take(n).enumerate() {
        let distorted =
            augment::distort(&mut rng, img, params).map_err(|e| CliError::Data(e.to_string()))?;
        let ext = if img.shape()[0] == 3 { "ppm" } else { "pgm" };
        for (name, t) in [("original", img), ("distorted", &distorted)] {
            let path = out.join(format!("{i:04}_{name}.{ext}"));
            write_image(t, &path)?;
            written.push(path);
        }
    }
    log(&format!(
        "wrote {} preview images to {}",
        written.len(),
        out.display()
    ));
    Ok(written)
}

fn write_image(t: &Tensor, path: &Path) -> Result<(), CliError> {
    let bytes = encode_pnm(t)?;
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
