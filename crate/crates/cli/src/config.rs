//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors, reported with their line number.

use std::path::{Path, PathBuf};

use mcdnn_core::augment::{Background, BlurParams, DistortionParams, ElasticParams};
use mcdnn_core::{NetDescriptor, Preprocessor, TrainConfig};

use crate::error::CliError;

const KEYS: &[&str] = &[
    "descriptor",
    "train",
    "test",
    "validation",
    "validation_fraction",
    "train_limit",
    "pad",
    "preprocessors",
    "columns",
    "eta_start",
    "eta_factor",
    "eta_min",
    "max_epochs",
    "seed",
    "max_translate",
    "max_rotate",
    "max_scale",
    "elastic_sigma",
    "elastic_alpha",
    "blur_radius",
    "blur_sigma",
    "background",
    "threads",
    "output",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub descriptor: NetDescriptor,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    /// Share of the training images held out (undistorted) for validation
    /// when no validation set is given.
    pub validation_fraction: f64,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    /// Center images on a canvas of this height and width before preprocessing.
    pub pad: Option<(usize, usize)>,
    pub preprocessors: Vec<Preprocessor>,
    /// Repetitions per preprocessor.
    pub columns: usize,
    pub train_config: TrainConfig,
    pub threads: usize,
    pub output: PathBuf,
    /// The configuration text as read.
    pub source: String,
}

/// One column to train: preprocessor and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnPlan {
    pub index: usize,
    pub preprocessor: Preprocessor,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.train);
        cfg.test.as_mut().map(rebase);
        cfg.validation.as_mut().map(rebase);
        rebase(&mut cfg.output);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: lineno,
                message: format!("expected key = value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Config {
                    line: lineno,
                    message: format!("unknown key `{key}`"),
                });
            }
            if let Some((prev, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
                return Err(CliError::Config {
                    line: lineno,
                    message: format!("key `{key}` already set on line {prev}"),
                });
            }
            entries.push((lineno, key, value));
        }
        let get = |key: &str| {
            entries
                .iter()
                .find(|(_, k, _)| *k == key)
                .map(|&(l, _, v)| (l, v))
        };
        let required = |key: &str| {
            get(key).ok_or_else(|| CliError::Config {
                line: 0,
                message: format!("missing required key `{key}`"),
            })
        };
        fn num<T: std::str::FromStr>(key: &str, line: usize, v: &str) -> Result<T, CliError> {
            v.parse().map_err(|_| CliError::Config {
                line,
                message: format!("`{key}`: cannot parse `{v}`"),
            })
        }
        let opt_num = |key: &str, default: f64| -> Result<f64, CliError> {
            get(key).map_or(Ok(default), |(l, v)| num(key, l, v))
        };
        let bad = |key: &str, msg: String| CliError::Config {
            line: get(key).map_or(0, |(l, _)| l),
            message: format!("`{key}`: {msg}"),
        };

        let (dl, dv) = required("descriptor")?;
        let descriptor = NetDescriptor::parse(dv).map_err(|e| CliError::Config {
            line: dl,
            message: format!("`descriptor`: {e}"),
        })?;
        let train = PathBuf::from(required("train")?.1);
        let test = get("test").map(|(_, v)| PathBuf::from(v));
        let validation = get("validation").map(|(_, v)| PathBuf::from(v));
        let validation_fraction = opt_num("validation_fraction", 0.1)?;
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(bad("validation_fraction", "must lie in [0, 1)".into()));
        }
        let train_limit = get("train_limit")
            .map(|(l, v)| num::<usize>("train_limit", l, v))
            .transpose()?;
        let pad = get("pad")
            .map(|(l, v)| {
                let (h, w) = v
                    .split_once('x')
                    .ok_or_else(|| bad("pad", "expected HxW".into()))?;
                Ok::<_, CliError>((num::<usize>("pad", l, h)?, num::<usize>("pad", l, w)?))
            })
            .transpose()?;
        let preprocessors = match get("preprocessors") {
            None => vec![Preprocessor::Original],
            Some((l, v)) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<Preprocessor>()
                        .map_err(|e| CliError::Config {
                            line: l,
                            message: format!("`preprocessors`: {e}"),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let columns = get("columns").map_or(Ok(1), |(l, v)| num::<usize>("columns", l, v))?;
        if columns == 0 {
            return Err(bad("columns", "must be at least 1".into()));
        }
        let threads = get("threads").map_or(Ok(1), |(l, v)| num::<usize>("threads", l, v))?;
        if threads == 0 {
            return Err(bad("threads", "must be at least 1".into()));
        }

        let elastic = match (get("elastic_sigma"), get("elastic_alpha")) {
            (None, None) => None,
            (Some((l1, s)), Some((l2, a))) => Some(ElasticParams {
                sigma: num("elastic_sigma", l1, s)?,
                alpha: num("elastic_alpha", l2, a)?,
            }),
            _ => {
                return Err(bad(
                    "elastic_sigma",
                    "elastic_sigma and elastic_alpha go together".into(),
                ))
            }
        };
        let blur = match (get("blur_radius"), get("blur_sigma")) {
            (None, None) => None,
            (Some((l1, r)), Some((l2, s))) => Some(BlurParams {
                radius: num("blur_radius", l1, r)?,
                sigma: num("blur_sigma", l2, s)?,
            }),
            _ => {
                return Err(bad(
                    "blur_radius",
                    "blur_radius and blur_sigma go together".into(),
                ))
            }
        };
        let background = match get("background") {
            None => Background::default(),
            Some((_, "clamp")) => Background::Clamp,
            Some((l, v)) => Background::Constant(num("background", l, v)?),
        };
        let distortion = DistortionParams {
            max_translate: opt_num("max_translate", 0.0)?,
            max_rotate: opt_num("max_rotate", 0.0)?,
            max_scale: opt_num("max_scale", 0.0)?,
            elastic,
            blur,
            background,
        };
        let train_config = TrainConfig {
            eta_start: opt_num("eta_start", 0.001)?,
            eta_factor: opt_num("eta_factor", 0.993)?,
            eta_min: opt_num("eta_min", 0.00003)?,
            max_epochs: get("max_epochs")
                .map_or(Ok(800), |(l, v)| num::<usize>("max_epochs", l, v))?,
            seed: get("seed").map_or(Ok(0), |(l, v)| num::<u64>("seed", l, v))?,
            distortion,
        };
        train_config.validate().map_err(|e| CliError::Config {
            line: 0,
            message: e.to_string(),
        })?;

        Ok(Self {
            descriptor,
            train,
            test,
            validation,
            validation_fraction,
            train_limit,
            pad,
            preprocessors,
            columns,
            train_config,
            threads,
            output: PathBuf::from(get("output").map_or("models", |(_, v)| v)),
            source: text.to_string(),
        })
    }

    /// Columns in training order; seeds are `seed + index`.
    pub fn column_plans(&self) -> Vec<ColumnPlan> {
        let mut plans = Vec::new();
        for p in &self.preprocessors {
            for _ in 0..self.columns {
                let index = plans.len();
                plans.push(ColumnPlan {
                    index,
                    preprocessor: p.clone(),
                    seed: self.train_config.seed.wrapping_add(index as u64),
                });
            }
        }
        plans
    }
}
