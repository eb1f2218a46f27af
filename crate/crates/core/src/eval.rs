//! Error rates, confusion matrices, second guesses and rejection curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::ensemble::{classify, second_guess};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("prediction {index} has {found} classes, expected {expected}")]
    ClassMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("label {label} at {index} out of range for {class_count} classes")]
    BadLabel {
        index: usize,
        label: usize,
        class_count: usize,
    },
    #[error("nothing to evaluate")]
    Empty,
    #[error("thresholds must be ascending")]
    UnsortedThresholds,
    #[error("bad confusion CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn errors(&self) -> u64 {
        self.total() - (0..self.classes).map(|i| self.get(i, i)).sum::<u64>()
    }

    /// Share of all errors in an off-diagonal cell, in percent; 0 on the
    /// diagonal or when there are no errors.
    pub fn error_share(&self, truth: usize, predicted: usize) -> f64 {
        let errors = self.errors();
        if truth == predicted || errors == 0 {
            0.0
        } else {
            100.0 * self.get(truth, predicted) as f64 / errors as f64
        }
    }

    /// Aligned table of counts followed by a table of error shares.
    pub fn render(&self) -> String {
        let width = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(self.classes.to_string().len())
            .max(6);
        let mut out = String::new();
        let header = |out: &mut String, title: &str| {
            let _ = write!(out, "{title:>width$}");
            for p in 0..self.classes {
                let _ = write!(out, " {p:>width$}");
            }
            out.push('\n');
        };
        header(&mut out, "true\\pred");
        for t in 0..self.classes {
            let _ = write!(out, "{t:>width$}");
            for p in 0..self.classes {
                let _ = write!(out, " {:>width$}", self.get(t, p));
            }
            out.push('\n');
        }
        out.push('\n');
        header(&mut out, "% errors");
        for t in 0..self.classes {
            let _ = write!(out, "{t:>width$}");
            for p in 0..self.classes {
                let _ = write!(out, " {:>width$.2}", self.error_share(t, p));
            }
            out.push('\n');
        }
        out
    }

    /// `truth,<pred 0>,...` header then one row per true label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for p in 0..self.classes {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        for t in 0..self.classes {
            let _ = write!(out, "{t}");
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, message: &str| EvalError::Csv {
            line: line + 1,
            message: message.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| err(0, "empty"))?;
        let classes = header.split(',').count().saturating_sub(1);
        let mut m = Self::new(classes);
        let mut rows = 0;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != classes + 1 || rows >= classes {
                return Err(err(i, "wrong number of fields"));
            }
            for (p, f) in fields[1..].iter().enumerate() {
                m.counts[rows * classes + p] = f.trim().parse().map_err(|_| err(i, "bad count"))?;
            }
            rows += 1;
        }
        if rows != classes {
            return Err(err(rows, "missing rows"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionPoint {
    pub threshold: f64,
    pub reject_fraction: f64,
    /// Error among accepted samples; 0 when nothing is accepted.
    pub accepted_error: f64,
    pub accepted_empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Misclassified {
    pub index: usize,
    pub truth: usize,
    pub first: usize,
    pub second: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub total: usize,
    pub error_rate: f64,
    pub confusion: ConfusionMatrix,
    /// Fraction of all samples where neither the first nor the second guess
    /// is correct.
    pub top2_error: f64,
    /// Fraction of the errors whose second guess is correct.
    pub second_guess_correct: f64,
    pub rejection: Vec<RejectionPoint>,
    pub misclassified: Vec<Misclassified>,
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn check(predictions: &[Vec<f64>], labels: &[usize]) -> Result<usize, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let classes = predictions.first().ok_or(EvalError::Empty)?.len();
    for (index, (p, &label)) in predictions.iter().zip(labels).enumerate() {
        if p.len() != classes {
            return Err(EvalError::ClassMismatch {
                index,
                expected: classes,
                found: p.len(),
            });
        }
        if label >= classes {
            return Err(EvalError::BadLabel {
                index,
                label,
                class_count: classes,
            });
        }
    }
    Ok(classes)
}

pub fn rejection_curve(
    predictions: &[Vec<f64>],
    labels: &[usize],
    thresholds: &[f64],
) -> Result<Vec<RejectionPoint>, EvalError> {
    check(predictions, labels)?;
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedThresholds);
    }
    let n = predictions.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let (mut accepted, mut wrong) = (0usize, 0usize);
            for (p, &label) in predictions.iter().zip(labels) {
                let (class, confidence) = classify(p);
                if confidence >= threshold {
                    accepted += 1;
                    wrong += usize::from(class != label);
                }
            }
            RejectionPoint {
                threshold,
                reject_fraction: (predictions.len() - accepted) as f64 / n,
                accepted_error: if accepted == 0 {
                    0.0
                } else {
                    wrong as f64 / accepted as f64
                },
                accepted_empty: accepted == 0,
            }
        })
        .collect())
}

pub fn evaluate(predictions: &[Vec<f64>], labels: &[usize]) -> Result<EvaluationReport, EvalError> {
    evaluate_with_thresholds(predictions, labels, &default_thresholds())
}

pub fn evaluate_with_thresholds(
    predictions: &[Vec<f64>],
    labels: &[usize],
    thresholds: &[f64],
) -> Result<EvaluationReport, EvalError> {
    let classes = check(predictions, labels)?;
    let mut confusion = ConfusionMatrix::new(classes);
    let mut misclassified = Vec::new();
    let mut second_right = 0usize;
    for (index, (p, &truth)) in predictions.iter().zip(labels).enumerate() {
        let (first, confidence) = classify(p);
        confusion.add(truth, first);
        if first != truth {
            let second = second_guess(p);
            second_right += usize::from(second == truth);
            misclassified.push(Misclassified {
                index,
                truth,
                first,
                second,
                confidence,
            });
        }
    }
    let n = predictions.len() as f64;
    let errors = misclassified.len();
    Ok(EvaluationReport {
        total: predictions.len(),
        error_rate: errors as f64 / n,
        confusion,
        top2_error: (errors - second_right) as f64 / n,
        second_guess_correct: if errors == 0 {
            0.0
        } else {
            second_right as f64 / errors as f64
        },
        rejection: rejection_curve(predictions, labels, thresholds)?,
        misclassified,
    })
}

impl EvaluationReport {
    pub fn summary(&self) -> String {
        format!(
            "samples {}\nerror rate {:.4}% ({} errors)\ntop-2 error {:.4}%\nsecond guess correct for {:.2}% of errors\n",
            self.total,
            100.0 * self.error_rate,
            self.misclassified.len(),
            100.0 * self.top2_error,
            100.0 * self.second_guess_correct,
        )
    }

    pub fn rejection_csv(&self) -> String {
        let mut out = String::from("threshold,reject_fraction,accepted_error,accepted_empty\n");
        for r in &self.rejection {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.threshold, r.reject_fraction, r.accepted_error, r.accepted_empty
            );
        }
        out
    }

    pub fn errors_csv(&self) -> String {
        let mut out = String::from("index,truth,first,second,confidence\n");
        for m in &self.misclassified {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.index, m.truth, m.first, m.second, m.confidence
            );
        }
        out
    }

    /// Writes `error`, `confusion.txt`, `confusion.csv`, `rejection.csv` and
    /// `errors.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = [
            ("error", format!("{}\n", self.error_rate)),
            ("confusion.txt", self.confusion.render()),
            ("confusion.csv", self.confusion.to_csv()),
            ("rejection.csv", self.rejection_csv()),
            ("errors.csv", self.errors_csv()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io(&path))?;
        }
        Ok(())
    }
}
