//! Columns and their democratic average.

use crate::network::{NetError, Network};
use crate::preprocess::{PreprocessError, Preprocessor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble has no columns")]
    Empty,
    #[error("column {index} predicts {found} classes, expected {expected}")]
    ClassMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("rejection threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// One trained network bound to the preprocessor it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub network: Network,
    pub preprocessor: Preprocessor,
    pub seed: u64,
}

impl Column {
    pub fn new(network: Network, preprocessor: Preprocessor, seed: u64) -> Self {
        Self {
            network,
            preprocessor,
            seed,
        }
    }

    pub fn class_count(&self) -> usize {
        self.network.class_count()
    }

    /// Preprocesses a raw image and returns the softmax output.
    pub fn predict(&self, raw: &Tensor) -> Result<Vec<f64>, EnsembleError> {
        let x = self.preprocessor.apply(raw)?;
        Ok(self.network.predict(&x)?)
    }

    /// Softmax output for an image that has already been preprocessed.
    pub fn predict_preprocessed(&self, x: &Tensor) -> Result<Vec<f64>, EnsembleError> {
        Ok(self.network.predict(x)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    columns: Vec<Column>,
    class_count: usize,
}

impl Ensemble {
    pub fn new(columns: Vec<Column>) -> Result<Self, EnsembleError> {
        let class_count = columns.first().ok_or(EnsembleError::Empty)?.class_count();
        for (index, c) in columns.iter().enumerate() {
            if c.class_count() != class_count {
                return Err(EnsembleError::ClassMismatch {
                    index,
                    expected: class_count,
                    found: c.class_count(),
                });
            }
        }
        Ok(Self {
            columns,
            class_count,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn predict(&self, raw: &Tensor) -> Result<Vec<f64>, EnsembleError> {
        let outputs = self
            .columns
            .iter()
            .map(|c| c.predict(raw))
            .collect::<Result<Vec<_>, _>>()?;
        average(&outputs)
    }
}

/// Unweighted mean of probability vectors, summed in the given order.
pub fn average(outputs: &[Vec<f64>]) -> Result<Vec<f64>, EnsembleError> {
    let first = outputs.first().ok_or(EnsembleError::Empty)?;
    let mut sum = vec![0.0; first.len()];
    for (index, p) in outputs.iter().enumerate() {
        if p.len() != sum.len() {
            return Err(EnsembleError::ClassMismatch {
                index,
                expected: sum.len(),
                found: p.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let n = outputs.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Argmax class (ties to the smallest index) and its probability.
pub fn classify(p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    (best, p[best])
}

/// Class with the second-largest probability, same tie rule.
pub fn second_guess(p: &[f64]) -> usize {
    let (first, _) = classify(p);
    let mut best = usize::from(first == 0);
    for (i, &v) in p.iter().enumerate() {
        if i != first && v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Class(usize),
    Reject,
}

/// Rejects when the top probability is below `threshold`.
pub fn classify_with_reject(p: &[f64], threshold: f64) -> Result<Decision, EnsembleError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EnsembleError::InvalidThreshold(threshold));
    }
    let (class, confidence) = classify(p);
    Ok(if confidence < threshold {
        Decision::Reject
    } else {
        Decision::Class(class)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::NetDescriptor;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn column(seed: u64) -> Column {
        let d = NetDescriptor::parse("1x12x12-4C3-MP2-10N").unwrap();
        let mut net = Network::new(d);
        net.init_weights(&mut Rng::new(seed));
        Column::new(net, Preprocessor::Original, seed)
    }

    fn image(seed: u64) -> Tensor {
        let mut t = Tensor::zeros(&[1, 12, 12]).unwrap();
        t.fill_uniform(&mut Rng::new(seed), -1.0, 1.0).unwrap();
        t
    }

    #[test]
    fn average_examples() {
        let p = average(&[vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        assert_eq!(average(&[]), Err(EnsembleError::Empty));
    }

    #[test]
    fn column_output_is_near_uniform_and_deterministic() {
        let c = column(1);
        let x = image(2);
        let p = c.predict(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| (v - 0.1).abs() <= 0.2));
        assert_eq!(p, c.predict(&x).unwrap());
    }

    #[test]
    fn single_column_ensemble_matches_column() {
        let c = column(3);
        let e = Ensemble::new(vec![c.clone()]).unwrap();
        let x = image(4);
        assert_eq!(e.predict(&x).unwrap(), c.predict(&x).unwrap());
    }

    #[test]
    fn ensemble_rejects_mismatch_and_empty() {
        let d = NetDescriptor::parse("1x12x12-4C3-MP2-5N").unwrap();
        let other = Column::new(Network::new(d), Preprocessor::Original, 0);
        assert!(matches!(
            Ensemble::new(vec![column(1), other]),
            Err(EnsembleError::ClassMismatch { index: 1, .. })
        ));
        assert_eq!(Ensemble::new(vec![]), Err(EnsembleError::Empty));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&[0.1, 0.7, 0.2]), (1, 0.7));
        assert_eq!(classify(&[0.25; 4]).0, 0);
        assert_eq!(second_guess(&[0.1, 0.7, 0.2]), 2);
        assert_eq!(second_guess(&[0.7, 0.3]), 1);
        assert_eq!(second_guess(&[0.3, 0.7]), 0);
        assert_eq!(second_guess(&[0.25; 4]), 1);
    }

    #[test]
    fn reject_examples() {
        assert_eq!(
            classify_with_reject(&[0.5, 0.5], 0.51).unwrap(),
            Decision::Reject
        );
        assert_eq!(
            classify_with_reject(&[0.5, 0.5], 0.0).unwrap(),
            Decision::Class(0)
        );
        assert_eq!(
            classify_with_reject(&[0.0, 1.0], 1.0).unwrap(),
            Decision::Class(1)
        );
        assert_eq!(
            classify_with_reject(&[0.01, 0.99], 1.0).unwrap(),
            Decision::Reject
        );
        assert!(classify_with_reject(&[0.5, 0.5], 1.0 + 1e-9).is_err());
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn mean_is_a_distribution(ps in prop::collection::vec(distribution(5), 1..6)) {
            let m = average(&ps).unwrap();
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(m.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn duplicating_columns_keeps_class(ps in prop::collection::vec(distribution(4), 1..6)) {
            let once = average(&ps).unwrap();
            let mut twice = ps.clone();
            twice.extend(ps.iter().cloned());
            let doubled = average(&twice).unwrap();
            for (a, b) in once.iter().zip(&doubled) {
                prop_assert!((a - b).abs() < 1e-14);
            }
            let (c1, p1) = classify(&once);
            let (c2, _) = classify(&doubled);
            let runner_up = once[second_guess(&once)];
            if p1 - runner_up > 1e-12 {
                prop_assert_eq!(c1, c2);
            }
        }

        #[test]
        fn column_order_only_perturbs_rounding(ps in prop::collection::vec(distribution(4), 1..6)) {
            let mut rev = ps.clone();
            rev.reverse();
            let a = average(&ps).unwrap();
            let b = average(&rev).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-14);
            }
            prop_assert_eq!(average(&ps).unwrap(), a);
        }

        #[test]
        fn rejected_set_grows_with_threshold(
            ps in prop::collection::vec(distribution(3), 1..30),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            for p in &ps {
                if classify_with_reject(p, lo).unwrap() == Decision::Reject {
                    prop_assert_eq!(classify_with_reject(p, hi).unwrap(), Decision::Reject);
                }
            }
        }
    }
}
