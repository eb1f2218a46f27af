//! Dense row-major tensors of `f64`.

use std::fmt;

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("invalid range [{lo}, {hi}): lower bound must be below upper bound")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("shape {shape:?} holds {expected} values, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("index {index:?} out of bounds for shape {shape:?}")]
    OutOfBounds {
        index: Vec<usize>,
        shape: Vec<usize>,
    },
}

/// A dense multi-dimensional array. `data.len()` always equals the product
/// of the extents.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// A tensor of the given shape with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected: len,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data)
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize, TensorError> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(&i, &e)| i >= e) {
            return Err(TensorError::OutOfBounds {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| acc * e + i))
    }

    pub fn get(&self, index: &[usize]) -> Result<f64, TensorError> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<(), TensorError> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Overwrites every element with an i.i.d. draw from U[lo, hi), one draw
    /// per element in row-major order.
    pub fn fill_uniform(&mut self, rng: &mut Rng, lo: f64, hi: f64) -> Result<(), TensorError> {
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(TensorError::InvalidRange { lo, hi });
        }
        for v in &mut self.data {
            *v = rng.uniform(lo, hi);
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reduce(&self, init: f64, op: impl Fn(f64, f64) -> f64) -> f64 {
        reduce(&self.data, init, op)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.reduce(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.reduce(f64::NEG_INFINITY, f64::max)
    }
}

/// Left fold over a slice; the empty slice reduces to `init`.
pub fn reduce(values: &[f64], init: f64, op: impl Fn(f64, f64) -> f64) -> f64 {
    values.iter().fold(init, |acc, &v| op(acc, v))
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills() {
        assert_eq!(Tensor::new(&[2, 2], 0.0).unwrap().data(), &[0.0; 4]);
        assert_eq!(Tensor::new(&[3], 1.5).unwrap().data(), &[1.5; 3]);
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert_eq!(
            Tensor::new(&[2, 0], 0.0),
            Err(TensorError::InvalidShape(vec![2, 0]))
        );
        assert!(Tensor::new(&[], 0.0).is_err());
    }

    #[test]
    fn write_then_read_every_index() {
        let mut t = Tensor::zeros(&[3, 4, 5]).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    let v = (i * 100 + j * 10 + k) as f64;
                    t.set(&[i, j, k], v).unwrap();
                    assert_eq!(t.offset(&[i, j, k]).unwrap(), i * 20 + j * 5 + k);
                }
            }
        }
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    assert_eq!(t.get(&[i, j, k]).unwrap(), (i * 100 + j * 10 + k) as f64);
                }
            }
        }
        assert!(t.get(&[3, 0, 0]).is_err());
    }

    #[test]
    fn fill_uniform_range_and_determinism() {
        let mut a = Tensor::zeros(&[4]).unwrap();
        a.fill_uniform(&mut Rng::new(42), -0.05, 0.05).unwrap();
        assert!(a.data().iter().all(|v| (-0.05..0.05).contains(v)));

        let mut b = Tensor::zeros(&[4]).unwrap();
        b.fill_uniform(&mut Rng::new(42), -0.05, 0.05).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fill_uniform_degenerate_range() {
        let mut t = Tensor::zeros(&[16]).unwrap();
        let lo = 0.3;
        t.fill_uniform(&mut Rng::new(1), lo, lo + 1e-12).unwrap();
        assert!(t.data().iter().all(|v| (v - lo).abs() <= 1e-12));
        assert!(matches!(
            t.fill_uniform(&mut Rng::new(1), 0.5, 0.5),
            Err(TensorError::InvalidRange { .. })
        ));
    }

    #[test]
    fn fill_uniform_mean_is_centered() {
        let mut t = Tensor::zeros(&[1_000_000]).unwrap();
        t.fill_uniform(&mut Rng::new(2024), -0.05, 0.05).unwrap();
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.001, "mean {mean}");
    }

    #[test]
    fn elementwise_and_reduce() {
        let t = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        assert_eq!(t.map(f64::abs).data(), &[1.0, 2.0]);
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.reduce(0.0, |a, b| a + b), 6.0);
        assert_eq!(reduce(&[], 0.0, |a, b| a + b), 0.0);
    }
}
