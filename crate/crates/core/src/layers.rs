//! Forward and backward passes of the individual layer types.
//!
//! Layers compute pre-activation outputs; the owning network applies the
//! activation that belongs to each layer position.

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayerError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("pooling size {size} does not divide {height}x{width}")]
    NotDivisible {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("no winner cache for this gradient; run a caching forward pass first")]
    StaleCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

fn expect_shape(t: &Tensor, expected: &[usize]) -> Result<(), LayerError> {
    if t.shape() != expected {
        return Err(LayerError::ShapeMismatch {
            expected: expected.to_vec(),
            actual: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// `x -> a * tanh(b * x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledTanh {
    pub a: f64,
    pub b: f64,
}

impl Default for ScaledTanh {
    fn default() -> Self {
        Self {
            a: 1.7159,
            b: 2.0 / 3.0,
        }
    }
}

impl ScaledTanh {
    pub fn apply(&self, x: f64) -> f64 {
        self.a * (self.b * x).tanh()
    }

    pub fn grad(&self, x: f64) -> f64 {
        let t = (self.b * x).tanh();
        self.a * self.b * (1.0 - t * t)
    }

    /// Derivative expressed through the output `y = apply(x)`.
    pub fn grad_from_output(&self, y: f64) -> f64 {
        let t = y / self.a;
        self.a * self.b * (1.0 - t * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    ScaledTanh(ScaledTanh),
    Linear,
    Softmax,
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss `-ln p[label]` and its gradient with respect to the logits,
/// `p - onehot(label)`.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<(f64, Vec<f64>), LayerError> {
    if label >= p.len() {
        return Err(LayerError::LabelOutOfRange {
            label,
            classes: p.len(),
        });
    }
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let mut grad = p.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Softmax followed by cross-entropy, with the loss taken in log-space so
/// saturated logits do not produce infinities.
pub fn softmax_cross_entropy(
    z: &[f64],
    label: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>), LayerError> {
    if label >= z.len() {
        return Err(LayerError::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let loss = -(z[label] - max - log_sum);
    let p = softmax(z);
    let mut grad = p.clone();
    grad[label] -= 1.0;
    Ok((loss, p, grad))
}

/// Valid, stride-1 convolution connecting every input map to every output map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_maps: usize,
    pub out_maps: usize,
    pub kernel: usize,
    /// `[out_maps, in_maps, kernel, kernel]`
    pub weights: Tensor,
    /// `[out_maps]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(in_maps: usize, out_maps: usize, kernel: usize) -> Self {
        Self {
            in_maps,
            out_maps,
            kernel,
            weights: Tensor::zeros(&[out_maps, in_maps, kernel, kernel])
                .expect("positive conv extents"),
            bias: Tensor::zeros(&[out_maps]).expect("positive conv extents"),
        }
    }

    fn input_dims(&self, input: &Tensor) -> Result<(usize, usize), LayerError> {
        let s = input.shape();
        if s.len() != 3 || s[0] != self.in_maps || s[1] < self.kernel || s[2] < self.kernel {
            return Err(LayerError::ShapeMismatch {
                expected: vec![self.in_maps, self.kernel, self.kernel],
                actual: s.to_vec(),
            });
        }
        Ok((s[1], s[2]))
    }

    pub fn output_shape(&self, height: usize, width: usize) -> [usize; 3] {
        [
            self.out_maps,
            height - self.kernel + 1,
            width - self.kernel + 1,
        ]
    }

    /// Unfolds the input into a `[in_maps * k * k, oh * ow]` patch matrix.
    fn im2col(&self, inp: &[f64], h: usize, w: usize) -> Vec<f64> {
        let k = self.kernel;
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut col = vec![0.0; self.in_maps * k * k * oh * ow];
        for (r, dst) in col.chunks_exact_mut(oh * ow).enumerate() {
            let (i, u, v) = (r / (k * k), (r / k) % k, r % k);
            let in_map = &inp[i * h * w..(i + 1) * h * w];
            for y in 0..oh {
                dst[y * ow..(y + 1) * ow].copy_from_slice(&in_map[(y + u) * w + v..][..ow]);
            }
        }
        col
    }

    /// `out[o,y,x] = bias[o] + sum_{i,u,v} w[o,i,u,v] * in[i,y+u,x+v]`
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, LayerError> {
        let (h, w) = self.input_dims(input)?;
        let k = self.kernel;
        let (oh, ow) = (h - k + 1, w - k + 1);
        let (rows, cols) = (self.in_maps * k * k, oh * ow);
        let col = self.im2col(input.data(), h, w);
        let mut out = vec![0.0; self.out_maps * cols];
        for (o, out_map) in out.chunks_exact_mut(cols).enumerate() {
            out_map.fill(self.bias.data()[o]);
        }
        // out[out_maps, cols] += W[out_maps, rows] * col[rows, cols]
        unsafe {
            matrixmultiply::dgemm(
                self.out_maps,
                rows,
                cols,
                1.0,
                self.weights.data().as_ptr(),
                rows as isize,
                1,
                col.as_ptr(),
                cols as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
        Ok(Tensor::from_vec(&[self.out_maps, oh, ow], out).expect("consistent extents"))
    }

    /// Exact gradients given the forward input and the gradient of the loss
    /// with respect to the (pre-activation) output.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<ConvGrads, LayerError> {
        let (h, w) = self.input_dims(input)?;
        let k = self.kernel;
        let (oh, ow) = (h - k + 1, w - k + 1);
        expect_shape(grad_out, &[self.out_maps, oh, ow])?;
        let (rows, cols) = (self.in_maps * k * k, oh * ow);
        let g = grad_out.data();
        let col = self.im2col(input.data(), h, w);

        let gb: Vec<f64> = g.chunks_exact(cols).map(|m| m.iter().sum()).collect();
        let mut gw = vec![0.0; self.out_maps * rows];
        // gW[out_maps, rows] = G[out_maps, cols] * col^T[cols, rows]
        unsafe {
            matrixmultiply::dgemm(
                self.out_maps,
                cols,
                rows,
                1.0,
                g.as_ptr(),
                cols as isize,
                1,
                col.as_ptr(),
                1,
                cols as isize,
                0.0,
                gw.as_mut_ptr(),
                rows as isize,
                1,
            );
        }

        let gi = want_input_grad.then(|| {
            // gcol[rows, cols] = W^T[rows, out_maps] * G[out_maps, cols]
            let mut gcol = vec![0.0; rows * cols];
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    self.out_maps,
                    cols,
                    1.0,
                    self.weights.data().as_ptr(),
                    1,
                    rows as isize,
                    g.as_ptr(),
                    cols as isize,
                    1,
                    0.0,
                    gcol.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
            let mut gi = vec![0.0; self.in_maps * h * w];
            for (r, src) in gcol.chunks_exact(cols).enumerate() {
                let (i, u, v) = (r / (k * k), (r / k) % k, r % k);
                let gi_map = &mut gi[i * h * w..(i + 1) * h * w];
                for y in 0..oh {
                    let dst = &mut gi_map[(y + u) * w + v..][..ow];
                    for (d, s) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                        *d += s;
                    }
                }
            }
            Tensor::from_vec(input.shape(), gi).expect("input extents")
        });

        Ok(ConvGrads {
            input: gi,
            weights: Tensor::from_vec(self.weights.shape(), gw).expect("weight extents"),
            bias: Tensor::from_vec(&[self.out_maps], gb).expect("bias extents"),
        })
    }
}

/// Max pooling over non-overlapping `size`x`size` regions. The winner cache
/// holds, for every output cell, the flat input offset of the region maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolLayer {
    pub size: usize,
    winners: Option<Vec<usize>>,
    input_shape: Vec<usize>,
}

impl MaxPoolLayer {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            winners: None,
            input_shape: Vec::new(),
        }
    }

    pub fn winners(&self) -> Option<&[usize]> {
        self.winners.as_deref()
    }

    fn pool(
        &self,
        input: &Tensor,
        mut record: Option<&mut Vec<usize>>,
    ) -> Result<Tensor, LayerError> {
        let s = input.shape();
        if s.len() != 3 {
            return Err(LayerError::ShapeMismatch {
                expected: vec![0, 0, 0],
                actual: s.to_vec(),
            });
        }
        let (m, h, w, p) = (s[0], s[1], s[2], self.size);
        if h % p != 0 || w % p != 0 {
            return Err(LayerError::NotDivisible {
                size: p,
                height: h,
                width: w,
            });
        }
        let (oh, ow) = (h / p, w / p);
        let data = input.data();
        let mut out = Vec::with_capacity(m * oh * ow);
        for map in 0..m {
            let base = map * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * p * w + ox * p;
                    for dy in 0..p {
                        let row = base + (oy * p + dy) * w + ox * p;
                        for dx in 0..p {
                            // strict comparison keeps the first (smallest offset) maximum
                            if data[row + dx] > data[best] {
                                best = row + dx;
                            }
                        }
                    }
                    out.push(data[best]);
                    if let Some(r) = record.as_deref_mut() {
                        r.push(best);
                    }
                }
            }
        }
        Ok(Tensor::from_vec(&[m, oh, ow], out).expect("pooled extents"))
    }

    /// Pools and caches the winners for a following [`Self::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, LayerError> {
        self.winners = None;
        let mut winners = Vec::new();
        let out = self.pool(input, Some(&mut winners))?;
        self.winners = Some(winners);
        self.input_shape = input.shape().to_vec();
        Ok(out)
    }

    /// Pools without touching the cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, LayerError> {
        self.pool(input, None)
    }

    /// Routes each output gradient to its region winner; all other inputs get zero.
    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor, LayerError> {
        let winners = self.winners.as_ref().ok_or(LayerError::StaleCache)?;
        if grad_out.len() != winners.len() || grad_out.shape().len() != 3 {
            return Err(LayerError::StaleCache);
        }
        let s = &self.input_shape;
        if grad_out.shape() != [s[0], s[1] / self.size, s[2] / self.size] {
            return Err(LayerError::StaleCache);
        }
        let mut gi = Tensor::zeros(s).expect("cached input extents");
        let dst = gi.data_mut();
        for (&idx, &g) in winners.iter().zip(grad_out.data()) {
            dst[idx] = g;
        }
        Ok(gi)
    }
}

/// Affine map `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullyLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weights: Tensor,
    /// `[outputs]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullyGrads {
    pub input: Vec<f64>,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl FullyLayer {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: Tensor::zeros(&[outputs, inputs]).expect("positive extents"),
            bias: Tensor::zeros(&[outputs]).expect("positive extents"),
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), LayerError> {
        if x.len() != self.inputs {
            return Err(LayerError::ShapeMismatch {
                expected: vec![self.inputs],
                actual: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Spatial inputs are consumed in their row-major `[map][row][col]` order.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LayerError> {
        self.check(x)?;
        Ok(self
            .weights
            .data()
            .chunks_exact(self.inputs)
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<FullyGrads, LayerError> {
        self.check(x)?;
        if grad_out.len() != self.outputs {
            return Err(LayerError::ShapeMismatch {
                expected: vec![self.outputs],
                actual: vec![grad_out.len()],
            });
        }
        let mut gw = vec![0.0; self.inputs * self.outputs];
        let mut gi = vec![0.0; self.inputs];
        for ((g_row, w_row), &g) in gw
            .chunks_exact_mut(self.inputs)
            .zip(self.weights.data().chunks_exact(self.inputs))
            .zip(grad_out)
        {
            for ((gwv, xv), (giv, wv)) in g_row.iter_mut().zip(x).zip(gi.iter_mut().zip(w_row)) {
                *gwv = g * xv;
                *giv += g * wv;
            }
        }
        Ok(FullyGrads {
            input: gi,
            weights: Tensor::from_vec(&[self.outputs, self.inputs], gw).expect("weight extents"),
            bias: Tensor::from_vec(&[self.outputs], grad_out.to_vec()).expect("bias extents"),
        })
    }
}
