//! A feed-forward network assembled from a [`NetDescriptor`].
//!
//! Convolutional and hidden fully connected layers use the scaled tanh,
//! pooling layers are linear and the output layer is a softmax trained with
//! cross-entropy.

use crate::descriptor::{LayerSpec, NetDescriptor, Shape};
use crate::layers::{
    softmax, softmax_cross_entropy, Activation, ConvLayer, FullyLayer, LayerError, MaxPoolLayer,
    ScaledTanh,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("input shape {actual:?} does not match network input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("expected {expected} parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Pool(MaxPoolLayer),
    Fully(FullyLayer),
}

impl Layer {
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv(c) => Some((&c.weights, &c.bias)),
            Layer::Fully(f) => Some((&f.weights, &f.bias)),
            Layer::Pool(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Fully(f) => Some((&mut f.weights, &mut f.bias)),
            Layer::Pool(_) => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(w, b)| w.len() + b.len()).unwrap_or(0)
    }
}

/// Per-layer parameter gradients, aligned with [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Tensor, Tensor)>>,
}

impl Gradients {
    /// Flattened in the same order as [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter().flatten() {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }
}

/// Activations recorded by [`Network::forward_train`]; `outputs[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    outputs: Vec<Tensor>,
    probs: Vec<f64>,
}

impl ForwardPass {
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer").data()
    }
}

#[derive(Debug, Clone)]
pub struct Backprop {
    pub loss: f64,
    pub grads: Gradients,
    pub input_grad: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    descriptor: NetDescriptor,
    layers: Vec<Layer>,
    tanh: ScaledTanh,
}

impl Network {
    /// Builds a network with all parameters zero.
    pub fn new(descriptor: NetDescriptor) -> Self {
        let mut layers = Vec::with_capacity(descriptor.layers().len() - 1);
        for (i, spec) in descriptor.layers().iter().enumerate().skip(1) {
            let prev = descriptor.shapes()[i - 1];
            let layer = match *spec {
                LayerSpec::Conv { maps, kernel } => {
                    let Shape::Spatial { maps: in_maps, .. } = prev else {
                        unreachable!("descriptor validated spatial input")
                    };
                    Layer::Conv(ConvLayer::new(in_maps, maps, kernel))
                }
                LayerSpec::MaxPool { size } => Layer::Pool(MaxPoolLayer::new(size)),
                LayerSpec::Fully { units } => Layer::Fully(FullyLayer::new(prev.len(), units)),
                LayerSpec::Input { .. } => unreachable!("input is always first"),
            };
            layers.push(layer);
        }
        Self {
            descriptor,
            layers,
            tanh: ScaledTanh::default(),
        }
    }

    pub fn with_activation(mut self, tanh: ScaledTanh) -> Self {
        self.tanh = tanh;
        self
    }

    pub fn descriptor(&self) -> &NetDescriptor {
        &self.descriptor
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.descriptor.class_count()
    }

    /// Activation applied after layer `i` of [`Self::layers`].
    pub fn activation(&self, i: usize) -> Activation {
        match self.layers[i] {
            Layer::Pool(_) => Activation::Linear,
            Layer::Fully(_) if i + 1 == self.layers.len() => Activation::Softmax,
            _ => Activation::ScaledTanh(self.tanh),
        }
    }

    /// Draws every weight and bias from U[-0.05, 0.05), layer by layer,
    /// weights before biases, each in row-major order.
    pub fn init_weights(&mut self, rng: &mut Rng) {
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                w.fill_uniform(rng, -INIT_RANGE, INIT_RANGE)
                    .expect("valid range");
                b.fill_uniform(rng, -INIT_RANGE, INIT_RANGE)
                    .expect("valid range");
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NetError> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(NetError::ParamCount {
                expected,
                actual: values.len(),
            });
        }
        let mut rest = values;
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            let (head, tail) = rest.split_at(w.len());
            w.data_mut().copy_from_slice(head);
            let (head, tail) = tail.split_at(b.len());
            b.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NetError> {
        let (m, h, w) = self.descriptor.input_shape();
        if x.shape() != [m, h, w] {
            return Err(NetError::InputShape {
                expected: vec![m, h, w],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn squash(&self, t: Tensor) -> Tensor {
        let act = self.tanh;
        let mut t = t;
        for v in t.data_mut() {
            *v = act.apply(*v);
        }
        t
    }

    /// Output-layer logits, without touching any cache.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv(c) => self.squash(c.forward(&cur)?),
                Layer::Pool(p) => p.infer(&cur)?,
                Layer::Fully(f) => {
                    let out = f.forward(cur.data())?;
                    let t = Tensor::from_vec(&[out.len()], out).expect("non-empty layer");
                    if i == last {
                        t
                    } else {
                        self.squash(t)
                    }
                }
            };
        }
        Ok(cur.into_data())
    }

    /// Class probabilities for one input.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>, NetError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Forward pass that records activations and pooling winners for [`Self::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<ForwardPass, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let tanh = self.tanh;
        let squash = |mut t: Tensor| {
            for v in t.data_mut() {
                *v = tanh.apply(*v);
            }
            t
        };
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.clone());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prev = outputs.last().expect("input pushed");
            let next = match layer {
                Layer::Conv(c) => squash(c.forward(prev)?),
                Layer::Pool(p) => p.forward(prev)?,
                Layer::Fully(f) => {
                    let out = f.forward(prev.data())?;
                    let t = Tensor::from_vec(&[out.len()], out).expect("non-empty layer");
                    if i == last {
                        t
                    } else {
                        squash(t)
                    }
                }
            };
            outputs.push(next);
        }
        let probs = softmax(outputs.last().expect("output layer").data());
        Ok(ForwardPass { outputs, probs })
    }

    /// Cross-entropy loss of `label` and exact gradients of every parameter
    /// (and optionally of the input) for the pass recorded by `forward_train`.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        label: usize,
        want_input_grad: bool,
    ) -> Result<Backprop, NetError> {
        let (loss, _, mut grad) = softmax_cross_entropy(pass.logits(), label)?;
        let mut grad =
            Tensor::from_vec(&[grad.len()], std::mem::take(&mut grad)).expect("non-empty output");
        let last = self.layers.len() - 1;
        let mut grads: Vec<Option<(Tensor, Tensor)>> = vec![None; self.layers.len()];
        let mut input_grad = None;

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &pass.outputs[i];
            let output = &pass.outputs[i + 1];
            let need_input = i > 0 || want_input_grad;
            if !matches!(layer, Layer::Pool(_)) && i != last {
                for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                    *g *= self.tanh.grad_from_output(y);
                }
            }
            let prev_grad = match layer {
                Layer::Conv(c) => {
                    let g = c.backward(input, &grad, need_input)?;
                    grads[i] = Some((g.weights, g.bias));
                    g.input
                }
                Layer::Pool(p) => Some(p.backward(&grad)?),
                Layer::Fully(f) => {
                    let g = f.backward(input.data(), grad.data())?;
                    grads[i] = Some((g.weights, g.bias));
                    Some(Tensor::from_vec(input.shape(), g.input).expect("input extents"))
                }
            };
            match prev_grad {
                Some(g) if i > 0 => grad = g,
                Some(g) => input_grad = want_input_grad.then_some(g),
                None => break,
            }
        }

        Ok(Backprop {
            loss,
            grads: Gradients { layers: grads },
            input_grad,
        })
    }

    /// `w <- w - eta * grad` for every parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients, eta: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g) {
                for (p, d) in w.data_mut().iter_mut().zip(gw.data()) {
                    *p -= eta * d;
                }
                for (p, d) in b.data_mut().iter_mut().zip(gb.data()) {
                    *p -= eta * d;
                }
            }
        }
    }

    /// One online SGD step on a single sample; returns the loss before the update.
    pub fn train_step(&mut self, x: &Tensor, label: usize, eta: f64) -> Result<f64, NetError> {
        let pass = self.forward_train(x)?;
        let bp = self.backward(&pass, label, false)?;
        self.apply_gradients(&bp.grads, eta);
        Ok(bp.loss)
    }

    /// Loss of one sample without side effects.
    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64, NetError> {
        let (loss, _, _) = softmax_cross_entropy(&self.logits(x)?, label)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Network {
        let mut net = Network::new(NetDescriptor::parse("1x8x8-3C3-MP2-4C2-MP2-5N-3N").unwrap());
        net.init_weights(&mut Rng::new(1));
        net
    }

    #[test]
    fn activations_by_position() {
        let net = tiny();
        assert!(matches!(net.activation(0), Activation::ScaledTanh(_)));
        assert_eq!(net.activation(1), Activation::Linear);
        assert!(matches!(net.activation(4), Activation::ScaledTanh(_)));
        assert_eq!(net.activation(5), Activation::Softmax);
    }

    #[test]
    fn params_round_trip() {
        let mut net = tiny();
        let p = net.params();
        assert_eq!(p.len(), net.descriptor().total_params());
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        net.set_params(&doubled).unwrap();
        assert_eq!(net.params(), doubled);
        assert!(matches!(
            net.set_params(&[0.0]),
            Err(NetError::ParamCount { .. })
        ));
    }

    #[test]
    fn init_range_and_determinism() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a.params(), b.params());
        assert!(a.params().iter().all(|v| (-0.05..0.05).contains(v)));
    }

    #[test]
    fn predict_matches_training_forward() {
        let mut net = tiny();
        let mut x = Tensor::zeros(&[1, 8, 8]).unwrap();
        x.fill_uniform(&mut Rng::new(3), -1.0, 1.0).unwrap();
        let p = net.predict(&x).unwrap();
        let pass = net.forward_train(&x).unwrap();
        assert_eq!(p, pass.probabilities());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_shape() {
        let net = tiny();
        assert!(matches!(
            net.predict(&Tensor::zeros(&[1, 9, 9]).unwrap()),
            Err(NetError::InputShape { .. })
        ));
    }

    #[test]
    fn zero_eta_leaves_params() {
        let mut net = tiny();
        let before = net.params();
        let x = Tensor::new(&[1, 8, 8], 0.3).unwrap();
        net.train_step(&x, 1, 0.0).unwrap();
        assert_eq!(before, net.params());
    }
}
