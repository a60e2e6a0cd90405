use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::tensor::Tensor2;
use crate::error::{CovrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer followed by an activation. Weights are `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Fully connected network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer activations recorded by a batched forward pass; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    activations: Vec<Tensor2>,
}

impl MlpTrace {
    pub fn output(&self) -> &Tensor2 {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor2 {
        &self.activations[0]
    }
}

/// Parameter gradients laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Tensor2, Vec<f64>)>,
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.add_assign(ow);
            for (x, y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &self.layers {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum()
    }
}

impl Mlp {
    /// Random network: weights and biases uniform in `±1/√fan_in`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let mut mlp = Mlp::zeros(sizes, hidden, output);
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.weights.rows() as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = rng.uniform_range(-bound, bound);
            }
            for b in &mut layer.bias {
                *b = rng.uniform_range(-bound, bound);
            }
        }
        mlp
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                weights: Tensor2::zeros(sizes[i], sizes[i + 1]),
                bias: vec![0.0; sizes[i + 1]],
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CovrError::config("mlp", "no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.cols() {
                return Err(CovrError::dimension(
                    format!("bias of layer {i}"),
                    l.weights.cols(),
                    l.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].weights.cols() != l.weights.rows() {
                return Err(CovrError::dimension(
                    format!("input of layer {i}"),
                    layers[i - 1].weights.cols(),
                    l.weights.rows(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.rows()];
        s.extend(self.layers.iter().map(|l| l.weights.cols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.cols()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor2::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.output().data().to_vec())
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward_batch(&self, input: &Tensor2) -> Result<MlpTrace> {
        if input.cols() != self.input_dim() {
            return Err(CovrError::dimension(
                "mlp input",
                self.input_dim(),
                input.cols(),
            ));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let out = affine(x, layer);
            activations.push(out);
        }
        Ok(MlpTrace { activations })
    }

    /// Backpropagates `output_grad` (dLoss/dOutput, one row per sample) through
    /// the recorded trace. The input gradient is only computed on request.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        output_grad: &Tensor2,
        want_input_grad: bool,
    ) -> Result<(MlpGrads, Option<Tensor2>)> {
        let out = trace.output();
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return Err(CovrError::dimension(
                "mlp output gradient",
                out.rows() * out.cols(),
                output_grad.rows() * output_grad.cols(),
            ));
        }
        let batch = out.rows();
        let mut upstream = output_grad.clone();
        let mut grads: Vec<(Tensor2, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut input_grad = None;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.activations[l + 1];
            let x = &trace.activations[l];
            let fan_in = layer.weights.rows();
            let fan_out = layer.weights.cols();
            let mut delta = upstream;
            for (d, &yv) in delta.data_mut().iter_mut().zip(y.data()) {
                *d *= layer.activation.derivative_from_output(yv);
            }
            let mut dw = Tensor2::zeros(fan_in, fan_out);
            let mut db = vec![0.0; fan_out];
            for b in 0..batch {
                let drow = delta.row(b);
                for (acc, &d) in db.iter_mut().zip(drow) {
                    *acc += d;
                }
                for (i, &xv) in x.row(b).iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (acc, &d) in dw.row_mut(i).iter_mut().zip(drow) {
                        *acc += xv * d;
                    }
                }
            }
            if !dw.is_finite() || db.iter().any(|v| !v.is_finite()) {
                return Err(CovrError::non_finite("gradient of layer", l));
            }
            let need_dx = l > 0 || want_input_grad;
            let next = if need_dx {
                let mut dx = Tensor2::zeros(batch, fan_in);
                for b in 0..batch {
                    let drow = delta.row(b);
                    let dxrow = dx.row_mut(b);
                    for (i, slot) in dxrow.iter_mut().enumerate() {
                        *slot = dot(layer.weights.row(i), drow);
                    }
                }
                Some(dx)
            } else {
                None
            };
            grads.push((dw, db));
            match next {
                Some(dx) if l > 0 => upstream = dx,
                Some(dx) => {
                    input_grad = Some(dx);
                    upstream = Tensor2::zeros(0, 0);
                }
                None => upstream = Tensor2::zeros(0, 0),
            }
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, input_grad))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        Tensor2::zeros(l.weights.rows(), l.weights.cols()),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
        }
    }

    /// Parameter blocks in a fixed order: `w0, b0, w1, b1, …`.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights.data());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weights.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    /// `self ← (1 − tau)·self + tau·source`, parameter by parameter.
    pub fn blend_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (1.0 - tau) * *d + tau * s;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn affine(x: &Tensor2, layer: &Layer) -> Tensor2 {
    let fan_out = layer.weights.cols();
    let mut out = Tensor2::zeros(x.rows(), fan_out);
    for b in 0..x.rows() {
        let orow = out.row_mut(b);
        orow.copy_from_slice(&layer.bias);
        // Pixel inputs are mostly zero; skipping them does not change the sum.
        for (i, &xv) in x.row(b).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &w) in orow.iter_mut().zip(layer.weights.row(i)) {
                *o += xv * w;
            }
        }
        for o in orow.iter_mut() {
            *o = layer.activation.apply(*o);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, b: f64, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weights: Tensor2::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![b],
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn identity_net_passes_input_through() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Identity, Activation::Identity);
        net.layers_mut()[0].weights.set(0, 0, 1.0);
        net.layers_mut()[0].weights.set(1, 1, 1.0);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn tanh_single_layer() {
        let net = single(2.0, 1.0, Activation::Tanh);
        let y = net.forward(&[0.0]).unwrap();
        assert!((y[0] - 1f64.tanh()).abs() < 1e-15);
        assert!((y[0] - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        assert_eq!(net.forward(&[0.3, -7.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh, Activation::Identity);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(CovrError::Dimension { expected: 3, actual: 1, .. })
        ));
    }

    #[test]
    fn linear_gradient_equals_input() {
        let net = single(3.0, 0.0, Activation::Identity);
        let x = Tensor2::from_vec(1, 1, vec![1.7]).unwrap();
        let trace = net.forward_batch(&x).unwrap();
        let (g, _) = net
            .backward(&trace, &Tensor2::from_vec(1, 1, vec![1.0]).unwrap(), false)
            .unwrap();
        assert_eq!(g.layers[0].0.get(0, 0), 1.7);
    }

    #[test]
    fn tanh_gradient_hand_chain_rule() {
        let net = single(1.0, 0.0, Activation::Tanh);
        let x = Tensor2::from_vec(1, 1, vec![0.5]).unwrap();
        let trace = net.forward_batch(&x).unwrap();
        let (g, _) = net
            .backward(&trace, &Tensor2::from_vec(1, 1, vec![1.0]).unwrap(), false)
            .unwrap();
        let expected = 0.5 * (1.0 - 0.5f64.tanh().powi(2));
        assert!((g.layers[0].0.get(0, 0) - expected).abs() < 1e-15);
        assert!((g.layers[0].0.get(0, 0) - 0.39322).abs() < 1e-5);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let net = Mlp::zeros(&[1, 1, 1], Activation::Identity, Activation::Identity);
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let trace = net.forward_batch(&x).unwrap();
        let err = net
            .backward(&trace, &Tensor2::from_vec(1, 1, vec![f64::NAN]).unwrap(), false)
            .unwrap_err();
        assert!(matches!(err, CovrError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn param_count_formula() {
        let mut rng = RngStream::new(0);
        let net = Mlp::new(&[4, 8, 2], Activation::Relu, Activation::Identity, &mut rng);
        assert_eq!(net.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = RngStream::new(9);
        let net = Mlp::new(&[16, 4], Activation::Tanh, Activation::Identity, &mut rng);
        assert!(net.params().iter().flat_map(|b| b.iter()).all(|w| w.abs() <= 0.25));
    }
}
