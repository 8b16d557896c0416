//! Fully connected networks with hand-written backpropagation.
//!
//! Weights are stored `(fan_out, fan_in)` and batches are row-major `(batch, features)`,
//! so a layer computes `z = a · Wᵀ + b`. [`Network::forward`] accepts an optional set of
//! effective weights: the stochastic delta rule evaluates the network at sampled weights
//! while the network itself keeps the means.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    /// Only valid on the final layer, paired with cross-entropy.
    Softmax,
}

impl Activation {
    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Sigmoid => z.map(sigmoid),
            Activation::Tanh => z.map(f64::tanh),
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// Elementwise derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Softmax => unreachable!("softmax has no elementwise derivative"),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Categorical with a softmax head, binary (elementwise) with a sigmoid head.
    CrossEntropy,
    /// `(1 / 2n) Σ (y − t)²` over the batch.
    Mse,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::CrossEntropy => "cross_entropy",
            Loss::Mse => "mse",
        })
    }
}

impl FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross_entropy" | "ce" => Ok(Loss::CrossEntropy),
            "mse" => Ok(Loss::Mse),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

/// Which regularizer drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sdr,
    Dropout,
    #[serde(rename = "none")]
    Plain,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sdr => "sdr",
            Mode::Dropout => "dropout",
            Mode::Plain => "none",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sdr" => Ok(Mode::Sdr),
            "dropout" => Ok(Mode::Dropout),
            "none" | "plain" => Ok(Mode::Plain),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::ShapeMismatch {
                op: "layer bias",
                left: weights.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    /// Xavier-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn xavier(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Layer {
            weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    loss: Loss,
    mode: Mode,
}

/// Per-layer weight and bias gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Everything `backward` needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass<'a> {
    weights: Vec<&'a Matrix>,
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl ForwardPass<'_> {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("network has at least one layer")
    }

    /// Post-activation (and post-mask) output of every layer.
    pub fn activations(&self) -> &[Matrix] {
        &self.post
    }
}

impl Network {
    /// Builds `sizes[0] → … → sizes[last]` with Xavier-uniform weights.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        loss: Loss,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidNetwork(format!("bad layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::xavier(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self::from_layers(layers, loss, mode)
    }

    pub fn from_layers(layers: Vec<Layer>, loss: Loss, mode: Mode) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidNetwork("no layers".into()));
        };
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} emits {} units but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| l.activation == Activation::Softmax)
        {
            return Err(Error::InvalidNetwork(
                "softmax is only allowed on the final layer".into(),
            ));
        }
        match (loss, last.activation) {
            (Loss::CrossEntropy, Activation::Softmax | Activation::Sigmoid) => {}
            (Loss::CrossEntropy, other) => {
                return Err(Error::InvalidNetwork(format!(
                    "cross-entropy needs a softmax or sigmoid head, got {other}"
                )))
            }
            (Loss::Mse, Activation::Softmax) => {
                return Err(Error::InvalidNetwork("softmax head requires cross-entropy".into()))
            }
            (Loss::Mse, _) => {}
        }
        Ok(Network { layers, loss, mode })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// `(fan_out, fan_in)` per layer.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.shape()).collect()
    }

    pub fn weights(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| &l.weights).collect()
    }

    pub fn set_weights(&mut self, weights: &[Matrix]) -> Result<()> {
        self.check_weights(weights)?;
        for (layer, w) in self.layers.iter_mut().zip(weights) {
            layer.weights.clone_from(w);
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[Matrix]) -> Result<()> {
        if weights.len() != self.layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                self.layers.len()
            )));
        }
        for (layer, w) in self.layers.iter().zip(weights) {
            layer.weights.check_same_shape(w, "effective weights")?;
        }
        Ok(())
    }

    /// Forward pass with the network's own weights, or with `effective` ones.
    pub fn forward<'a>(&'a self, batch: &Matrix, effective: Option<&'a [Matrix]>) -> Result<ForwardPass<'a>> {
        self.forward_masked(batch, effective, &[])
    }

    /// Forward pass where `masks[l]`, when present, multiplies layer `l`'s output.
    /// Masks are only accepted on hidden layers.
    pub fn forward_masked<'a>(
        &'a self,
        batch: &Matrix,
        effective: Option<&'a [Matrix]>,
        masks: &[Option<Matrix>],
    ) -> Result<ForwardPass<'a>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward input",
                left: batch.shape(),
                right: (batch.rows(), self.input_dim()),
            });
        }
        let weights: Vec<&Matrix> = match effective {
            Some(w) => {
                self.check_weights(w)?;
                w.iter().collect()
            }
            None => self.weights(),
        };
        if masks.len() > self.layers.len() {
            return Err(Error::InvalidNetwork("more masks than layers".into()));
        }
        if masks.len() == self.layers.len() && masks[masks.len() - 1].is_some() {
            return Err(Error::InvalidNetwork(
                "masks are never applied to the output layer".into(),
            ));
        }

        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Matrix> = Vec::with_capacity(n);
        let mut kept_masks = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { batch } else { &post[l - 1] };
            let mut z = matmul_nt(input, weights[l])?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut a = layer.activation.apply(&z);
            let mask = masks.get(l).cloned().flatten();
            if let Some(m) = &mask {
                a = a.hadamard(m)?;
            }
            pre.push(z);
            post.push(a);
            kept_masks.push(mask);
        }
        Ok(ForwardPass {
            weights,
            input: batch.clone(),
            pre,
            post,
            masks: kept_masks,
        })
    }

    /// Mean-over-batch loss and its gradients with respect to the weights used in `pass`.
    pub fn backward(&self, pass: &ForwardPass<'_>, targets: &Matrix) -> Result<(f64, GradientSet)> {
        let output = pass.output();
        if targets.shape() != output.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward targets",
                left: targets.shape(),
                right: output.shape(),
            });
        }
        let n = targets.rows() as f64;
        let last = self.layers.len() - 1;
        let loss = self.loss_value(pass, targets);

        let mut delta = output.sub(targets)?.scale(1.0 / n);
        if self.loss == Loss::Mse {
            delta = self.scale_by_derivative(delta, last, pass);
        }

        let mut grad_w = vec![Matrix::zeros(0, 0); self.layers.len()];
        let mut grad_b = vec![Vec::new(); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { &pass.input } else { &pass.post[l - 1] };
            grad_w[l] = matmul_tn(&delta, input)?;
            grad_b[l] = column_sums(&delta);
            if l > 0 {
                let back = matmul(&delta, pass.weights[l])?;
                let mut back = self.scale_by_derivative(back, l - 1, pass);
                if let Some(mask) = &pass.masks[l - 1] {
                    back = back.hadamard(mask)?;
                }
                delta = back;
            }
        }
        Ok((
            loss,
            GradientSet {
                weights: grad_w,
                biases: grad_b,
            },
        ))
    }

    fn loss_value(&self, pass: &ForwardPass<'_>, targets: &Matrix) -> f64 {
        let n = targets.rows() as f64;
        let last = self.layers.len() - 1;
        let logits = &pass.pre[last];
        match (self.loss, self.layers[last].activation) {
            (Loss::CrossEntropy, Activation::Softmax) => {
                let mut total = 0.0;
                for r in 0..logits.rows() {
                    let z = logits.row(r);
                    let lse = log_sum_exp(z);
                    for (zi, ti) in z.iter().zip(targets.row(r)) {
                        if *ti != 0.0 {
                            total += ti * (lse - zi);
                        }
                    }
                }
                total / n
            }
            (Loss::CrossEntropy, _) => {
                // softplus(z) − t·z is −[t ln σ(z) + (1 − t) ln(1 − σ(z))]
                let total: f64 = logits
                    .as_slice()
                    .iter()
                    .zip(targets.as_slice())
                    .map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z)
                    .sum();
                total / n
            }
            (Loss::Mse, _) => {
                let total: f64 = pass
                    .output()
                    .as_slice()
                    .iter()
                    .zip(targets.as_slice())
                    .map(|(y, t)| (y - t).powi(2))
                    .sum();
                0.5 * total / n
            }
        }
    }

    fn scale_by_derivative(&self, mut m: Matrix, layer: usize, pass: &ForwardPass<'_>) -> Matrix {
        let act = self.layers[layer].activation;
        if act == Activation::Identity {
            return m;
        }
        let z = pass.pre[layer].as_slice();
        // The derivative needs the unmasked activation; recompute it from z.
        let a = act.apply(&pass.pre[layer]);
        for ((g, &zi), &ai) in m.as_mut_slice().iter_mut().zip(z).zip(a.as_slice()) {
            *g *= act.derivative(zi, ai);
        }
        m
    }

    /// `w ← w − lr · ∂E/∂w`, biases likewise.
    pub fn apply_sgd(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            sgd_step(&mut layer.weights, &grads.weights[l], lr)?;
            sgd_bias_step(&mut layer.bias, &grads.biases[l], lr);
        }
        Ok(())
    }

    /// Loss and classification error over a full set, in evaluation mode.
    pub fn evaluate(&self, inputs: &Matrix, targets: &Matrix) -> Result<(f64, f64)> {
        let pass = self.forward(inputs, None)?;
        if targets.shape() != pass.output().shape() {
            return Err(Error::ShapeMismatch {
                op: "evaluate targets",
                left: targets.shape(),
                right: pass.output().shape(),
            });
        }
        let loss = self.loss_value(&pass, targets);
        Ok((loss, classification_error(pass.output(), targets)))
    }
}

pub(crate) fn sgd_step(weights: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    weights.check_same_shape(grad, "sgd step")?;
    for (w, &g) in weights.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *w -= lr * g;
    }
    Ok(())
}

pub(crate) fn sgd_bias_step(bias: &mut [f64], grad: &[f64], lr: f64) {
    for (b, &g) in bias.iter_mut().zip(grad) {
        *b -= lr * g;
    }
}

/// Fraction of rows classified wrongly. Multi-column targets compare argmaxes;
/// single-column targets threshold both sides at 0.5.
pub fn classification_error(outputs: &Matrix, targets: &Matrix) -> f64 {
    if outputs.rows() == 0 {
        return 0.0;
    }
    let wrong = (0..outputs.rows())
        .filter(|&r| {
            let (y, t) = (outputs.row(r), targets.row(r));
            if y.len() == 1 {
                (y[0] > 0.5) != (t[0] > 0.5)
            } else {
                argmax(y) != argmax(t)
            }
        })
        .count();
    wrong as f64 / outputs.rows() as f64
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, v) in sums.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_gaussian;
    use crate::linalg::Rng;
    use proptest::prelude::*;

    fn loss_at(net: &Network, x: &Matrix, t: &Matrix) -> f64 {
        let pass = net.forward(x, None).unwrap();
        net.backward(&pass, t).unwrap().0
    }

    #[test]
    fn identity_network_passes_input_through() {
        let layer = Layer::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let net = Network::from_layers(vec![layer], Loss::Mse, Mode::Plain).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -2.0, 3.5], &[0.0, 4.0, -1.0]]);
        assert_eq!(net.forward(&x, None).unwrap().output(), &x);
    }

    #[test]
    fn two_two_one_hand_computation() {
        // h = relu(W1 x + b1) with x = (1, 1): z1 = (0.5 - 0.25 + 0.1, -1 + 2 - 0.2) = (0.35, 0.8)
        // y = 1.5 * 0.35 - 0.5 * 0.8 + 0.05 = 0.175
        let l1 = Layer::new(
            Matrix::from_rows(&[&[0.5, -0.25], &[-1.0, 2.0]]),
            vec![0.1, -0.2],
            Activation::Relu,
        )
        .unwrap();
        let l2 = Layer::new(Matrix::from_rows(&[&[1.5, -0.5]]), vec![0.05], Activation::Identity).unwrap();
        let net = Network::from_layers(vec![l1, l2], Loss::Mse, Mode::Plain).unwrap();
        let out = net.forward(&Matrix::from_rows(&[&[1.0, 1.0]]), None).unwrap();
        assert!((out.output().get(0, 0) - 0.175).abs() < 1e-15);
        assert!((out.activations()[0].get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let layer = Layer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Softmax).unwrap();
        let net = Network::from_layers(vec![layer], Loss::CrossEntropy, Mode::Plain).unwrap();
        let out = net.forward(&Matrix::from_rows(&[&[0.3, -0.7]]), None).unwrap();
        for &p in out.output().as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_at_optimum() {
        let layer = Layer::new(Matrix::zeros(2, 3), vec![0.0; 2], Activation::Identity).unwrap();
        let net = Network::from_layers(vec![layer], Loss::Mse, Mode::Plain).unwrap();
        let x = Matrix::from_rows(&[&[1.0, 2.0, 3.0]]);
        let pass = net.forward(&x, None).unwrap();
        let target = pass.output().clone();
        let (loss, grads) = net.backward(&pass, &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.weights[0].as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.biases[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_output_delta() {
        // With a single layer, ∂E/∂b is the column sum of the output delta, and
        // ∂E/∂W = deltaᵀ x. Compare both with (softmax − one-hot) / batch.
        let mut rng = Rng::new(11);
        let net = Network::new(
            &[4, 3],
            Activation::Relu,
            Activation::Softmax,
            Loss::CrossEntropy,
            Mode::Plain,
            &mut rng,
        )
        .unwrap();
        let x = sample_gaussian(&mut rng, 5, 4);
        let labels = [0usize, 2, 1, 1, 0];
        let mut t = Matrix::zeros(5, 3);
        for (r, &c) in labels.iter().enumerate() {
            t.set(r, c, 1.0);
        }
        let pass = net.forward(&x, None).unwrap();
        let p = pass.output().clone();
        let (_, grads) = net.backward(&pass, &t).unwrap();
        let delta = p.sub(&t).unwrap().scale(1.0 / 5.0);
        let expected_w = matmul_tn(&delta, &x).unwrap();
        for (a, b) in grads.weights[0].as_slice().iter().zip(expected_w.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        for c in 0..3 {
            let col: f64 = (0..5).map(|r| delta.get(r, c)).sum();
            assert!((grads.biases[0][c] - col).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(21);
        let net = Network::new(
            &[3, 5, 2],
            Activation::Tanh,
            Activation::Softmax,
            Loss::CrossEntropy,
            Mode::Plain,
            &mut rng,
        )
        .unwrap();
        let x = sample_gaussian(&mut rng, 4, 3);
        let t = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let pass = net.forward(&x, None).unwrap();
        let (_, grads) = net.backward(&pass, &t).unwrap();
        let eps = 1e-5;
        for l in 0..2 {
            for i in 0..net.layers[l].weights.as_slice().len() {
                let mut plus = net.clone();
                plus.layers[l].weights.as_mut_slice()[i] += eps;
                let mut minus = net.clone();
                minus.layers[l].weights.as_mut_slice()[i] -= eps;
                let fd = (loss_at(&plus, &x, &t) - loss_at(&minus, &x, &t)) / (2.0 * eps);
                let g = grads.weights[l].as_slice()[i];
                assert!((fd - g).abs() / g.abs().max(fd.abs()).max(1e-6) < 1e-5, "{g} vs {fd}");
            }
        }
    }

    #[test]
    fn sgd_zero_rate_and_scalar_step() {
        let layer = Layer::new(Matrix::from_rows(&[&[1.0]]), vec![0.0], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![layer], Loss::Mse, Mode::Plain).unwrap();
        let grads = GradientSet {
            weights: vec![Matrix::from_rows(&[&[2.0]])],
            biases: vec![vec![0.0]],
        };
        let before = net.clone();
        net.apply_sgd(&grads, 0.0).unwrap();
        assert_eq!(net, before);
        net.apply_sgd(&grads, 0.1).unwrap();
        assert!((net.layers[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_is_deterministic_per_seed() {
        let run = || {
            let mut rng = Rng::new(5);
            let mut net = Network::new(
                &[2, 6, 1],
                Activation::Tanh,
                Activation::Sigmoid,
                Loss::CrossEntropy,
                Mode::Plain,
                &mut rng,
            )
            .unwrap();
            let x = Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
            let t = Matrix::from_rows(&[&[0.0], &[1.0], &[1.0], &[0.0]]);
            for _ in 0..10 {
                let pass = net.forward(&x, None).unwrap();
                let (_, g) = net.backward(&pass, &t).unwrap();
                net.apply_sgd(&g, 0.5).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let mut rng = Rng::new(8);
        let mut net = Network::new(
            &[2, 4, 2],
            Activation::Relu,
            Activation::Softmax,
            Loss::CrossEntropy,
            Mode::Plain,
            &mut rng,
        )
        .unwrap();
        let x = sample_gaussian(&mut rng, 40, 2);
        let mut t = Matrix::zeros(40, 2);
        for r in 0..40 {
            let c = usize::from(x.get(r, 0) + x.get(r, 1) > 0.0);
            t.set(r, c, 1.0);
        }
        let first = loss_at(&net, &x, &t);
        for _ in 0..50 {
            let pass = net.forward(&x, None).unwrap();
            let (_, g) = net.backward(&pass, &t).unwrap();
            net.apply_sgd(&g, 0.5).unwrap();
        }
        assert!(loss_at(&net, &x, &t) < first);
    }

    #[test]
    fn structural_errors() {
        let mut rng = Rng::new(0);
        let soft = Layer::xavier(2, 2, Activation::Softmax, &mut rng);
        let lin = Layer::xavier(2, 1, Activation::Identity, &mut rng);
        assert!(Network::from_layers(vec![soft, lin.clone()], Loss::Mse, Mode::Plain).is_err());
        assert!(Network::from_layers(vec![lin.clone()], Loss::CrossEntropy, Mode::Plain).is_err());
        let bad_chain = Layer::xavier(3, 1, Activation::Identity, &mut rng);
        let first = Layer::xavier(2, 2, Activation::Relu, &mut rng);
        assert!(Network::from_layers(vec![first, bad_chain], Loss::Mse, Mode::Plain).is_err());

        let net = Network::from_layers(vec![lin], Loss::Mse, Mode::Plain).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(1, 3), None),
            Err(Error::ShapeMismatch { .. })
        ));
        let pass = net.forward(&Matrix::zeros(1, 2), None).unwrap();
        assert!(matches!(
            net.backward(&pass, &Matrix::zeros(1, 2)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(net
            .forward_masked(&Matrix::zeros(1, 2), None, &[Some(Matrix::zeros(1, 1))])
            .is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_ce_nonnegative(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = Rng::new(seed);
            let net = Network::new(&[3, 4], Activation::Relu, Activation::Softmax, Loss::CrossEntropy, Mode::Plain, &mut rng).unwrap();
            let x = sample_gaussian(&mut rng, 6, 3).scale(scale);
            let pass = net.forward(&x, None).unwrap();
            for r in 0..6 {
                let s: f64 = pass.output().row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            let mut t = Matrix::zeros(6, 4);
            for r in 0..6 { t.set(r, r % 4, 1.0); }
            let (loss, _) = net.backward(&pass, &t).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
