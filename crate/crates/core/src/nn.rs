//! Small dense networks in f64 with hand-written backpropagation, the Adam
//! optimizer and the Huber loss.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network: rectifier on hidden layers, identity output.
///
/// Parameters live in one flat vector, layer by layer: the weight matrix
/// (row-major, `out x in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(
                "layer sizes",
                "need at least two non-zero widths",
            ));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch {
                what: "parameter vector",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters", "must be finite"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// Weight matrix and bias of `layer`.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let (w, rest) = self.params[off..].split_at(n_in * n_out);
        (w, &rest[..n_out])
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let (w, rest) = self.params[off..].split_at_mut(n_in * n_out);
        (w, &mut rest[..n_out])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: self.input_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_traced(x, &mut trace)?;
        Ok(trace.activations.pop().expect("output layer"))
    }

    /// Forward pass keeping every layer's activation for [`Mlp::backward`].
    pub fn forward_traced(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        self.check_input(x)?;
        trace.activations.clear();
        trace.activations.push(x.to_vec());
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let input = &trace.activations[l];
            let n_in = input.len();
            let mut out = b.to_vec();
            for (o, acc) in out.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *acc += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if l < last && *acc < 0.0 {
                    *acc = 0.0;
                }
            }
            trace.activations.push(out);
        }
        Ok(())
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`
    /// for the traced input.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grad: &mut [f64]) -> Result<()> {
        if grad_output.len() != self.output_len() {
            return Err(Error::ShapeMismatch {
                what: "output gradient",
                expected: self.output_len(),
                got: grad_output.len(),
            });
        }
        if grad.len() != self.params.len() || trace.activations.len() != self.sizes.len() {
            return Err(Error::ShapeMismatch {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let mut delta = grad_output.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let input = &trace.activations[l];
            let (gw, rest) = grad[off..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, &a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wij) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wij;
                }
            }
            // Rectifier derivative from the post-activation value.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }
}

/// Per-layer activations of one forward pass (input first, output last).
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

pub fn huber(error: f64, delta: f64) -> f64 {
    let a = libm::fabs(error);
    if a <= delta {
        0.5 * error * error
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// `d huber / d error`.
pub fn huber_grad(error: f64, delta: f64) -> f64 {
    error.clamp(-delta, delta)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `params` against `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                what: "adam parameters",
                expected: self.m.len(),
                got: params.len().min(grad.len()),
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[6, 8, 8, 10]).unwrap();
        assert_eq!(net.forward(&[1.0; 6]).unwrap(), vec![0.0; 10]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut net = Mlp::zeros(&[3, 3]).unwrap();
        let (w, _) = net.layer_mut(0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        assert_eq!(
            net.forward(&[0.5, -2.0, 7.0]).unwrap(),
            vec![0.5, -2.0, 7.0]
        );
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[2, 3]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(Mlp::zeros(&[4]).is_err());
        assert!(Mlp::zeros(&[4, 0, 2]).is_err());
        assert!(Mlp::from_params(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Mlp::from_params(&[2, 3], vec![f64::NAN; 9]).is_err());
    }

    /// Independent re-implementation: nested loops over explicit indices.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let sizes = net.sizes();
        let p = net.params();
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (ni, no) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; no];
            for o in 0..no {
                let mut s = p[off + ni * no + o];
                for i in 0..ni {
                    s += p[off + o * ni + i] * a[i];
                }
                z[o] = if l + 2 < sizes.len() { s.max(0.0) } else { s };
            }
            off += ni * no + no;
            a = z;
        }
        a
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = stream_rng(3, stream::AGENT_INIT, 0);
        for _ in 0..20 {
            let mut net = Mlp::glorot(&[6, 16, 12, 9], &mut rng).unwrap();
            for p in net.params_mut() {
                *p += rng.gen_range(-0.1..0.1);
            }
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = reference_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = stream_rng(3, stream::AGENT_INIT, 0);
        let net = Mlp::glorot(&[6, 64, 64, 210], &mut rng).unwrap();
        let (w, b) = net.layer(2);
        let limit = (6.0f64 / (64.0 + 210.0)).sqrt();
        assert!(w.iter().all(|x| x.abs() < limit));
        assert!(b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
        assert_eq!(huber_grad(0.3, 1.0), 0.3);
        assert_eq!(huber_grad(-4.0, 1.0), -1.0);
    }

    #[test]
    fn adam_scalar_step_matches_hand_computation() {
        let mut adam = Adam::new(1e-3, 1);
        let mut p = [0.5];
        // Step 1: m = 0.1 g, v = 0.001 g^2, corrected to g and g^2 exactly,
        // so the move is lr * g / (|g| + eps).
        adam.step(&mut p, &[0.2]).unwrap();
        let expected1 = 0.5 - 1e-3 * 0.2 / (0.2 + 1e-8);
        assert!((p[0] - expected1).abs() < 1e-10);
        // Step 2 with g = -0.4.
        adam.step(&mut p, &[-0.4]).unwrap();
        let m = 0.9 * (0.1 * 0.2) + 0.1 * -0.4;
        let v = 0.999 * (0.001 * 0.04) + 0.001 * 0.16;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let expected2 = expected1 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected2).abs() < 1e-10);
    }

    #[test]
    fn single_weight_net_step() {
        // y = w x + b with the loss 0.5 (y - t)^2 at x = 2, t = 1.
        let mut net = Mlp::from_params(&[1, 1], vec![0.25, 0.0]).unwrap();
        let mut trace = Trace::default();
        net.forward_traced(&[2.0], &mut trace).unwrap();
        let err = trace.output()[0] - 1.0;
        let mut grad = vec![0.0; 2];
        net.backward(&trace, &[err], &mut grad).unwrap();
        assert_eq!(grad, vec![-1.0, -0.5]);
        let mut adam = Adam::new(1e-3, 2);
        adam.step(net.params_mut(), &grad).unwrap();
        assert!((net.params()[0] - (0.25 + 1e-3 * 1.0 / (1.0 + 1e-8))).abs() < 1e-10);
        assert!((net.params()[1] - (0.0 + 1e-3 * 0.5 / (0.5 + 1e-8))).abs() < 1e-10);
    }
}
