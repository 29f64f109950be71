use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layer::{seq_backward, seq_forward, seq_output_shape, seq_predict};
use super::{Layer, Scalar, Tensor, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Parameter gradients in canonical parameter order plus the gradient with
/// respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn max_abs(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

/// Ordered layer stack with Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    /// `(channels, length)` of one input sample.
    pub input_shape: Vec<usize>,
    pub(crate) moment1: Vec<Vec<T>>,
    pub(crate) moment2: Vec<Vec<T>>,
    last_trace: Option<Vec<Trace<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>, input_shape: Vec<usize>) -> Result<Self> {
        seq_output_shape(&layers, &input_shape)?;
        let zeros: Vec<Vec<T>> = {
            let mut params = Vec::new();
            layers.iter().for_each(|l| l.visit_params(&mut params));
            params.iter().map(|p| vec![T::zero(); p.len()]).collect()
        };
        Ok(Self {
            layers,
            input_shape,
            moment1: zeros.clone(),
            moment2: zeros,
            last_trace: None,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        seq_output_shape(&self.layers, &self.input_shape).expect("validated at construction")
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.visit_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(&mut out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    /// Copies every parameter out, in canonical order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| p.to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) {
        for (dst, src) in self.params_mut().into_iter().zip(snapshot) {
            dst.copy_from_slice(src);
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape != self.input_shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.input_shape),
                got: format!("{:?}", input.shape),
            });
        }
        Ok(())
    }

    /// Inference without caching.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        seq_predict(&self.layers, input)
    }

    pub fn predict_batch(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }

    /// Forward pass returning the trace for a later [`Network::backward_with`].
    pub fn forward_traced(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<Trace<T>>)> {
        self.check_input(input)?;
        seq_forward(&self.layers, input)
    }

    /// Backward pass for a given trace, accumulating into `grads`.
    pub fn backward_with(&self, traces: &[Trace<T>], grad_out: &Tensor<T>, grads: &mut [Vec<T>]) -> Result<Tensor<T>> {
        seq_backward(&self.layers, traces, grad_out, grads)
    }

    /// Forward pass that caches its trace on the network.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, t) = self.forward_traced(input)?;
        self.last_trace = Some(t);
        Ok(y)
    }

    /// Backward pass through the cached trace of the last [`Network::forward`].
    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        let traces = self.last_trace.as_ref().ok_or(Error::NoForwardCache)?;
        let mut params = self.zero_grads();
        let input = self.backward_with(traces, grad_out, &mut params)?;
        Ok(Gradients { params, input })
    }

    pub fn clear_cache(&mut self) {
        self.last_trace = None;
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.moment1, &self.moment2)
    }

    pub fn reset_moments(&mut self) {
        for m in self.moment1.iter_mut().chain(self.moment2.iter_mut()) {
            m.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// One Adam update with bias correction; `t` is the 1-based step index.
pub fn adam_step<T: Scalar>(net: &mut Network<T>, grads: &[Vec<T>], lr: f64, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidParams("Adam step index starts at 1".into()));
    }
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let eps = T::from_f64(cfg.eps);
    let lr = T::from_f64(lr);
    if grads.len() != net.moment1.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} gradient tensors", net.moment1.len()),
            got: format!("{}", grads.len()),
        });
    }
    let mut params = Vec::new();
    net.layers.iter_mut().for_each(|l| l.visit_params_mut(&mut params));
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(net.moment1.iter_mut()).zip(net.moment2.iter_mut()) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Dense, Layer};

    fn quadratic_net(w0: [f64; 2]) -> Network<f64> {
        // A 2->1 dense layer whose weights play the role of w in f(w) = |w|^2.
        let d = Dense {
            in_dim: 2,
            out_dim: 1,
            weight: w0.to_vec(),
            bias: vec![0.0],
        };
        Network::new(vec![Layer::FullyConnected(d)], vec![2]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut net = quadratic_net([1.0, -2.0]);
        net.moment1[0] = vec![0.5, 0.5];
        net.moment2[0] = vec![0.25, 0.25];
        let before = net.snapshot();
        let zeros = net.zero_grads();
        // moments non-zero so the update is not zero; check only with fresh moments
        adam_step(&mut net, &zeros, 1e-3, &AdamConfig::default(), 1).unwrap();
        assert!((net.moment1[0][0] - 0.45).abs() < 1e-15);
        assert!((net.moment2[0][0] - 0.25 * 0.999).abs() < 1e-15);
        let mut fresh = quadratic_net([1.0, -2.0]);
        adam_step(&mut fresh, &zeros, 1e-3, &AdamConfig::default(), 1).unwrap();
        assert_eq!(fresh.snapshot(), before);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut net = quadratic_net([1.0, -2.0]);
        let g = vec![vec![3.0, -0.01], vec![0.0]];
        adam_step(&mut net, &g, 1e-3, &AdamConfig::default(), 1).unwrap();
        let w = &net.params()[0];
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-2.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut net = quadratic_net([1.0, 1.0]);
        let cfg = AdamConfig::default();
        let norm = |n: &Network<f64>| {
            let w = n.params()[0];
            (w[0] * w[0] + w[1] * w[1]).sqrt()
        };
        let w0 = norm(&net);
        let mut prev = w0;
        for t in 1..=100 {
            let w = net.params()[0].to_vec();
            let g = vec![vec![2.0 * w[0], 2.0 * w[1]], vec![0.0]];
            adam_step(&mut net, &g, 0.05, &cfg, t).unwrap();
            let now = norm(&net);
            if t > 5 && now > 0.2 {
                assert!(now <= prev + 1e-12, "step {t}: {now} > {prev}");
            }
            prev = now;
        }
        assert!(prev < 0.1 * w0, "final norm {prev}");
    }

    #[test]
    fn backward_requires_forward() {
        let net = quadratic_net([1.0, 1.0]);
        assert!(matches!(net.backward(&Tensor::zeros(vec![1])), Err(Error::NoForwardCache)));
    }

    #[test]
    fn dense_mse_gradient_closed_form() {
        // d/dW mean((Wx+b - y)^2) over one output = 2 (pred - y) x
        let mut net = quadratic_net([0.5, -0.25]);
        let x = Tensor::new(vec![2], vec![2.0, 4.0]).unwrap();
        let pred = net.forward(&x).unwrap();
        let target = Tensor::new(vec![1], vec![3.0]).unwrap();
        let (_, g) = crate::net::mse_loss(&pred, &target).unwrap();
        let grads = net.backward(&g).unwrap();
        let r = pred.data[0] - 3.0;
        assert!((grads.params[0][0] - 2.0 * r * 2.0).abs() < 1e-12);
        assert!((grads.params[0][1] - 2.0 * r * 4.0).abs() < 1e-12);
        assert!((grads.params[1][0] - 2.0 * r).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut net = quadratic_net([0.5, -0.25]);
        net.forward(&Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()).unwrap();
        let g = net.backward(&Tensor::zeros(vec![1])).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn input_shape_is_checked() {
        let net = quadratic_net([0.5, -0.25]);
        assert!(net.predict(&Tensor::zeros(vec![3])).is_err());
    }
}
