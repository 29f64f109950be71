use rand::Rng;

use crate::error::{Error, Result};

use super::{axpy, dot, Scalar, Tensor};

/// 1D convolution with odd kernel, stride 1 and symmetric zero ("same")
/// padding. Weights are laid out `[out_ch][in_ch][kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Fully connected layer, weights laid out `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn uniform<T: Scalar, R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect()
}

impl<T: Scalar> Conv1d<T> {
    /// Weights and biases uniform in `±sqrt(1 / (in_ch * kernel))`.
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        if kernel % 2 == 0 || in_ch == 0 || out_ch == 0 {
            return Err(Error::InvalidParams(format!(
                "conv1d needs an odd kernel and non-zero channels, got {in_ch}->{out_ch} k={kernel}"
            )));
        }
        let bound = (1.0 / (in_ch * kernel) as f64).sqrt();
        let weight = uniform(out_ch * in_ch * kernel, bound, rng);
        let bias = uniform(out_ch, bound, rng);
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias,
        })
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// Valid output range `[lo, hi)` for a tap offset `shift` over length `len`.
    fn tap_range(shift: isize, len: usize) -> (usize, usize) {
        let lo = ((-shift).max(0) as usize).min(len);
        let hi = (len as isize - shift).clamp(0, len as isize) as usize;
        (lo, hi.max(lo))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (ci_n, len) = input.dims2()?;
        if ci_n != self.in_ch {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.in_ch),
                got: format!("{ci_n}"),
            });
        }
        let k = self.kernel;
        let mut out = vec![T::zero(); self.out_ch * len];
        for co in 0..self.out_ch {
            let row = &mut out[co * len..(co + 1) * len];
            row.iter_mut().for_each(|v| *v = self.bias[co]);
            for ci in 0..self.in_ch {
                let x = &input.data[ci * len..(ci + 1) * len];
                for tap in 0..k {
                    let w = self.weight[(co * self.in_ch + ci) * k + tap];
                    let shift = tap as isize - self.pad();
                    let (lo, hi) = Self::tap_range(shift, len);
                    if lo == hi {
                        continue;
                    }
                    let src = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    axpy(w, src, &mut row[lo..hi]);
                }
            }
        }
        Tensor::new(vec![self.out_ch, len], out)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>, grad_w: &mut [T], grad_b: &mut [T]) -> Result<Tensor<T>> {
        let (_, len) = input.dims2()?;
        if grad_out.shape != [self.out_ch, len] {
            return Err(Error::ShapeMismatch {
                expected: format!("[{}, {len}]", self.out_ch),
                got: format!("{:?}", grad_out.shape),
            });
        }
        let k = self.kernel;
        let mut grad_in = vec![T::zero(); self.in_ch * len];
        for co in 0..self.out_ch {
            let g = &grad_out.data[co * len..(co + 1) * len];
            grad_b[co] = grad_b[co] + g.iter().copied().sum();
            for ci in 0..self.in_ch {
                let x = &input.data[ci * len..(ci + 1) * len];
                let gi = &mut grad_in[ci * len..(ci + 1) * len];
                for tap in 0..k {
                    let widx = (co * self.in_ch + ci) * k + tap;
                    let shift = tap as isize - self.pad();
                    let (lo, hi) = Self::tap_range(shift, len);
                    if lo == hi {
                        continue;
                    }
                    let (slo, shi) = ((lo as isize + shift) as usize, (hi as isize + shift) as usize);
                    grad_w[widx] = grad_w[widx] + dot(&g[lo..hi], &x[slo..shi]);
                    axpy(self.weight[widx], &g[lo..hi], &mut gi[slo..shi]);
                }
            }
        }
        Tensor::new(vec![self.in_ch, len], grad_in)
    }
}

impl<T: Scalar> Dense<T> {
    /// Weights and biases uniform in `±sqrt(1 / in_dim)`.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidParams("dense layer needs non-zero dimensions".into()));
        }
        let bound = (1.0 / in_dim as f64).sqrt();
        Ok(Self {
            in_dim,
            out_dim,
            weight: uniform(in_dim * out_dim, bound, rng),
            bias: uniform(out_dim, bound, rng),
        })
    }

    /// All-zero weights and biases; the layer outputs zero until trained.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.data.len() != self.in_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.in_dim),
                got: format!("{}", input.data.len()),
            });
        }
        let out = (0..self.out_dim)
            .map(|o| self.bias[o] + dot(&self.weight[o * self.in_dim..(o + 1) * self.in_dim], &input.data))
            .collect();
        Tensor::new(vec![self.out_dim], out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>, grad_w: &mut [T], grad_b: &mut [T]) -> Result<Tensor<T>> {
        if grad_out.data.len() != self.out_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} output gradients", self.out_dim),
                got: format!("{}", grad_out.data.len()),
            });
        }
        let mut grad_in = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out.data[o];
            grad_b[o] = grad_b[o] + g;
            let rows = o * self.in_dim..(o + 1) * self.in_dim;
            axpy(g, &input.data, &mut grad_w[rows.clone()]);
            axpy(g, &self.weight[rows], &mut grad_in);
        }
        Tensor::new(input.shape.clone(), grad_in)
    }
}

/// Layer kinds. There are no pooling layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    Relu,
    FullyConnected(Dense<T>),
    Flatten,
    /// Feeds the same input through two branches and sums their outputs.
    ParallelSum(Vec<Layer<T>>, Vec<Layer<T>>),
}

/// Values cached by the forward pass that backward needs.
#[derive(Debug, Clone)]
pub enum Trace<T> {
    Conv1d { input: Tensor<T> },
    Relu { output: Tensor<T> },
    FullyConnected { input: Tensor<T> },
    Flatten { shape: Vec<usize> },
    ParallelSum { a: Vec<Trace<T>>, b: Vec<Trace<T>> },
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Relu => "relu",
            Layer::FullyConnected(_) => "fully_connected",
            Layer::Flatten => "flatten",
            Layer::ParallelSum(..) => "parallel_sum",
        }
    }

    /// Number of parameter tensors (weight, bias) held by this layer and its
    /// branches.
    pub fn param_tensor_count(&self) -> usize {
        match self {
            Layer::Conv1d(_) | Layer::FullyConnected(_) => 2,
            Layer::Relu | Layer::Flatten => 0,
            Layer::ParallelSum(a, b) => a.iter().chain(b).map(Layer::param_tensor_count).sum(),
        }
    }

    /// Parameter tensors in canonical order: weight before bias, branch A
    /// before branch B.
    pub fn visit_params<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        match self {
            Layer::Conv1d(c) => {
                out.push(&c.weight);
                out.push(&c.bias);
            }
            Layer::FullyConnected(d) => {
                out.push(&d.weight);
                out.push(&d.bias);
            }
            Layer::Relu | Layer::Flatten => {}
            Layer::ParallelSum(a, b) => a.iter().chain(b).for_each(|l| l.visit_params(out)),
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        match self {
            Layer::Conv1d(c) => {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
            Layer::FullyConnected(d) => {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
            Layer::Relu | Layer::Flatten => {}
            Layer::ParallelSum(a, b) => a.iter_mut().chain(b.iter_mut()).for_each(|l| l.visit_params_mut(out)),
        }
    }

    /// Output shape for a given input shape, or an error if incompatible.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: String| Error::ShapeMismatch {
            expected,
            got: format!("{input:?}"),
        };
        match self {
            Layer::Conv1d(c) => match input {
                [ch, len] if *ch == c.in_ch => Ok(vec![c.out_ch, *len]),
                _ => Err(mismatch(format!("[{}, length]", c.in_ch))),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::FullyConnected(d) => {
                if input.iter().product::<usize>() == d.in_dim && input.len() == 1 {
                    Ok(vec![d.out_dim])
                } else {
                    Err(mismatch(format!("[{}]", d.in_dim)))
                }
            }
            Layer::ParallelSum(a, b) => {
                let sa = seq_output_shape(a, input)?;
                let sb = seq_output_shape(b, input)?;
                if sa != sb {
                    return Err(Error::ShapeMismatch {
                        expected: format!("branch B output {sa:?}"),
                        got: format!("{sb:?}"),
                    });
                }
                Ok(sa)
            }
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        match self {
            Layer::Conv1d(c) => Ok((c.forward(input)?, Trace::Conv1d { input: input.clone() })),
            Layer::Relu => {
                let out = Tensor {
                    shape: input.shape.clone(),
                    data: input.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
                };
                Ok((out.clone(), Trace::Relu { output: out }))
            }
            Layer::FullyConnected(d) => Ok((d.forward(input)?, Trace::FullyConnected { input: input.clone() })),
            Layer::Flatten => Ok((
                Tensor {
                    shape: vec![input.len()],
                    data: input.data.clone(),
                },
                Trace::Flatten {
                    shape: input.shape.clone(),
                },
            )),
            Layer::ParallelSum(a, b) => {
                let (ya, ta) = seq_forward(a, input)?;
                let (yb, tb) = seq_forward(b, input)?;
                if ya.shape != yb.shape {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{:?}", ya.shape),
                        got: format!("{:?}", yb.shape),
                    });
                }
                let data = ya.data.iter().zip(&yb.data).map(|(&p, &q)| p + q).collect();
                Ok((Tensor { shape: ya.shape, data }, Trace::ParallelSum { a: ta, b: tb }))
            }
        }
    }

    /// Inference-only forward pass without caching.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv1d(c) => c.forward(input),
            Layer::FullyConnected(d) => d.forward(input),
            Layer::ParallelSum(a, b) => {
                let ya = seq_predict(a, input)?;
                let yb = seq_predict(b, input)?;
                let data = ya.data.iter().zip(&yb.data).map(|(&p, &q)| p + q).collect();
                Tensor::new(ya.shape, data)
            }
            _ => self.forward(input).map(|(y, _)| y),
        }
    }

    /// Backward pass. Parameter gradients are accumulated into `grads`,
    /// which holds exactly `param_tensor_count()` buffers for this layer.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor<T>, grads: &mut [Vec<T>]) -> Result<Tensor<T>> {
        match (self, trace) {
            (Layer::Conv1d(c), Trace::Conv1d { input }) => {
                let (gw, gb) = grads.split_at_mut(1);
                c.backward(input, grad_out, &mut gw[0], &mut gb[0])
            }
            (Layer::FullyConnected(d), Trace::FullyConnected { input }) => {
                let (gw, gb) = grads.split_at_mut(1);
                d.backward(input, grad_out, &mut gw[0], &mut gb[0])
            }
            (Layer::Relu, Trace::Relu { output }) => Ok(Tensor {
                shape: output.shape.clone(),
                data: output
                    .data
                    .iter()
                    .zip(&grad_out.data)
                    .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
                    .collect(),
            }),
            (Layer::Flatten, Trace::Flatten { shape }) => Tensor::new(shape.clone(), grad_out.data.clone()),
            (Layer::ParallelSum(a, b), Trace::ParallelSum { a: ta, b: tb }) => {
                let na: usize = a.iter().map(Layer::param_tensor_count).sum();
                let (ga, gb) = grads.split_at_mut(na);
                let da = seq_backward(a, ta, grad_out, ga)?;
                let db = seq_backward(b, tb, grad_out, gb)?;
                let data = da.data.iter().zip(&db.data).map(|(&p, &q)| p + q).collect();
                Tensor::new(da.shape, data)
            }
            _ => Err(Error::NoForwardCache),
        }
    }
}

pub(crate) fn seq_output_shape<T: Scalar>(layers: &[Layer<T>], input: &[usize]) -> Result<Vec<usize>> {
    layers.iter().try_fold(input.to_vec(), |s, l| l.output_shape(&s))
}

pub(crate) fn seq_forward<T: Scalar>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<(Tensor<T>, Vec<Trace<T>>)> {
    let mut x = input.clone();
    let mut traces = Vec::with_capacity(layers.len());
    for l in layers {
        let (y, t) = l.forward(&x)?;
        traces.push(t);
        x = y;
    }
    Ok((x, traces))
}

pub(crate) fn seq_predict<T: Scalar>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut x = input.clone();
    for l in layers {
        x = l.predict(&x)?;
    }
    Ok(x)
}

pub(crate) fn seq_backward<T: Scalar>(layers: &[Layer<T>], traces: &[Trace<T>], grad_out: &Tensor<T>, grads: &mut [Vec<T>]) -> Result<Tensor<T>> {
    if traces.len() != layers.len() {
        return Err(Error::NoForwardCache);
    }
    let counts: Vec<usize> = layers.iter().map(Layer::param_tensor_count).collect();
    let mut end = grads.len();
    let mut g = grad_out.clone();
    for (i, l) in layers.iter().enumerate().rev() {
        let start = end - counts[i];
        g = l.backward(&traces[i], &g, &mut grads[start..end])?;
        end = start;
    }
    Ok(g)
}
