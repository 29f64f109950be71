//! Minimal neural-network engine with explicit backpropagation.
//!
//! Samples flow through the network one at a time as `(channels, length)`
//! or flat tensors; batching happens in the training loop, which reduces
//! per-sample gradients in a fixed order so results do not depend on thread
//! scheduling. Everything is generic over [`Scalar`]: `f32` for training,
//! `f64` for gradient checks.

mod checkpoint;
mod layer;
mod loss;
mod network;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, LayerDump, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layer::{Conv1d, Dense, Layer, Trace};
pub use loss::mse_loss;
pub use network::{adam_step, AdamConfig, Gradients, Network};
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochRecord, Sample, TrainConfig, TrainHistory};

use std::fmt::Debug;

use num_traits::Float;

pub trait Scalar: Float + Debug + Default + Send + Sync + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for i in chunks * 8..n {
        s = s + a[i] * b[i];
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    s + (pairs[0] + pairs[2]) + (pairs[1] + pairs[3])
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}
