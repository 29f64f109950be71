#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwbpos::net::{Conv1d, Dense, Layer, Network, Tensor};
use uwbpos::sim::Scenario;

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between analytic and central-difference
/// gradients of `L = sum(w * y)` over all parameters and input entries.
pub fn max_rel_grad_error(mut net: Network<f64>, input: Tensor<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_len: usize = net.output_shape().iter().product();
    let w: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad_out = Tensor::new(net.output_shape(), w.clone()).unwrap();
    net.forward(&input).unwrap();
    let grads = net.backward(&grad_out).unwrap();

    let loss = |net: &Network<f64>, x: &Tensor<f64>| -> f64 { net.predict(x).unwrap().data.iter().zip(&w).map(|(y, w)| y * w).sum() };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst = 0.0f64;

    let n_tensors = net.params().len();
    for t in 0..n_tensors {
        for i in 0..net.params()[t].len() {
            let orig = net.params()[t][i];
            net.params_mut()[t][i] = orig + FD_STEP;
            let up = loss(&net, &input);
            net.params_mut()[t][i] = orig - FD_STEP;
            let down = loss(&net, &input);
            net.params_mut()[t][i] = orig;
            worst = worst.max(rel(grads.params[t][i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    for i in 0..input.data.len() {
        let mut x = input.clone();
        x.data[i] += FD_STEP;
        let up = loss(&net, &x);
        x.data[i] -= 2.0 * FD_STEP;
        let down = loss(&net, &x);
        worst = worst.max(rel(grads.input.data[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so no ReLU kink lies within the step.
fn kink_free_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn randomize(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

/// One case per layer kind plus a full two-branch model.
pub fn gradient_check_cases() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = Vec::new();

    let conv = Network::new(vec![Layer::Conv1d(Conv1d::new(2, 3, 5, &mut rng).unwrap())], vec![2, 9]).unwrap();
    let x = random_tensor(vec![2, 9], &mut rng);
    cases.push(("conv1d", max_rel_grad_error(conv, x, 1)));

    let relu = Network::new(vec![Layer::Relu], vec![3, 7]).unwrap();
    let x = kink_free_tensor(vec![3, 7], &mut rng);
    cases.push(("relu", max_rel_grad_error(relu, x, 2)));

    let fc = Network::new(vec![Layer::FullyConnected(Dense::new(12, 4, &mut rng).unwrap())], vec![12]).unwrap();
    let x = random_tensor(vec![12], &mut rng);
    cases.push(("fully_connected", max_rel_grad_error(fc, x, 3)));

    let flat = Network::new(vec![Layer::Flatten], vec![2, 5]).unwrap();
    let x = random_tensor(vec![2, 5], &mut rng);
    cases.push(("flatten", max_rel_grad_error(flat, x, 4)));

    let a = vec![Layer::Conv1d(Conv1d::new(2, 3, 5, &mut rng).unwrap())];
    let b = vec![
        Layer::Conv1d(Conv1d::new(2, 3, 5, &mut rng).unwrap()),
        Layer::Relu,
        Layer::Conv1d(Conv1d::new(3, 3, 5, &mut rng).unwrap()),
    ];
    let ps = Network::new(vec![Layer::ParallelSum(a, b)], vec![2, 8]).unwrap();
    let x = random_tensor(vec![2, 8], &mut rng);
    cases.push(("parallel_sum", max_rel_grad_error(ps, x, 5)));

    let mut model = uwbpos::models::build_two_branch::<f64>(2, 3, 2, 7).unwrap();
    randomize(&mut model, &mut rng);
    let x = random_tensor(vec![2, 162], &mut rng);
    cases.push(("two_branch_model", max_rel_grad_error(model, x, 6)));
    cases
}

/// Value at `j`, zero outside the signal.
fn at(y: &[f64], j: isize) -> f64 {
    if j < 0 || j >= y.len() as isize {
        0.0
    } else {
        y[j as usize]
    }
}

/// First sample that is a local maximum and reaches `beta` times the global
/// maximum.
pub fn peak_oracle(y: &[f64], beta: f64) -> Option<usize> {
    let mut max = f64::NEG_INFINITY;
    for &v in y {
        if v > max {
            max = v;
        }
    }
    for n in 0..y.len() {
        let left_ok = n == 0 || y[n] >= y[n - 1];
        let right_ok = n + 1 == y.len() || y[n] >= y[n + 1];
        if y[n] >= beta * max && left_ok && right_ok {
            return Some(n);
        }
    }
    None
}

/// Leading-edge detection written directly from its definition: centered
/// moving average (zero padded, divided by the full length), short maximum
/// over the `w_small` samples ending at n, long maximum over the `w_large`
/// samples before n, and the first n with short >= beta * max(smoothed) and
/// short > factor * long.
pub fn lde_oracle(y: &[f64], beta: f64, factor: f64, w_avg: usize, w_small: usize, w_large: usize) -> Option<usize> {
    let half = (w_avg / 2) as isize;
    let mut s = vec![0.0; y.len()];
    for n in 0..y.len() as isize {
        let mut acc = 0.0;
        for j in n - half..=n + half {
            if j >= 0 && j < y.len() as isize {
                acc += y[j as usize];
            }
        }
        s[n as usize] = acc / w_avg as f64;
    }
    let mut smax = f64::NEG_INFINITY;
    for &v in &s {
        if v > smax {
            smax = v;
        }
    }
    for n in 0..y.len() as isize {
        let mut short = f64::NEG_INFINITY;
        for j in n + 1 - w_small as isize..=n {
            short = short.max(at(&s, j));
        }
        let mut long = f64::NEG_INFINITY;
        for j in n - w_large as isize..n {
            long = long.max(at(&s, j));
        }
        if short >= beta * smax && short > factor * long {
            return Some(n as usize);
        }
    }
    None
}

/// A preset shrunk to `reps` repetitions and every `stride`-th tag point.
pub fn small_preset(env: &str, reps: usize, stride: usize) -> Scenario {
    let mut sc = Scenario::preset(env).unwrap();
    sc.repetitions = reps;
    sc.tag_points = sc.tag_points.iter().step_by(stride).copied().collect();
    sc
}
