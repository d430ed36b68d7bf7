#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use satprecode::channel::{steering_phase_coefficients, steering_vector};
use satprecode::config::ScenarioConfig;
use satprecode::linalg::{c, CMat};
use satprecode::nn::{Gradients, NetworkParameters};
use satprecode::rng::{SeedTree, SimRng};

pub const FD_STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn random_cmat(rows: usize, cols: usize, rng: &mut SimRng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Worst relative disagreement between `grads` and central differences of `loss`.
pub fn worst_fd_error<F>(params: &NetworkParameters, grads: &Gradients, loss: F) -> f64
where
    F: Fn(&NetworkParameters) -> f64,
{
    let mut worst: f64 = 0.0;
    let lengths = params.spec().tensor_lengths();
    for (t, &len) in lengths.iter().enumerate() {
        for i in 0..len {
            let mut plus = params.clone();
            plus.trainable_mut()[t][i] += FD_STEP;
            let mut minus = params.clone();
            minus.trainable_mut()[t][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let analytic = grads.tensors[t][i];
            let scale = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

/// Straight-line evaluation of the sum-rate formula, one scalar at a time.
pub fn naive_sum_rate(h: &CMat, w: &CMat, noise: f64) -> f64 {
    let users = h.nrows();
    let mut total = 0.0;
    for u in 0..users {
        let mut signal = 0.0;
        let mut interference = 0.0;
        for v in 0..users {
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..h.ncols() {
                let (a, b) = (h[(u, i)], w[(i, v)]);
                re += a.re * b.re - a.im * b.im;
                im += a.re * b.im + a.im * b.re;
            }
            let mag = (re * re + im * im).sqrt();
            if u == v {
                signal = mag;
            } else {
                interference += mag;
            }
        }
        total += (1.0 + signal / (noise + interference)).log2();
    }
    total
}

pub fn hundred_km(users: usize, antennas: usize) -> ScenarioConfig {
    ScenarioConfig::with_layout(1, users, antennas, 100e3)
}

pub mod fd {
    use super::*;
    use satprecode::config::Activation;
    use satprecode::nn::{init_network, Mode, NetworkSpec};
    use satprecode::sac::{actor_loss, critic_loss, Batch};
    use satprecode::rng::SeedTree;

    fn random_network(sizes: Vec<usize>, rng: &mut SimRng) -> NetworkParameters {
        let act = if rng.random::<bool>() {
            Activation::LeakyRelu
        } else {
            Activation::PenalizedTanh
        };
        let spec = NetworkSpec::new(sizes, act, true).unwrap();
        let mut p = init_network(&spec, rng).unwrap();
        for l in 0..p.norms().len() {
            let width = p.norms()[l].gamma.len();
            let bn = p.norm_mut(l);
            for j in 0..width {
                bn.gamma[j] = rng.random_range(0.5..1.5);
                bn.beta[j] = rng.random_range(-0.5..0.5);
            }
        }
        let last = p.dense().len() - 1;
        let width = p.dense()[last].bias.len();
        for j in 0..width {
            p.dense_mut(last).bias[j] = rng.random_range(-0.2..0.2);
        }
        p
    }

    fn hidden(rng: &mut SimRng) -> Vec<usize> {
        (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=8)).collect()
    }

    /// Random projection loss through a batch-normalized network in train mode.
    pub fn network_case(seed: u64) -> f64 {
        let mut rng = SeedTree::new(seed).stream("fd-network", 0);
        let input = rng.random_range(2..=6);
        let output = rng.random_range(1..=4);
        let mut sizes = vec![input];
        sizes.extend(hidden(&mut rng));
        sizes.push(output);
        let net = random_network(sizes, &mut rng);
        let x = random_matrix(8, input, &mut rng);
        let proj = random_matrix(8, output, &mut rng);
        let loss = |p: &NetworkParameters| {
            let t = p.forward(&x, Mode::Train).unwrap();
            t.output().component_mul(&proj).sum() + 0.5 * t.output().norm_squared()
        };
        let trace = net.forward(&x, Mode::Train).unwrap();
        let d_out = &proj + trace.output();
        let (grads, _) = net.backward(&trace, &d_out).unwrap();
        worst_fd_error(&net, &grads, loss)
    }

    pub fn critic_case(seed: u64) -> f64 {
        let mut rng = SeedTree::new(seed).stream("fd-critic", 0);
        let (sd, ad) = (rng.random_range(2..=5), rng.random_range(1..=4));
        let mut sizes = vec![sd + ad];
        sizes.extend(hidden(&mut rng));
        sizes.push(1);
        let critic = random_network(sizes, &mut rng);
        let batch = Batch {
            states: random_matrix(8, sd, &mut rng),
            actions: random_matrix(8, ad, &mut rng),
            rewards: nalgebra::DVector::from_fn(8, |_, _| rng.random_range(0.0..3.0)),
        };
        let l2 = 0.01;
        let analytic = critic_loss(&critic, &batch, l2).unwrap();
        worst_fd_error(&critic, &analytic.grads, |p| critic_loss(p, &batch, l2).unwrap().loss)
    }

    pub fn actor_case(seed: u64) -> f64 {
        let mut rng = SeedTree::new(seed).stream("fd-actor", 0);
        let (sd, ad) = (rng.random_range(2..=5), rng.random_range(1..=3));
        let mut sizes = vec![sd];
        sizes.extend(hidden(&mut rng));
        sizes.push(2 * ad);
        let actor = random_network(sizes, &mut rng);
        let critics: Vec<NetworkParameters> = (0..2)
            .map(|_| {
                let mut sizes = vec![sd + ad];
                sizes.extend(hidden(&mut rng));
                sizes.push(1);
                random_network(sizes, &mut rng)
            })
            .collect();
        let states = random_matrix(8, sd, &mut rng);
        let noise = satprecode::sac::standard_normal_matrix(8, ad, &mut rng);
        let (alpha, l2) = (rng.random_range(-2.0..1.0), 0.01);
        let loss = |p: &NetworkParameters| {
            actor_loss(p, [&critics[0], &critics[1]], &states, &noise, alpha, l2).unwrap().loss
        };
        let analytic = actor_loss(&actor, [&critics[0], &critics[1]], &states, &noise, alpha, l2).unwrap();
        worst_fd_error(&actor, &analytic.grads, loss)
    }
}

/// Stratified Monte Carlo estimate of the autocorrelation: one uniform draw
/// inside each of `samples` equal-width strata of the error interval.
pub fn autocorrelation_monte_carlo(cos: f64, bound: f64, n: usize, spacing: f64, lambda: f64, samples: usize, seed: u64) -> CMat {
    let mut rng = SeedTree::new(seed).stream("autocorrelation", 0);
    let a = steering_vector(cos, n, spacing, lambda);
    let kappa = steering_phase_coefficients(n, spacing, lambda);
    let mut acc = CMat::zeros(n, n);
    let mut v = vec![c(0.0, 0.0); n];
    for i in 0..samples {
        let e = -bound + 2.0 * bound * (i as f64 + rng.random::<f64>()) / samples as f64;
        for m in 0..n {
            v[m] = a[m] * c((kappa[m] * e).cos(), -(kappa[m] * e).sin());
        }
        for r in 0..n {
            let vr = v[r].conj();
            for s in 0..n {
                acc[(r, s)] += vr * v[s];
            }
        }
    }
    acc / c(samples as f64, 0.0)
}
