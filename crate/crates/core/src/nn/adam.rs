use crate::error::{Error, Result};

use super::{Gradients, NetworkParameters};

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn with_lengths(lengths: &[usize], learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second: lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn new(params: &NetworkParameters, learning_rate: f64) -> Self {
        Self::with_lengths(&params.spec().tensor_lengths(), learning_rate)
    }
}

/// One Adam update over an arbitrary list of tensors.
pub fn adam_update(tensors: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    let shapes_ok = tensors.len() == grads.len()
        && tensors.len() == state.first.len()
        && tensors
            .iter()
            .zip(grads)
            .zip(&state.first)
            .all(|((t, g), m)| t.len() == g.len() && g.len() == m.len());
    if !shapes_ok {
        return Err(Error::dimension(
            "adam",
            format!("{} tensors", state.first.len()),
            format!("{} tensors", grads.len()),
        ));
    }
    check_finite(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    for (((param, g), m), v) in tensors
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            param[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

fn check_finite(grads: &[Vec<f64>]) -> Result<()> {
    for (i, g) in grads.iter().enumerate() {
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient tensor {i}, entry {j} = {}", g[j])));
        }
    }
    Ok(())
}

pub fn adam_step(params: &mut NetworkParameters, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    check_finite(&grads.tensors)?;
    let mut tensors = params.trainable_mut();
    adam_update(&mut tensors, &grads.tensors, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0];
        let mut s = AdamState::with_lengths(&[1], 1e-3);
        adam_update(&mut [p.as_mut_slice()], &[vec![0.5]], &mut s).unwrap();
        assert!((p[0] + 1e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::with_lengths(&[2], 1e-2);
        for _ in 0..10 {
            adam_update(&mut [p.as_mut_slice()], &[vec![0.0, 0.0]], &mut s).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![0.3];
        let mut s = AdamState::with_lengths(&[1], 1e-2);
        let r = adam_update(&mut [p.as_mut_slice()], &[vec![f64::NAN]], &mut s);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(s.step, 0);
        assert_eq!(p, vec![0.3]);
    }
}
