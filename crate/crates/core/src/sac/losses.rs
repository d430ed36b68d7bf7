//! Critic regression on immediate rewards and the entropy-regularized actor loss.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mode, NetworkParameters, Trace};

use super::buffer::{concat_columns, Batch};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Mean and log-spread halves of one actor output row.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    pub mean: Vec<f64>,
    pub log_spread: Vec<f64>,
}

impl ActorOutput {
    pub fn from_row(row: &[f64]) -> Result<Self> {
        if !row.len().is_multiple_of(2) {
            return Err(Error::dimension("actor output", "even width", row.len()));
        }
        let a = row.len() / 2;
        Ok(Self {
            mean: row[..a].to_vec(),
            log_spread: row[a..].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Infer,
}

/// `sum_i (-n_i^2 / 2 - s_i - ln(2 pi) / 2)` for `a = mu + exp(s) n`.
pub fn gaussian_logprob(noise: &[f64], log_spread: &[f64]) -> f64 {
    noise
        .iter()
        .zip(log_spread)
        .map(|(n, s)| -0.5 * n * n - s - HALF_LN_2PI)
        .sum()
}

/// Train mode samples `mu + exp(s) n`; infer mode returns the mean.
pub fn sample_action(out: &ActorOutput, mode: SampleMode, rng: &mut impl Rng) -> (Vec<f64>, Option<f64>) {
    match mode {
        SampleMode::Infer => (out.mean.clone(), None),
        SampleMode::Train => {
            let noise: Vec<f64> = (0..out.dim()).map(|_| rng.sample(StandardNormal)).collect();
            (action_from_noise(out, &noise), Some(gaussian_logprob(&noise, &out.log_spread)))
        }
    }
}

pub fn action_from_noise(out: &ActorOutput, noise: &[f64]) -> Vec<f64> {
    out.mean
        .iter()
        .zip(&out.log_spread)
        .zip(noise)
        .map(|((m, s), n)| m + s.exp() * n)
        .collect()
}

pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub mse: f64,
    pub grads: Gradients,
    pub trace: Trace,
}

/// `(1/B) sum_b (Q(s_b, a_b) - R_b)^2 + l2 / 2 ||theta||^2`; the target is the reward itself.
pub fn critic_loss(critic: &NetworkParameters, batch: &Batch, l2: f64) -> Result<CriticLoss> {
    if batch.is_empty() {
        return Err(Error::Config("critic loss needs a non-empty batch".into()));
    }
    let trace = critic.forward(&batch.critic_input(), Mode::Train)?;
    let b = batch.len() as f64;
    let resid = trace.output().column(0) - &batch.rewards;
    let mse = resid.norm_squared() / b;
    let loss = mse + l2 * critic.l2_penalty();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("critic loss (mse {mse})")));
    }
    let d_out = DMatrix::from_column_slice(batch.len(), 1, (resid * (2.0 / b)).as_slice());
    let (mut grads, _) = critic.backward(&trace, &d_out)?;
    grads.add_l2(critic, l2);
    Ok(CriticLoss { loss, mse, grads, trace })
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    /// `-mean min(Q1, Q2)`
    pub value_term: f64,
    /// Mean log-probability of the fresh samples.
    pub mean_logprob: f64,
    pub grads: Gradients,
    pub trace: Trace,
    pub mean_spread: f64,
}

/// Reparameterized actor loss with the noise supplied by the caller.
///
/// `L = -mean_b min(Q1, Q2)(s_b, a_b) + exp(alpha_e) mean_b log pi(a_b | s_b) + l2 / 2 ||theta||^2`
/// with `a_b = mu(s_b) + exp(s(s_b)) o n_b`. The critics are evaluated with
/// batch statistics and are not modified.
pub fn actor_loss(
    actor: &NetworkParameters,
    critics: [&NetworkParameters; 2],
    states: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    entropy_scale: f64,
    l2: f64,
) -> Result<ActorLoss> {
    let bsz = states.nrows();
    if bsz == 0 {
        return Err(Error::Config("actor loss needs a non-empty batch".into()));
    }
    let trace = actor.forward(states, Mode::Train)?;
    let out = trace.output();
    let dim = out.ncols() / 2;
    if noise.shape() != (bsz, dim) {
        return Err(Error::dimension("actor noise", format!("{bsz}x{dim}"), format!("{:?}", noise.shape())));
    }
    let mean = out.columns(0, dim);
    let log_spread = out.columns(dim, dim);
    let spread = log_spread.map(f64::exp);
    let actions = mean + spread.component_mul(noise);
    let x = concat_columns(states, &actions);
    let t1 = critics[0].forward(&x, Mode::Train)?;
    let t2 = critics[1].forward(&x, Mode::Train)?;
    let b = bsz as f64;
    let mut d1 = DMatrix::zeros(bsz, 1);
    let mut d2 = DMatrix::zeros(bsz, 1);
    let mut value_sum = 0.0;
    for r in 0..bsz {
        let (q1, q2) = (t1.output()[(r, 0)], t2.output()[(r, 0)]);
        if q1 <= q2 {
            value_sum += q1;
            d1[(r, 0)] = -1.0 / b;
        } else {
            value_sum += q2;
            d2[(r, 0)] = -1.0 / b;
        }
    }
    let value_term = -value_sum / b;
    let mut logprob_sum = 0.0;
    for r in 0..bsz {
        for i in 0..dim {
            let n = noise[(r, i)];
            logprob_sum += -0.5 * n * n - log_spread[(r, i)] - HALF_LN_2PI;
        }
    }
    let mean_logprob = logprob_sum / b;
    let temperature = entropy_scale.exp();
    let loss = value_term + temperature * mean_logprob + l2 * actor.l2_penalty();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "actor loss (value {value_term}, logprob {mean_logprob})"
        )));
    }
    let (_, dx1) = critics[0].backward(&t1, &d1)?;
    let (_, dx2) = critics[1].backward(&t2, &d2)?;
    let sdim = states.ncols();
    let da = dx1.columns(sdim, dim) + dx2.columns(sdim, dim);
    let mut d_out = DMatrix::zeros(bsz, 2 * dim);
    d_out.columns_mut(0, dim).copy_from(&da);
    let d_spread = da.component_mul(noise).component_mul(&spread).add_scalar(-temperature / b);
    d_out.columns_mut(dim, dim).copy_from(&d_spread);
    let (mut grads, _) = actor.backward(&trace, &d_out)?;
    grads.add_l2(actor, l2);
    let mean_spread = spread.mean();
    Ok(ActorLoss {
        loss,
        value_term,
        mean_logprob,
        grads,
        trace,
        mean_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn logprob_at_mean_with_unit_spread() {
        let lp = gaussian_logprob(&[0.0, 0.0], &[0.0, 0.0]);
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn infer_mode_returns_mean() {
        let out = ActorOutput::from_row(&[0.3, -1.0, 2.0, 5.0]).unwrap();
        let (a, lp) = sample_action(&out, SampleMode::Infer, &mut SeedTree::new(0).stream("a", 0));
        assert_eq!(a, vec![0.3, -1.0]);
        assert!(lp.is_none());
    }

    #[test]
    fn train_mode_is_reproducible() {
        let out = ActorOutput::from_row(&[0.3, -1.0, 0.2, -0.5]).unwrap();
        let a = sample_action(&out, SampleMode::Train, &mut SeedTree::new(5).stream("a", 0));
        let b = sample_action(&out, SampleMode::Train, &mut SeedTree::new(5).stream("a", 0));
        assert_eq!(a, b);
    }
}
