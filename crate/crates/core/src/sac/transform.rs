//! Channel-to-state and action-to-precoding transforms.

use std::f64::consts::PI;

use crate::channel::{views_for, CsitView, SimulationDraw};
use crate::config::{ErrorConfig, InfoMode, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::metrics::{normalize_power, PrecodingMatrix};
use crate::rng::SeedTree;

/// Amplitudes of all entries (row-major over the view) followed by all phases.
pub fn raw_state(view: &CMat) -> Vec<f64> {
    let (rows, cols) = view.shape();
    let n = rows * cols;
    let mut s = vec![0.0; 2 * n];
    for u in 0..rows {
        for c in 0..cols {
            let z = view[(u, c)];
            let i = u * cols + c;
            s[i] = z.norm();
            s[n + i] = principal_phase(z);
        }
    }
    s
}

/// Phase in `(-pi, pi]`.
fn principal_phase(z: C64) -> f64 {
    let p = z.arg();
    if p == -PI {
        PI
    } else {
        p
    }
}

/// Per-feature input scaling estimated once during warm-up.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub amplitude_mean: Vec<f64>,
    pub amplitude_scale: Vec<f64>,
    pub phase_scale: Vec<f64>,
    /// Features whose sample spread was zero; a guard scale replaced it.
    pub degenerate: Vec<usize>,
    frozen: bool,
}

impl Standardizer {
    /// Pass-through scaling, used when standardization is switched off.
    pub fn identity(entries: usize) -> Self {
        Self {
            amplitude_mean: vec![0.0; entries],
            amplitude_scale: vec![1.0; entries],
            phase_scale: vec![1.0; entries],
            degenerate: Vec::new(),
            frozen: true,
        }
    }

    /// Not yet usable; [`Standardizer::fit`] freezes it.
    pub fn unfrozen(entries: usize) -> Self {
        Self {
            frozen: false,
            ..Self::identity(entries)
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn entries(&self) -> usize {
        self.amplitude_mean.len()
    }

    /// Estimate amplitude mean/std and phase std from raw states and freeze.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Config("warm-up needs at least one sample".into()))?;
        let entries = first.len() / 2;
        let n = samples.len() as f64;
        let mut st = Self::identity(entries);
        for i in 0..entries {
            let amp_mean = samples.iter().map(|s| s[i]).sum::<f64>() / n;
            let amp_var = samples.iter().map(|s| (s[i] - amp_mean).powi(2)).sum::<f64>() / n;
            let ph_mean = samples.iter().map(|s| s[entries + i]).sum::<f64>() / n;
            let ph_var = samples.iter().map(|s| (s[entries + i] - ph_mean).powi(2)).sum::<f64>() / n;
            st.amplitude_mean[i] = amp_mean;
            let amp_std = amp_var.sqrt();
            // a spread below rounding level of the mean carries no information
            if amp_std <= 1e-12 * amp_mean.abs() || amp_std == 0.0 {
                st.degenerate.push(i);
                st.amplitude_scale[i] = if amp_mean != 0.0 { amp_mean.abs() } else { 1.0 };
            } else {
                st.amplitude_scale[i] = amp_std;
            }
            let ph_std = ph_var.sqrt();
            if ph_std <= 1e-12 {
                st.degenerate.push(entries + i);
                st.phase_scale[i] = 1.0;
            } else {
                st.phase_scale[i] = ph_std;
            }
        }
        Ok(st)
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if !self.frozen {
            return Err(Error::UnfrozenStandardizer);
        }
        let n = self.entries();
        if raw.len() != 2 * n {
            return Err(Error::dimension("state", 2 * n, raw.len()));
        }
        let mut out = Vec::with_capacity(2 * n);
        out.extend((0..n).map(|i| (raw[i] - self.amplitude_mean[i]) / self.amplitude_scale[i]));
        out.extend((0..n).map(|i| raw[n + i] / self.phase_scale[i]));
        Ok(out)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.amplitude_mean.clone();
        v.extend(&self.amplitude_scale);
        v.extend(&self.phase_scale);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(3) {
            return Err(Error::dimension("standardizer", "multiple of 3", v.len()));
        }
        let n = v.len() / 3;
        Ok(Self {
            amplitude_mean: v[..n].to_vec(),
            amplitude_scale: v[n..2 * n].to_vec(),
            phase_scale: v[2 * n..].to_vec(),
            degenerate: Vec::new(),
            frozen: true,
        })
    }
}

/// Standardized state of one view.
pub fn input_transform(view: &CsitView, standardizer: &Standardizer) -> Result<Vec<f64>> {
    standardizer.apply(&raw_state(&view.matrix))
}

/// Number of agents and the state width for an information model.
pub fn agent_layout(config: &ScenarioConfig, mode: InfoMode) -> (usize, usize) {
    match mode {
        InfoMode::Global => (1, config.total_antennas()),
        InfoMode::Local => (config.num_satellites, config.antennas_per_satellite),
        InfoMode::Limited1 | InfoMode::Limited2 => (config.num_satellites, config.total_antennas()),
    }
}

/// Fit one standardizer per agent from `samples` fresh draws.
pub fn warmup_standardizer(
    config: &ScenarioConfig,
    err: &ErrorConfig,
    mode: InfoMode,
    samples: usize,
    seeds: &SeedTree,
) -> Result<Vec<Standardizer>> {
    if samples == 0 {
        return Err(Error::Config("warm-up needs at least one sample".into()));
    }
    let (agents, _) = agent_layout(config, mode);
    let mut per_agent: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(samples); agents];
    for i in 0..samples {
        let draw = SimulationDraw::new(config, err, &mut seeds.draw(i as u64));
        let views = views_for(config, &draw.estimate, &draw.channel, err, mode)?;
        for (k, v) in views.iter().enumerate() {
            per_agent[k].push(raw_state(&v.matrix));
        }
    }
    per_agent.iter().map(|s| Standardizer::fit(s)).collect()
}

/// Pair real and imaginary halves into a `cols x U` matrix: action index `i`
/// lands in row `i % cols`, column `i / cols`, the transpose of the state
/// layout's user-major order.
pub fn action_to_matrix(a: &[f64], users: usize, cols: usize) -> Result<CMat> {
    let n = users * cols;
    if a.len() != 2 * n {
        return Err(Error::dimension("action", 2 * n, a.len()));
    }
    Ok(CMat::from_fn(cols, users, |c, u| {
        let i = u * cols + c;
        C64::new(a[i], a[n + i])
    }))
}

/// Inverse of [`action_to_matrix`].
pub fn matrix_to_action(w: &CMat) -> Vec<f64> {
    let (cols, users) = w.shape();
    let n = cols * users;
    let mut a = vec![0.0; 2 * n];
    for u in 0..users {
        for c in 0..cols {
            let i = u * cols + c;
            a[i] = w[(c, u)].re;
            a[n + i] = w[(c, u)].im;
        }
    }
    a
}

/// Centralized action to a full precoding normalized per satellite.
pub fn output_transform(a: &[f64], config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    let w = action_to_matrix(a, config.num_users, config.total_antennas())?;
    Ok(normalize_power(&w, config.power_budget, config.num_satellites))
}

/// Per-satellite action to one slice carrying `P / K`.
pub fn output_transform_slice(a: &[f64], config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    let w = action_to_matrix(a, config.num_users, config.antennas_per_satellite)?;
    Ok(normalize_power(&w, config.power_budget / config.num_satellites as f64, 1))
}
