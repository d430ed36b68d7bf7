//! Analytical baselines: MMSE, robust SLNR and the distributed MMSE variants.

use std::str::FromStr;

use crate::channel::{estimate_aod_cosine, steering_phase_coefficients, steering_vector, views_for, CsitView, SimulationDraw};
use crate::config::{ErrorConfig, InfoMode, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{dominant_generalized_eigvec, hermitian_solve, CMat, CVec, C64};
use crate::metrics::{normalize_power, PrecodingMatrix};

/// Centralized MMSE on the full estimate `H~` (`U x K N`).
pub fn mmse_precoder(h_est: &CMat, config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    let raw = mmse_direction(h_est, config.noise_loading())?;
    let trace: f64 = raw.iter().map(|z| z.norm_sqr()).sum();
    if !(trace > 0.0) {
        return Err(Error::NonFinite("mmse precoder: zero channel estimate".into()));
    }
    let scaled = raw * C64::new((config.power_budget / trace).sqrt(), 0.0);
    Ok(normalize_power(&scaled, config.power_budget, config.num_satellites))
}

/// `[H^H H + rho I]^{-1} H^H`, evaluated as `H^H [H H^H + rho I_U]^{-1}`.
///
/// Both are the same matrix; the `U x U` system keeps the condition estimate
/// tied to user separability instead of the `K N - U` null directions that
/// only the noise loading fills.
fn mmse_direction(h: &CMat, rho: f64) -> Result<CMat> {
    let mut gram = h * h.adjoint();
    for i in 0..gram.nrows() {
        gram[(i, i)] += rho;
    }
    Ok(hermitian_solve(&gram, h, "mmse")?.adjoint())
}

/// `E[(a(cos) o a(e))^H (a(cos) o a(e))]` for `e ~ U(-bound, bound)`.
pub fn slnr_autocorrelation(cos_aod: f64, bound: f64, n: usize, spacing: f64, wavelength: f64) -> CMat {
    let a = steering_vector(cos_aod, n, spacing, wavelength);
    let kappa = steering_phase_coefficients(n, spacing, wavelength);
    CMat::from_fn(n, n, |m, k| {
        let x = (kappa[k] - kappa[m]) * bound;
        let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
        a[m].conj() * a[k] * sinc
    })
}

/// Per-user statistics fed to the robust SLNR precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SlnrStatistics {
    pub autocorrelation: Vec<CMat>,
    pub channel_power: Vec<f64>,
    pub error_bound: f64,
}

impl SlnrStatistics {
    /// AODs fitted from the phase ramp of each user's estimated channel.
    pub fn from_estimate(h_est: &CMat, bound: f64, config: &ScenarioConfig) -> Result<Self> {
        let cosines: Vec<f64> = (0..h_est.nrows())
            .map(|u| {
                let row: Vec<C64> = h_est.row(u).iter().copied().collect();
                estimate_aod_cosine(&row, config.antenna_spacing, config.wavelength)
            })
            .collect();
        Self::from_cosines(h_est, &cosines, bound, config)
    }

    pub fn from_cosines(h_est: &CMat, cosines: &[f64], bound: f64, config: &ScenarioConfig) -> Result<Self> {
        if config.num_satellites != 1 {
            return Err(Error::Config("robust SLNR is defined for a single satellite".into()));
        }
        let n = config.antennas_per_satellite;
        if h_est.ncols() != n || cosines.len() != h_est.nrows() {
            return Err(Error::dimension("slnr statistics", format!("{} x {n}", cosines.len()), format!("{:?}", h_est.shape())));
        }
        Ok(Self {
            autocorrelation: cosines
                .iter()
                .map(|&c| slnr_autocorrelation(c, bound, n, config.antenna_spacing, config.wavelength))
                .collect(),
            channel_power: (0..h_est.nrows())
                .map(|u| h_est.row(u).iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64)
                .collect(),
            error_bound: bound,
        })
    }
}

/// Output of the robust SLNR solve, with the eigenpairs kept for inspection.
#[derive(Debug, Clone)]
pub struct SlnrSolution {
    pub precoding: PrecodingMatrix,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<CVec>,
}

/// `M_u = (sum_{u' != u} s_{u'} C_{u'} + rho I)^{-1} s_u C_u`
pub fn slnr_matrices(stats: &SlnrStatistics, rho: f64) -> (Vec<CMat>, Vec<CMat>) {
    let users = stats.autocorrelation.len();
    let n = stats.autocorrelation.first().map_or(0, |c| c.nrows());
    let mut signals = Vec::with_capacity(users);
    let mut leakages = Vec::with_capacity(users);
    for u in 0..users {
        let mut leak = CMat::identity(n, n) * C64::new(rho, 0.0);
        for v in (0..users).filter(|&v| v != u) {
            leak += &stats.autocorrelation[v] * C64::new(stats.channel_power[v], 0.0);
        }
        signals.push(&stats.autocorrelation[u] * C64::new(stats.channel_power[u], 0.0));
        leakages.push(leak);
    }
    (signals, leakages)
}

pub fn robust_slnr_solve(stats: &SlnrStatistics, config: &ScenarioConfig) -> Result<SlnrSolution> {
    let users = stats.autocorrelation.len();
    let n = config.antennas_per_satellite;
    let (signals, leakages) = slnr_matrices(stats, config.noise_loading());
    let col_scale = config.power_budget / users as f64;
    let mut raw = CMat::zeros(n, users);
    let mut eigenvalues = Vec::with_capacity(users);
    let mut eigenvectors = Vec::with_capacity(users);
    for u in 0..users {
        let (lambda, v) = dominant_generalized_eigvec(&signals[u], &leakages[u], "robust slnr")?;
        raw.set_column(u, &(&v * C64::new(col_scale, 0.0)));
        eigenvalues.push(lambda);
        eigenvectors.push(v);
    }
    Ok(SlnrSolution {
        precoding: normalize_power(&raw, config.power_budget, 1),
        eigenvalues,
        eigenvectors,
    })
}

/// Robust SLNR with AODs fitted from the estimate.
pub fn robust_slnr_precoder(h_est: &CMat, bound: f64, config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    let stats = SlnrStatistics::from_estimate(h_est, bound, config)?;
    Ok(robust_slnr_solve(&stats, config)?.precoding)
}

/// Robust SLNR with the true AODs supplied.
pub fn robust_slnr_precoder_true_aod(
    h_est: &CMat,
    cosines: &[f64],
    bound: f64,
    config: &ScenarioConfig,
) -> Result<PrecodingMatrix> {
    let stats = SlnrStatistics::from_cosines(h_est, cosines, bound, config)?;
    Ok(robust_slnr_solve(&stats, config)?.precoding)
}

/// MMSE on a satellite's own block only, scaled to `P / K`.
pub fn local_mmse(view: &CsitView, config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    if view.mode != InfoMode::Local {
        return Err(Error::InvalidMode {
            mode: view.mode.to_string(),
            reason: "local MMSE needs a local view",
        });
    }
    let raw = mmse_direction(&view.matrix, config.noise_loading())?;
    Ok(normalize_power(&raw, config.power_budget / config.num_satellites as f64, 1))
}

/// `W_k = H~_k^H [H~_L H~_L^H + rho I_U]^{-1}` on a full-width view, scaled to `P / K`.
pub fn limited_mmse(view: &CsitView, config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    if !matches!(view.mode, InfoMode::Limited1 | InfoMode::Limited2) {
        return Err(Error::InvalidMode {
            mode: view.mode.to_string(),
            reason: "limited MMSE needs a full-width limited view",
        });
    }
    let n = config.antennas_per_satellite;
    if view.matrix.ncols() != config.total_antennas() {
        return Err(Error::dimension("limited mmse", config.total_antennas(), view.matrix.ncols()));
    }
    let hl = &view.matrix;
    let mut gram = hl * hl.adjoint();
    for i in 0..gram.nrows() {
        gram[(i, i)] += config.noise_loading();
    }
    let own = view.own_block(n);
    // W_k = own^H gram^{-1}, computed as (gram^{-1} own)^H since gram is Hermitian
    let raw = hermitian_solve(&gram, &own, "limited mmse")?.adjoint();
    Ok(normalize_power(&raw, config.power_budget / config.num_satellites as f64, 1))
}

/// Run a per-satellite precoder on every view and stack the slices.
pub fn distributed<F>(views: &[CsitView], mut slice: F) -> Result<PrecodingMatrix>
where
    F: FnMut(&CsitView) -> Result<PrecodingMatrix>,
{
    let slices = views.iter().map(&mut slice).collect::<Result<Vec<_>>>()?;
    PrecodingMatrix::stack(&slices)
}

/// Names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecoderName {
    Mmse,
    Slnr,
    MmseLocal,
    MmseL1,
    MmseL2,
    Sac,
    SacHybrid,
}

impl PrecoderName {
    pub const ALL: [PrecoderName; 7] = [
        PrecoderName::Mmse,
        PrecoderName::Slnr,
        PrecoderName::MmseLocal,
        PrecoderName::MmseL1,
        PrecoderName::MmseL2,
        PrecoderName::Sac,
        PrecoderName::SacHybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrecoderName::Mmse => "mmse",
            PrecoderName::Slnr => "slnr",
            PrecoderName::MmseLocal => "mmse-local",
            PrecoderName::MmseL1 => "mmse-l1",
            PrecoderName::MmseL2 => "mmse-l2",
            PrecoderName::Sac => "sac",
            PrecoderName::SacHybrid => "sac-hybrid",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PrecoderName::Sac | PrecoderName::SacHybrid)
    }
}

impl std::fmt::Display for PrecoderName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecoderName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PrecoderName::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| Error::UnknownPrecoder(s.to_string()))
    }
}

/// An analytical precoder bound to its scenario, ready to run on draws.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub name: PrecoderName,
    pub config: ScenarioConfig,
    pub error: ErrorConfig,
    pub slnr_true_aod: bool,
}

impl Baseline {
    pub fn new(name: PrecoderName, config: &ScenarioConfig, error: &ErrorConfig) -> Result<Self> {
        if name.is_learned() {
            return Err(Error::UnknownPrecoder(format!("{name} is not an analytical precoder")));
        }
        Ok(Self {
            name,
            config: config.clone(),
            error: *error,
            slnr_true_aod: false,
        })
    }

    pub fn with_true_aod(mut self, on: bool) -> Self {
        self.slnr_true_aod = on;
        self
    }

    pub fn precode(&self, draw: &SimulationDraw) -> Result<PrecodingMatrix> {
        let cfg = &self.config;
        let est = &draw.estimate;
        let views = |mode| views_for(cfg, est, &draw.channel, &self.error, mode);
        match self.name {
            PrecoderName::Mmse => mmse_precoder(&est.h_est, cfg),
            PrecoderName::Slnr => {
                let bound = self.error.aod_error_bound;
                if self.slnr_true_aod {
                    let cos: Vec<f64> = draw.channel.geometry.aod_cosines.column(0).iter().copied().collect();
                    robust_slnr_precoder_true_aod(&est.h_est, &cos, bound, cfg)
                } else {
                    robust_slnr_precoder(&est.h_est, bound, cfg)
                }
            }
            PrecoderName::MmseLocal => distributed(&views(InfoMode::Local)?, |v| local_mmse(v, cfg)),
            PrecoderName::MmseL1 => distributed(&views(InfoMode::Limited1)?, |v| limited_mmse(v, cfg)),
            PrecoderName::MmseL2 => distributed(&views(InfoMode::Limited2)?, |v| limited_mmse(v, cfg)),
            PrecoderName::Sac | PrecoderName::SacHybrid => unreachable!("rejected in Baseline::new"),
        }
    }
}
