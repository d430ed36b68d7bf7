//! Sum rate, Monte Carlo means, the per-satellite power constraint and beam patterns.

use rayon::prelude::*;

use crate::channel::{steering_vector, SimulationDraw};
use crate::config::{ErrorConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::rng::SeedTree;

/// A `(K N) x U` precoding whose satellite slices each carry at most `P / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix {
    w: CMat,
    num_satellites: usize,
    per_satellite_power: Vec<f64>,
    zero_slices: Vec<usize>,
}

impl PrecodingMatrix {
    pub fn matrix(&self) -> &CMat {
        &self.w
    }

    pub fn into_matrix(self) -> CMat {
        self.w
    }

    pub fn num_satellites(&self) -> usize {
        self.num_satellites
    }

    pub fn per_satellite_power(&self) -> &[f64] {
        &self.per_satellite_power
    }

    /// Satellites whose slice was all zero before normalization.
    pub fn zero_slices(&self) -> &[usize] {
        &self.zero_slices
    }

    pub fn antennas_per_satellite(&self) -> usize {
        self.w.nrows() / self.num_satellites
    }

    pub fn slice(&self, k: usize) -> CMat {
        let n = self.antennas_per_satellite();
        self.w.rows(k * n, n).into_owned()
    }

    /// `||W_k||^2 <= P / K + tol` for every satellite.
    pub fn satisfies_power(&self, power_budget: f64, tol: f64) -> bool {
        let cap = power_budget / self.num_satellites as f64;
        self.per_satellite_power.iter().all(|p| *p <= cap + tol)
    }

    /// Stack per-satellite `N x U` slices (already normalized) into one matrix.
    pub fn stack(slices: &[PrecodingMatrix]) -> Result<PrecodingMatrix> {
        let first = slices
            .first()
            .ok_or_else(|| Error::dimension("stack", "at least one slice", 0))?;
        let (n, u) = first.w.shape();
        let mut w = CMat::zeros(n * slices.len(), u);
        let mut power = Vec::with_capacity(slices.len());
        let mut zero = Vec::new();
        for (k, s) in slices.iter().enumerate() {
            if s.w.shape() != (n, u) || s.num_satellites != 1 {
                return Err(Error::dimension("stack", format!("{n}x{u} slice"), format!("{:?}", s.w.shape())));
            }
            w.rows_mut(k * n, n).copy_from(&s.w);
            power.push(s.per_satellite_power[0]);
            if !s.zero_slices.is_empty() {
                zero.push(k);
            }
        }
        Ok(PrecodingMatrix {
            w,
            num_satellites: slices.len(),
            per_satellite_power: power,
            zero_slices: zero,
        })
    }
}

/// Scale every satellite slice of `raw` to exactly `P / K`; all-zero slices stay zero.
pub fn normalize_power(raw: &CMat, power_budget: f64, num_satellites: usize) -> PrecodingMatrix {
    assert!(num_satellites > 0 && raw.nrows().is_multiple_of(num_satellites));
    let n = raw.nrows() / num_satellites;
    let target = power_budget / num_satellites as f64;
    let mut w = raw.clone();
    let mut per_satellite_power = Vec::with_capacity(num_satellites);
    let mut zero_slices = Vec::new();
    for k in 0..num_satellites {
        let mut slice = w.rows_mut(k * n, n);
        let norm_sq: f64 = slice.iter().map(|z| z.norm_sqr()).sum();
        if norm_sq > 0.0 && norm_sq.is_finite() {
            slice *= C64::new((target / norm_sq).sqrt(), 0.0);
            per_satellite_power.push(slice.iter().map(|z| z.norm_sqr()).sum());
        } else {
            slice.fill(C64::new(0.0, 0.0));
            per_satellite_power.push(0.0);
            zero_slices.push(k);
        }
    }
    PrecodingMatrix {
        w,
        num_satellites,
        per_satellite_power,
        zero_slices,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SumRateReport {
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
    pub per_user_signal: Vec<f64>,
    pub per_user_interference: Vec<f64>,
}

/// `R = sum_u log2(1 + |h_u w_u| / (sigma^2 + sum_{u' != u} |h_u w_u'|))`.
///
/// With `squared` set, every magnitude is squared (the conventional SINR).
pub fn sum_rate(h: &CMat, w: &CMat, noise_power: f64, squared: bool) -> Result<SumRateReport> {
    let users = h.nrows();
    if w.nrows() != h.ncols() || w.ncols() != users {
        return Err(Error::dimension(
            "sum_rate",
            format!("{}x{}", h.ncols(), users),
            format!("{}x{}", w.nrows(), w.ncols()),
        ));
    }
    let gains = h * w;
    let mag = |z: C64| if squared { z.norm_sqr() } else { z.norm() };
    let mut per_user_rate = Vec::with_capacity(users);
    let mut per_user_signal = Vec::with_capacity(users);
    let mut per_user_interference = Vec::with_capacity(users);
    for u in 0..users {
        let signal = mag(gains[(u, u)]);
        let interference: f64 = (0..users).filter(|&v| v != u).map(|v| mag(gains[(u, v)])).sum();
        per_user_rate.push((signal / (noise_power + interference)).ln_1p() / std::f64::consts::LN_2);
        per_user_signal.push(signal);
        per_user_interference.push(interference);
    }
    Ok(SumRateReport {
        sum_rate: per_user_rate.iter().sum(),
        per_user_rate,
        per_user_signal,
        per_user_interference,
    })
}

/// Sum rate of `w` on the true channel of a scenario.
pub fn scenario_rate(config: &ScenarioConfig, h: &CMat, w: &PrecodingMatrix) -> Result<f64> {
    Ok(sum_rate(h, w.matrix(), config.noise_power, config.sinr_squared)?.sum_rate)
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateStats {
    pub mean: f64,
    pub std_err: f64,
    pub samples: Vec<f64>,
}

impl RateStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        if !samples.is_empty() && samples.iter().all(|&x| x == samples[0]) {
            // exact for degenerate distributions, where rounding in the sum would leak
            return Self {
                mean: samples[0],
                std_err: 0.0,
                samples,
            };
        }
        let mean = pairwise_sum(&samples) / n;
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean).powi(2)).collect();
        let var = if samples.len() > 1 {
            pairwise_sum(&dev) / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n).sqrt(),
            samples,
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Mean and standard error of `self - other` on paired samples.
    pub fn paired_difference(&self, other: &RateStats) -> RateStats {
        assert_eq!(self.n(), other.n(), "paired samples must align");
        RateStats::from_samples(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

/// Evaluate several precoders on the same `n_draws` independent draws.
///
/// Draw `i` is generated from `seeds.draw(i)`, so results do not depend on
/// worker count or scheduling.
pub fn evaluate_precoders<F>(
    config: &ScenarioConfig,
    err: &ErrorConfig,
    precoders: &[F],
    n_draws: usize,
    seeds: &SeedTree,
) -> Result<Vec<RateStats>>
where
    F: Fn(&SimulationDraw) -> Result<PrecodingMatrix> + Sync,
{
    if n_draws == 0 {
        return Err(Error::Config("n_draws must be >= 1".into()));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let draw = SimulationDraw::new(config, err, &mut seeds.draw(i as u64));
            precoders
                .iter()
                .map(|p| {
                    let w = p(&draw)?;
                    scenario_rate(config, &draw.channel.h, &w)
                })
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| Error::Draw {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((0..precoders.len())
        .map(|p| RateStats::from_samples(rows.iter().map(|r| r[p]).collect()))
        .collect())
}

/// Monte Carlo mean sum rate of one precoder.
pub fn mean_sum_rate<F>(
    config: &ScenarioConfig,
    err: &ErrorConfig,
    precoder: F,
    n_draws: usize,
    seeds: &SeedTree,
) -> Result<RateStats>
where
    F: Fn(&SimulationDraw) -> Result<PrecodingMatrix> + Sync,
{
    let mut v = evaluate_precoders(config, err, &[precoder], n_draws, seeds)?;
    Ok(v.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamPattern {
    pub grid: Vec<f64>,
    /// `gains[u][i]` is the power gain of user `u`'s beam at `grid[i]`.
    pub gains: Vec<Vec<f64>>,
}

/// Power radiated by each precoding column toward every AOD cosine of `grid`.
pub fn beam_pattern(
    w: &PrecodingMatrix,
    config: &ScenarioConfig,
    grid: &[f64],
) -> Result<BeamPattern> {
    if grid.is_empty() {
        return Err(Error::Config("beam pattern grid is empty".into()));
    }
    let n = config.antennas_per_satellite;
    let k = w.num_satellites();
    if w.matrix().nrows() != n * k {
        return Err(Error::dimension("beam_pattern", n * k, w.matrix().nrows()));
    }
    let users = w.matrix().ncols();
    let mut gains = vec![Vec::with_capacity(grid.len()); users];
    for &c in grid {
        let a = steering_vector(c, n, config.antenna_spacing, config.wavelength);
        for (u, curve) in gains.iter_mut().enumerate() {
            let col = w.matrix().column(u);
            let resp: C64 = (0..k)
                .map(|s| {
                    (0..n)
                        .map(|m| a[m] * col[s * n + m])
                        .sum::<C64>()
                })
                .sum();
            curve.push(resp.norm_sqr());
        }
    }
    Ok(BeamPattern {
        grid: grid.to_vec(),
        gains,
    })
}

/// Evenly spaced grid on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Width of the contiguous region around the peak where the curve stays
/// within 3 dB of its maximum.
pub fn half_power_width(grid: &[f64], curve: &[f64]) -> f64 {
    let (peak, max) = curve
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let thresh = max / 2.0;
    let mut lo = peak;
    while lo > 0 && curve[lo - 1] >= thresh {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < curve.len() && curve[hi + 1] >= thresh {
        hi += 1;
    }
    grid[hi] - grid[lo]
}
