//! Line-of-sight satellite downlink channels and erroneous CSIT.
//!
//! Geometry is two dimensional: satellites sit on a horizontal line at the
//! orbit altitude, users on the ground line below. The AOD is referenced to
//! broadside, so `cos(theta) = (x_user - x_sat) / d` is zero for a user at
//! nadir and stays within `[-1, 1]`.
//!
//! The channel row of user `u` is the concatenation of one `1 x N` block per
//! satellite, ordered by satellite index:
//!
//! ```text
//! h_{u,k} = lambda sqrt(G_sat G_usr) / (4 pi d_{u,k}) / sqrt(chi_{u,k})
//!           * exp(-j psi_{u,k}) * a(cos theta_{u,k})
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{ErrorConfig, InfoMode, PhaseModel, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{expj_neg, CMat, CVec, C64};
use crate::rng::DrawRngs;

/// `2 pi (d_n / lambda) (N + 1 - 2m) / 2` for `m = 1..=N`.
pub fn steering_phase_coefficients(n: usize, spacing: f64, wavelength: f64) -> Vec<f64> {
    (1..=n)
        .map(|m| 2.0 * PI * (spacing / wavelength) * ((n + 1) as f64 - 2.0 * m as f64) / 2.0)
        .collect()
}

/// Steering vector of an `N`-element ULA centered on its geometric middle.
pub fn steering_vector(cos_arg: f64, n: usize, spacing: f64, wavelength: f64) -> CVec {
    let coeffs = steering_phase_coefficients(n, spacing, wavelength);
    CVec::from_iterator(n, coeffs.iter().map(|k| expj_neg(k * cos_arg)))
}

fn uniform_offset(rng: &mut impl Rng, half_width: f64) -> f64 {
    // always consume one draw so a zero width does not shift the stream
    let u: f64 = rng.random();
    half_width * (2.0 * u - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryRealization {
    /// Horizontal satellite positions, m (all at the orbit altitude).
    pub sat_positions: Vec<f64>,
    /// Horizontal user positions on the ground, m.
    pub user_positions: Vec<f64>,
    /// `U x K`
    pub distances: DMatrix<f64>,
    /// `U x K`
    pub aod_cosines: DMatrix<f64>,
}

impl GeometryRealization {
    pub fn from_positions(sats: Vec<f64>, users: Vec<f64>, altitude: f64) -> Self {
        let (nu, nk) = (users.len(), sats.len());
        let mut distances = DMatrix::zeros(nu, nk);
        let mut aod_cosines = DMatrix::zeros(nu, nk);
        for (u, xu) in users.iter().enumerate() {
            for (k, xk) in sats.iter().enumerate() {
                let dx = xu - xk;
                let d = dx.hypot(altitude);
                distances[(u, k)] = d;
                aod_cosines[(u, k)] = dx / d;
            }
        }
        Self {
            sat_positions: sats,
            user_positions: users,
            distances,
            aod_cosines,
        }
    }
}

fn nominal_positions(count: usize, spacing: f64) -> impl Iterator<Item = f64> {
    let center = (count as f64 - 1.0) / 2.0;
    (0..count).map(move |i| (i as f64 - center) * spacing)
}

/// Draw satellite and user positions around their nominal, centered layout.
pub fn place_constellation(config: &ScenarioConfig, rng: &mut impl Rng) -> GeometryRealization {
    debug_assert!(config.validate().is_ok());
    let sats: Vec<f64> = nominal_positions(config.num_satellites, config.inter_sat_distance)
        .map(|x| x + uniform_offset(rng, config.sat_roam))
        .collect();
    let users: Vec<f64> = nominal_positions(config.num_users, config.inter_user_distance)
        .map(|x| x + uniform_offset(rng, config.user_roam))
        .collect();
    GeometryRealization::from_positions(sats, users, config.altitude)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub geometry: GeometryRealization,
    /// Large-scale fading draws `chi`, `U x K`.
    pub fading: DMatrix<f64>,
    /// Phase rotations `psi` in `[0, 2 pi)`, `U x K`.
    pub phase_shifts: DMatrix<f64>,
    /// True channel, `U x (K N)`.
    pub h: CMat,
}

/// Free-space amplitude of one satellite-user link, before fading.
pub fn path_amplitude(config: &ScenarioConfig, distance: f64) -> f64 {
    config.wavelength * (config.sat_gain * config.user_gain).sqrt() / (4.0 * PI * distance)
}

/// Assemble `H` from explicit geometry, fading and phase draws.
pub fn assemble_channel(
    config: &ScenarioConfig,
    geometry: &GeometryRealization,
    fading: &DMatrix<f64>,
    phase_shifts: &DMatrix<f64>,
) -> CMat {
    let (nu, nk, n) = (
        config.num_users,
        config.num_satellites,
        config.antennas_per_satellite,
    );
    let coeffs = steering_phase_coefficients(n, config.antenna_spacing, config.wavelength);
    let mut h = CMat::zeros(nu, nk * n);
    for u in 0..nu {
        for k in 0..nk {
            let amp = path_amplitude(config, geometry.distances[(u, k)]) / fading[(u, k)].sqrt();
            let rot = expj_neg(phase_shifts[(u, k)]) * amp;
            let cos = geometry.aod_cosines[(u, k)];
            for (m, coef) in coeffs.iter().enumerate() {
                h[(u, k * n + m)] = rot * expj_neg(coef * cos);
            }
        }
    }
    h
}

/// Draw fading and phases for a given geometry and build `H`.
pub fn build_channel_on(
    config: &ScenarioConfig,
    geometry: GeometryRealization,
    fading_rng: &mut impl Rng,
) -> ChannelRealization {
    let (nu, nk) = (config.num_users, config.num_satellites);
    let mut fading = DMatrix::zeros(nu, nk);
    let mut phase_shifts = DMatrix::zeros(nu, nk);
    for u in 0..nu {
        for k in 0..nk {
            let z: f64 = fading_rng.sample(StandardNormal);
            fading[(u, k)] = (config.fading_scale * z).exp();
            phase_shifts[(u, k)] = match config.phase_model {
                PhaseModel::Distance => {
                    (2.0 * PI * geometry.distances[(u, k)] / config.wavelength).rem_euclid(2.0 * PI)
                }
                PhaseModel::Uniform => fading_rng.random::<f64>() * 2.0 * PI,
            };
        }
    }
    let h = assemble_channel(config, &geometry, &fading, &phase_shifts);
    ChannelRealization {
        geometry,
        fading,
        phase_shifts,
        h,
    }
}

/// One full channel draw: geometry from the geometry stream, fading from the fading stream.
pub fn build_channel(config: &ScenarioConfig, rngs: &mut DrawRngs) -> ChannelRealization {
    let geometry = place_constellation(config, &mut rngs.geometry);
    build_channel_on(config, geometry, &mut rngs.fading)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsitEstimate {
    /// `U x (K N)`
    pub h_est: CMat,
    /// AOD-cosine error realizations, `U x K`.
    pub aod_errors: DMatrix<f64>,
    /// Phase error realizations, rad, `U x K`.
    pub phase_errors: DMatrix<f64>,
}

/// Apply given error realizations to `h`; `aod_scale` multiplies every AOD error.
pub fn estimate_with_draws(
    config: &ScenarioConfig,
    h: &CMat,
    aod_errors: &DMatrix<f64>,
    phase_errors: &DMatrix<f64>,
    aod_scale: f64,
) -> CMat {
    let n = config.antennas_per_satellite;
    let coeffs = steering_phase_coefficients(n, config.antenna_spacing, config.wavelength);
    let mut est = h.clone();
    for u in 0..config.num_users {
        for k in 0..config.num_satellites {
            let eps_aod = aod_scale * aod_errors[(u, k)];
            let ph = expj_neg(phase_errors[(u, k)]);
            for (m, coef) in coeffs.iter().enumerate() {
                let idx = (u, k * n + m);
                est[idx] = ph * (h[idx] * expj_neg(coef * eps_aod));
            }
        }
    }
    est
}

/// Draw per-link AOD and phase errors and form the CSIT estimate.
pub fn apply_errors(
    config: &ScenarioConfig,
    chan: &ChannelRealization,
    err: &ErrorConfig,
    aod_rng: &mut impl Rng,
    phase_rng: &mut impl Rng,
) -> CsitEstimate {
    let (nu, nk) = (config.num_users, config.num_satellites);
    let sd = err.phase_error_variance.sqrt();
    let mut aod_errors = DMatrix::zeros(nu, nk);
    let mut phase_errors = DMatrix::zeros(nu, nk);
    for u in 0..nu {
        for k in 0..nk {
            aod_errors[(u, k)] = uniform_offset(aod_rng, err.aod_error_bound);
            let z: f64 = phase_rng.sample(StandardNormal);
            phase_errors[(u, k)] = sd * z;
        }
    }
    let h_est = estimate_with_draws(config, &chan.h, &aod_errors, &phase_errors, 1.0);
    CsitEstimate {
        h_est,
        aod_errors,
        phase_errors,
    }
}

/// The channel information one satellite (or the central unit) works with.
#[derive(Debug, Clone, PartialEq)]
pub struct CsitView {
    pub mode: InfoMode,
    pub satellite: usize,
    /// `U x N` for local views, `U x (K N)` otherwise.
    pub matrix: CMat,
}

impl CsitView {
    pub fn global(est: &CsitEstimate) -> Self {
        Self {
            mode: InfoMode::Global,
            satellite: 0,
            matrix: est.h_est.clone(),
        }
    }

    /// The viewing satellite's own `U x N` block.
    pub fn own_block(&self, antennas: usize) -> CMat {
        if self.mode == InfoMode::Local {
            self.matrix.clone()
        } else {
            self.matrix
                .columns(self.satellite * antennas, antennas)
                .into_owned()
        }
    }
}

/// Per-satellite views for the distributed information models.
pub fn local_views(
    config: &ScenarioConfig,
    est: &CsitEstimate,
    chan: &ChannelRealization,
    err: &ErrorConfig,
    mode: InfoMode,
) -> Result<Vec<CsitView>> {
    let n = config.antennas_per_satellite;
    let nk = config.num_satellites;
    match mode {
        InfoMode::Global => Err(Error::InvalidMode {
            mode: mode.to_string(),
            reason: "local views need local, limited1 or limited2",
        }),
        InfoMode::Local => Ok((0..nk)
            .map(|k| CsitView {
                mode,
                satellite: k,
                matrix: est.h_est.columns(k * n, n).into_owned(),
            })
            .collect()),
        InfoMode::Limited1 => Ok((0..nk)
            .map(|k| {
                let mut m = est.h_est.clone();
                m.columns_mut(k * n, n).copy_from(&chan.h.columns(k * n, n));
                CsitView {
                    mode,
                    satellite: k,
                    matrix: m,
                }
            })
            .collect()),
        InfoMode::Limited2 => {
            let degraded = estimate_with_draws(
                config,
                &chan.h,
                &est.aod_errors,
                &est.phase_errors,
                err.limited2_scale,
            );
            Ok((0..nk)
                .map(|k| {
                    let mut m = degraded.clone();
                    m.columns_mut(k * n, n).copy_from(&est.h_est.columns(k * n, n));
                    CsitView {
                        mode,
                        satellite: k,
                        matrix: m,
                    }
                })
                .collect())
        }
    }
}

/// Views for any information model; the global model yields a single view.
pub fn views_for(
    config: &ScenarioConfig,
    est: &CsitEstimate,
    chan: &ChannelRealization,
    err: &ErrorConfig,
    mode: InfoMode,
) -> Result<Vec<CsitView>> {
    match mode {
        InfoMode::Global => Ok(vec![CsitView::global(est)]),
        _ => local_views(config, est, chan, err, mode),
    }
}

/// Everything drawn for one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDraw {
    pub channel: ChannelRealization,
    pub estimate: CsitEstimate,
}

impl SimulationDraw {
    pub fn new(config: &ScenarioConfig, err: &ErrorConfig, rngs: &mut DrawRngs) -> Self {
        let channel = build_channel(config, rngs);
        let estimate = apply_errors(config, &channel, err, &mut rngs.aod, &mut rngs.phase);
        Self { channel, estimate }
    }
}

/// Least-squares slope of the linear phase ramp across one steering block,
/// returned as an AOD cosine. The result is unique up to multiples of
/// `lambda / d_n`, which change the steering vector only by a common phase.
pub fn estimate_aod_cosine(block: &[C64], spacing: f64, wavelength: f64) -> f64 {
    if block.len() < 2 {
        return 0.0;
    }
    let acc: C64 = block.windows(2).map(|w| w[1] * w[0].conj()).sum();
    acc.arg() / (2.0 * PI * spacing / wavelength)
}
