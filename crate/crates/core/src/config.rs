//! Scenario, error, learning and experiment configuration.
//!
//! Runtime structs carry SI units and linear gains. The on-disk TOML schema
//! (`*File` structs) suffixes every unit in the key name (`altitude_m`,
//! `sat_gain_dbi`, ...) and is converted exactly once when loaded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// How the distance-dependent phase rotation of a channel is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseModel {
    /// `(2 pi d / lambda) mod 2 pi`
    #[default]
    Distance,
    /// Uniform on `[0, 2 pi)`, drawn from the fading stream.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_satellites: usize,
    pub num_users: usize,
    pub antennas_per_satellite: usize,
    pub altitude: f64,
    pub wavelength: f64,
    pub antenna_spacing: f64,
    pub sat_gain: f64,
    pub user_gain: f64,
    pub noise_power: f64,
    pub power_budget: f64,
    pub inter_sat_distance: f64,
    pub inter_user_distance: f64,
    pub sat_roam: f64,
    pub user_roam: f64,
    pub fading_scale: f64,
    pub phase_model: PhaseModel,
    /// Evaluate the rate with squared magnitudes instead of the first-power form.
    pub sinr_squared: bool,
    /// Permit `K * N < U`.
    pub allow_underdetermined: bool,
}

impl Default for ScenarioConfig {
    /// Single satellite, 3 users, 16 antennas, 100 km user spacing.
    fn default() -> Self {
        let wavelength = SPEED_OF_LIGHT / 2e9;
        Self {
            num_satellites: 1,
            num_users: 3,
            antennas_per_satellite: 16,
            altitude: 600e3,
            wavelength,
            antenna_spacing: 1.5 * wavelength,
            sat_gain: db_to_linear(20.0),
            user_gain: db_to_linear(0.0),
            noise_power: 6e-13,
            power_budget: 100.0,
            inter_sat_distance: 100e3,
            inter_user_distance: 100e3,
            sat_roam: 0.0,
            user_roam: 50e3,
            fading_scale: 0.1,
            phase_model: PhaseModel::Distance,
            sinr_squared: false,
            allow_underdetermined: false,
        }
    }
}

impl ScenarioConfig {
    /// Default system parameters with the given constellation size and user spacing.
    /// User roam is half the mean user spacing, as in the reference scenarios.
    pub fn with_layout(
        num_satellites: usize,
        num_users: usize,
        antennas: usize,
        user_spacing: f64,
    ) -> Self {
        Self {
            num_satellites,
            num_users,
            antennas_per_satellite: antennas,
            inter_user_distance: user_spacing,
            user_roam: user_spacing / 2.0,
            ..Self::default()
        }
    }

    pub fn total_antennas(&self) -> usize {
        self.num_satellites * self.antennas_per_satellite
    }

    /// Regularization `sigma^2 U / P` shared by all MMSE-type precoders.
    pub fn noise_loading(&self) -> f64 {
        self.noise_power * self.num_users as f64 / self.power_budget
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_satellites == 0 || self.num_users == 0 || self.antennas_per_satellite == 0 {
            return bad("satellite, user and antenna counts must be positive");
        }
        if !self.allow_underdetermined && self.total_antennas() < self.num_users {
            return bad("total antennas K*N must be at least the number of users (set allow_underdetermined to override)");
        }
        let positive = [
            ("altitude", self.altitude),
            ("wavelength", self.wavelength),
            ("antenna spacing", self.antenna_spacing),
            ("satellite gain", self.sat_gain),
            ("user gain", self.user_gain),
            ("noise power", self.noise_power),
            ("power budget", self.power_budget),
            ("inter-satellite distance", self.inter_sat_distance),
            ("inter-user distance", self.inter_user_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        for (name, v) in [
            ("satellite roam", self.sat_roam),
            ("user roam", self.user_roam),
            ("fading scale", self.fading_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorConfig {
    /// Bound of the uniform additive error on the AOD cosine.
    #[serde(default)]
    pub aod_error_bound: f64,
    /// Variance of the per-link phase error, rad^2.
    #[serde(default)]
    pub phase_error_variance: f64,
    /// Multiplier on AOD error draws for other satellites' blocks in the Limited 2 view.
    #[serde(default = "default_limited2_scale")]
    pub limited2_scale: f64,
}

fn default_limited2_scale() -> f64 {
    2.0
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self {
            aod_error_bound: 0.0,
            phase_error_variance: 0.0,
            limited2_scale: 2.0,
        }
    }
}

impl ErrorConfig {
    pub fn aod(bound: f64) -> Self {
        Self {
            aod_error_bound: bound,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.aod_error_bound.is_finite() && self.aod_error_bound >= 0.0) {
            return Err(Error::Config("aod_error_bound must be >= 0".into()));
        }
        if !(self.phase_error_variance.is_finite() && self.phase_error_variance >= 0.0) {
            return Err(Error::Config("phase_error_variance must be >= 0".into()));
        }
        if !(self.limited2_scale.is_finite() && self.limited2_scale >= 1.0) {
            return Err(Error::Config("limited2_scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// Channel knowledge available to the precoding agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InfoMode {
    /// One central precoder with the full erroneous estimate.
    #[default]
    Global,
    /// Each satellite sees only its own block.
    Local,
    /// Own block perfect, other blocks erroneous.
    Limited1,
    /// Own block erroneous, other blocks with scaled AOD error.
    Limited2,
}

impl InfoMode {
    pub fn is_distributed(self) -> bool {
        self != InfoMode::Global
    }

    pub fn name(self) -> &'static str {
        match self {
            InfoMode::Global => "global",
            InfoMode::Local => "local",
            InfoMode::Limited1 => "limited1",
            InfoMode::Limited2 => "limited2",
        }
    }
}

impl std::fmt::Display for InfoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    PenalizedTanh,
    LeakyRelu,
}

/// What the actor network emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ActionHead {
    /// Real and imaginary parts of the precoding matrix (or slice).
    #[default]
    Direct,
    /// One positive scale per user on the robust SLNR column powers.
    SlnrPowerScale,
    /// A complex multiplier per entry of the robust SLNR precoding.
    SlnrEntryScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub training_interval: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub min_samples: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_scale: f64,
    pub actor_l2: f64,
    pub critic_l2: f64,
    pub hidden_layers: Vec<usize>,
    pub actor_activation: Activation,
    pub critic_activation: Activation,
    pub batch_norm: bool,
    pub input_standardization: bool,
    pub warmup_samples: usize,
    pub info_mode: InfoMode,
    pub action_head: ActionHead,
    /// Use the true AOD instead of the CSIT-derived estimate inside the SLNR baseline.
    pub slnr_true_aod: bool,
    pub smoothing_window: usize,
}

impl Default for TrainConfig {
    /// Full-size learning parameters.
    fn default() -> Self {
        Self {
            episodes: 13_000,
            steps_per_episode: 1_000,
            training_interval: 10,
            batch_size: 1024,
            buffer_capacity: 100_000,
            min_samples: 1_000,
            actor_lr: 4.2e-5,
            critic_lr: 8.8e-6,
            entropy_scale: 1.0,
            actor_l2: 0.01,
            critic_l2: 0.01,
            hidden_layers: vec![512; 4],
            actor_activation: Activation::PenalizedTanh,
            critic_activation: Activation::LeakyRelu,
            batch_norm: true,
            input_standardization: true,
            warmup_samples: 100,
            info_mode: InfoMode::Global,
            action_head: ActionHead::Direct,
            slnr_true_aod: false,
            smoothing_window: 1_000,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings: small networks, a couple of hundred episodes.
    ///
    /// With only 20k steps the update interval drops to 1. The entropy
    /// temperature is far lower than the full-size one; at `e^-4` and above
    /// the spread runs away before the critic has learned anything.
    pub fn toy() -> Self {
        Self {
            episodes: 200,
            steps_per_episode: 100,
            training_interval: 1,
            batch_size: 256,
            buffer_capacity: 20_000,
            actor_lr: 2e-3,
            critic_lr: 2e-3,
            entropy_scale: -6.0,
            actor_l2: 1e-3,
            critic_l2: 1e-3,
            hidden_layers: vec![64, 64],
            actor_activation: Activation::LeakyRelu,
            smoothing_window: 20,
            ..Self::default()
        }
    }

    /// Strip the stabilizing additions: no input standardization, no batch
    /// normalization, no weight penalty and an update after every step.
    pub fn vanilla(mut self) -> Self {
        self.input_standardization = false;
        self.batch_norm = false;
        self.actor_l2 = 0.0;
        self.critic_l2 = 0.0;
        self.training_interval = 1;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode
    }

    /// Full-size runs take days on a CPU.
    pub fn is_long_running(&self) -> bool {
        self.total_steps() >= 1_000_000
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("episodes", self.episodes),
            ("steps_per_episode", self.steps_per_episode),
            ("training_interval", self.training_interval),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("min_samples", self.min_samples),
            ("warmup_samples", self.warmup_samples),
            ("smoothing_window", self.smoothing_window),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.min_samples > self.buffer_capacity {
            return Err(Error::Config("min_samples exceeds buffer_capacity".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden_layers needs at least one positive width".into()));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("actor_l2", self.actor_l2),
            ("critic_l2", self.critic_l2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.entropy_scale.is_finite() {
            return Err(Error::Config("entropy_scale must be finite".into()));
        }
        if self.action_head != ActionHead::Direct && self.info_mode != InfoMode::Global {
            return Err(Error::Config("SLNR adaptation heads require global information".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    #[default]
    AodErrorBound,
    PhaseErrorVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::AodErrorBound,
            grid: vec![0.0, 0.025, 0.05, 0.1, 0.15, 0.25, 0.35, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario_id: String,
    pub scenario: ScenarioConfig,
    pub error: ErrorConfig,
    pub train: TrainConfig,
    pub precoders: Vec<String>,
    pub sweep: SweepConfig,
    pub n_eval_draws: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Directory of a trained agent, used by the `sac` precoder.
    pub sac_model: Option<PathBuf>,
    /// Directory of a trained SLNR-adapting agent, used by `sac-hybrid`.
    pub hybrid_model: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario_id: "1sat-100km".into(),
            scenario: ScenarioConfig::default(),
            error: ErrorConfig::default(),
            train: TrainConfig::default(),
            precoders: vec!["mmse".into(), "slnr".into()],
            sweep: SweepConfig::default(),
            n_eval_draws: 5000,
            seed: 0,
            out_dir: PathBuf::from("out"),
            sac_model: None,
            hybrid_model: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.error.validate()?;
        self.train.validate()?;
        if self.n_eval_draws == 0 {
            return Err(Error::Config("n_eval_draws must be >= 1".into()));
        }
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.sweep.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep grid must be strictly ascending".into()));
        }
        if self.sweep.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("sweep grid values must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ExperimentFile =
            toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = file.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Resolved configuration in file form, written next to every output.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ExperimentFile::from(self)).expect("config serializes")
    }
}

// ---- file schema -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub num_satellites: usize,
    pub num_users: usize,
    pub antennas_per_satellite: usize,
    pub altitude_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wavelength_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antenna_spacing_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antenna_spacing_wavelengths: Option<f64>,
    pub sat_gain_dbi: f64,
    pub user_gain_dbi: f64,
    pub noise_power_w: f64,
    pub power_budget_w: f64,
    pub inter_sat_distance_m: f64,
    pub inter_user_distance_m: f64,
    pub sat_roam_m: f64,
    pub user_roam_m: f64,
    pub fading_scale: f64,
    pub phase_model: PhaseModel,
    pub sinr_squared: bool,
    pub allow_underdetermined: bool,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        let mut f = ScenarioFile::from(&ScenarioConfig::default());
        // resolve() falls back to 2 GHz and 1.5 wavelengths
        f.wavelength_m = None;
        f.antenna_spacing_m = None;
        f
    }
}

impl From<&ScenarioConfig> for ScenarioFile {
    fn from(c: &ScenarioConfig) -> Self {
        Self {
            num_satellites: c.num_satellites,
            num_users: c.num_users,
            antennas_per_satellite: c.antennas_per_satellite,
            altitude_m: c.altitude,
            frequency_hz: None,
            wavelength_m: Some(c.wavelength),
            antenna_spacing_m: Some(c.antenna_spacing),
            antenna_spacing_wavelengths: None,
            sat_gain_dbi: linear_to_db(c.sat_gain),
            user_gain_dbi: linear_to_db(c.user_gain),
            noise_power_w: c.noise_power,
            power_budget_w: c.power_budget,
            inter_sat_distance_m: c.inter_sat_distance,
            inter_user_distance_m: c.inter_user_distance,
            sat_roam_m: c.sat_roam,
            user_roam_m: c.user_roam,
            fading_scale: c.fading_scale,
            phase_model: c.phase_model,
            sinr_squared: c.sinr_squared,
            allow_underdetermined: c.allow_underdetermined,
        }
    }
}

impl ScenarioFile {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let wavelength = match (self.wavelength_m, self.frequency_hz) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either wavelength_m or frequency_hz, not both".into()))
            }
            (Some(w), None) => w,
            (None, Some(f)) if f > 0.0 => SPEED_OF_LIGHT / f,
            (None, Some(_)) => return Err(Error::Config("frequency_hz must be positive".into())),
            (None, None) => SPEED_OF_LIGHT / 2e9,
        };
        let antenna_spacing = match (self.antenna_spacing_m, self.antenna_spacing_wavelengths) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either antenna_spacing_m or antenna_spacing_wavelengths, not both".into(),
                ))
            }
            (Some(d), None) => d,
            (None, Some(r)) => r * wavelength,
            (None, None) => 1.5 * wavelength,
        };
        let cfg = ScenarioConfig {
            num_satellites: self.num_satellites,
            num_users: self.num_users,
            antennas_per_satellite: self.antennas_per_satellite,
            altitude: self.altitude_m,
            wavelength,
            antenna_spacing,
            sat_gain: db_to_linear(self.sat_gain_dbi),
            user_gain: db_to_linear(self.user_gain_dbi),
            noise_power: self.noise_power_w,
            power_budget: self.power_budget_w,
            inter_sat_distance: self.inter_sat_distance_m,
            inter_user_distance: self.inter_user_distance_m,
            sat_roam: self.sat_roam_m,
            user_roam: self.user_roam_m,
            fading_scale: self.fading_scale,
            phase_model: self.phase_model,
            sinr_squared: self.sinr_squared,
            allow_underdetermined: self.allow_underdetermined,
        };
        cfg.validated()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default = "default_scenario_id")]
    pub scenario_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_draws")]
    pub n_eval_draws: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_precoders")]
    pub precoders: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sac_model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid_model: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioFile,
    #[serde(default)]
    pub error: ErrorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_scenario_id() -> String {
    ExperimentConfig::default().scenario_id
}
fn default_draws() -> usize {
    5000
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_precoders() -> Vec<String> {
    ExperimentConfig::default().precoders
}

impl ExperimentFile {
    pub fn resolve(self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            scenario_id: self.scenario_id,
            scenario: self.scenario.resolve()?,
            error: self.error,
            train: self.train,
            precoders: self.precoders,
            sweep: self.sweep,
            n_eval_draws: self.n_eval_draws,
            seed: self.seed,
            out_dir: self.out_dir,
            sac_model: self.sac_model,
            hybrid_model: self.hybrid_model,
        })
    }
}

impl From<&ExperimentConfig> for ExperimentFile {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            scenario_id: c.scenario_id.clone(),
            seed: c.seed,
            n_eval_draws: c.n_eval_draws,
            out_dir: c.out_dir.clone(),
            precoders: c.precoders.clone(),
            sac_model: c.sac_model.clone(),
            hybrid_model: c.hybrid_model.clone(),
            scenario: ScenarioFile::from(&c.scenario),
            error: c.error,
            train: c.train.clone(),
            sweep: c.sweep.clone(),
        }
    }
}
