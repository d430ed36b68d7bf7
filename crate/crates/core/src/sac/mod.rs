//! Soft Actor-Critic adapted to one-step precoding: the critics regress the
//! immediate sum rate, the actor is a diagonal Gaussian without squashing,
//! and distributed information models run one agent per satellite.

mod buffer;
mod losses;
mod transform;

pub use buffer::{concat_columns, Batch, Experience, ReplayBuffer};
pub use losses::{
    action_from_noise, actor_loss, critic_loss, gaussian_logprob, sample_action, standard_normal_matrix, ActorLoss,
    ActorOutput, CriticLoss, SampleMode,
};
pub use transform::{
    action_to_matrix, agent_layout, input_transform, matrix_to_action, output_transform, output_transform_slice,
    raw_state, warmup_standardizer, Standardizer,
};

use nalgebra::DMatrix;
use rand::Rng;

use crate::channel::{views_for, SimulationDraw};
use crate::config::{ActionHead, ErrorConfig, InfoMode, ScenarioConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::metrics::{normalize_power, scenario_rate, PrecodingMatrix};
use crate::nn::{adam_step, init_network, AdamState, Checkpoint, NetworkParameters, NetworkSpec};
use crate::precoders::{robust_slnr_precoder, robust_slnr_precoder_true_aod};
use crate::rng::{SeedTree, ACTION_SAMPLING, BUFFER_SAMPLING, NETWORK_INIT, WARMUP};

/// Initial log-spread of the SLNR adaptation heads, so early exploration
/// stays close to the unadapted SLNR precoding.
pub const HYBRID_LOG_SPREAD_INIT: f64 = -4.6;

const TRAIN_DRAWS: &str = "train-draws";

/// Action width of one agent.
pub fn action_dim(config: &ScenarioConfig, mode: InfoMode, head: ActionHead) -> usize {
    let u = config.num_users;
    match head {
        ActionHead::Direct => match mode {
            InfoMode::Global => 2 * u * config.total_antennas(),
            _ => 2 * u * config.antennas_per_satellite,
        },
        ActionHead::SlnrPowerScale => u,
        ActionHead::SlnrEntryScale => 2 * u * config.antennas_per_satellite,
    }
}

pub fn state_dim(config: &ScenarioConfig, mode: InfoMode) -> usize {
    2 * config.num_users * agent_layout(config, mode).1
}

pub fn actor_spec(config: &ScenarioConfig, train: &TrainConfig) -> Result<NetworkSpec> {
    let mut sizes = vec![state_dim(config, train.info_mode)];
    sizes.extend(&train.hidden_layers);
    sizes.push(2 * action_dim(config, train.info_mode, train.action_head));
    NetworkSpec::new(sizes, train.actor_activation, train.batch_norm)
}

pub fn critic_spec(config: &ScenarioConfig, train: &TrainConfig) -> Result<NetworkSpec> {
    let mut sizes = vec![state_dim(config, train.info_mode) + action_dim(config, train.info_mode, train.action_head)];
    sizes.extend(&train.hidden_layers);
    sizes.push(1);
    NetworkSpec::new(sizes, train.critic_activation, train.batch_norm)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Raw actor output to the per-user scale factor; zero maps to one.
pub fn power_scale(raw: f64) -> f64 {
    softplus(raw + (std::f64::consts::E - 1.0).ln())
}

/// Multiply column `u` of `base` by `scales[u]` and renormalize.
pub fn scale_columns(base: &PrecodingMatrix, scales: &[f64], config: &ScenarioConfig) -> Result<PrecodingMatrix> {
    let mut w = base.matrix().clone();
    if scales.len() != w.ncols() {
        return Err(Error::dimension("power scales", w.ncols(), scales.len()));
    }
    for (u, s) in scales.iter().enumerate() {
        w.column_mut(u).scale_mut(*s);
    }
    Ok(normalize_power(&w, config.power_budget, config.num_satellites))
}

/// Adapt a robust SLNR precoding with an adaptation-head action.
pub fn hybrid_precoding(
    base: &PrecodingMatrix,
    action: &[f64],
    head: ActionHead,
    config: &ScenarioConfig,
) -> Result<PrecodingMatrix> {
    match head {
        ActionHead::Direct => Err(Error::Config("direct actions do not adapt a base precoding".into())),
        ActionHead::SlnrPowerScale => {
            let scales: Vec<f64> = action.iter().map(|&r| power_scale(r)).collect();
            scale_columns(base, &scales, config)
        }
        ActionHead::SlnrEntryScale => {
            let n = config.antennas_per_satellite;
            let delta = action_to_matrix(action, config.num_users, n)?;
            let w = base.matrix().zip_map(&delta, |b, d| b * (C64::new(1.0, 0.0) + d));
            Ok(normalize_power(&w, config.power_budget, config.num_satellites))
        }
    }
}

/// Per-agent output of one policy evaluation.
#[derive(Debug, Clone)]
pub struct Acted {
    pub precoding: PrecodingMatrix,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub mean_spread: f64,
}

/// Run actors on a draw and turn their actions into a precoding.
#[allow(clippy::too_many_arguments)]
fn act_with(
    scenario: &ScenarioConfig,
    train: &TrainConfig,
    actors: &[&NetworkParameters],
    standardizers: &[&Standardizer],
    draw: &SimulationDraw,
    err: &ErrorConfig,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Acted> {
    let views = views_for(scenario, &draw.estimate, &draw.channel, err, train.info_mode)?;
    if views.len() != actors.len() {
        return Err(Error::dimension("agents", views.len(), actors.len()));
    }
    let mut states = Vec::with_capacity(views.len());
    let mut actions = Vec::with_capacity(views.len());
    let mut spread_sum = 0.0;
    let mut spread_n = 0usize;
    for ((view, actor), st) in views.iter().zip(actors).zip(standardizers) {
        let s = input_transform(view, st)?;
        let out = actor.predict(&DMatrix::from_row_slice(1, s.len(), &s))?;
        let out = ActorOutput::from_row(out.as_slice())?;
        spread_sum += out.log_spread.iter().map(|v| v.exp()).sum::<f64>();
        spread_n += out.dim();
        let (a, _) = sample_action(&out, mode, rng);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actor output".into()));
        }
        states.push(s);
        actions.push(a);
    }
    let precoding = match (train.action_head, train.info_mode) {
        (ActionHead::Direct, InfoMode::Global) => output_transform(&actions[0], scenario)?,
        (ActionHead::Direct, _) => {
            let slices = actions
                .iter()
                .map(|a| output_transform_slice(a, scenario))
                .collect::<Result<Vec<_>>>()?;
            PrecodingMatrix::stack(&slices)?
        }
        (head, _) => {
            let bound = err.aod_error_bound;
            let base = if train.slnr_true_aod {
                let cos: Vec<f64> = draw.channel.geometry.aod_cosines.column(0).iter().copied().collect();
                robust_slnr_precoder_true_aod(&draw.estimate.h_est, &cos, bound, scenario)?
            } else {
                robust_slnr_precoder(&draw.estimate.h_est, bound, scenario)?
            };
            hybrid_precoding(&base, &actions[0], head, scenario)?
        }
    };
    Ok(Acted {
        precoding,
        states,
        actions,
        mean_spread: spread_sum / spread_n.max(1) as f64,
    })
}

/// The deployable part of a trained system: actors and input scaling.
#[derive(Debug, Clone)]
pub struct Policy {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub actors: Vec<NetworkParameters>,
    pub standardizers: Vec<Standardizer>,
}

impl Policy {
    /// Deterministic (mean-action) precoding.
    pub fn precode(&self, draw: &SimulationDraw, err: &ErrorConfig) -> Result<PrecodingMatrix> {
        let actors: Vec<&NetworkParameters> = self.actors.iter().collect();
        let stds: Vec<&Standardizer> = self.standardizers.iter().collect();
        // infer mode draws nothing from the stream
        let mut rng = SeedTree::new(0).stream(ACTION_SAMPLING, 0);
        Ok(act_with(&self.scenario, &self.train, &actors, &stds, draw, err, SampleMode::Infer, &mut rng)?.precoding)
    }

    /// Load actors and standardizers written by [`Learner::checkpoints`].
    pub fn from_checkpoints(
        scenario: &ScenarioConfig,
        train: &TrainConfig,
        agents: &[Checkpoint],
        standardizers: &[Checkpoint],
    ) -> Result<Self> {
        let (count, _) = agent_layout(scenario, train.info_mode);
        if agents.len() != count || standardizers.len() != count {
            return Err(Error::dimension("policy checkpoints", count, agents.len().min(standardizers.len())));
        }
        let spec = actor_spec(scenario, train)?;
        let mut actors = Vec::with_capacity(count);
        let mut stds = Vec::with_capacity(count);
        for (a, s) in agents.iter().zip(standardizers) {
            actors.push(a.network("actor", &spec)?.clone());
            let st = Standardizer::from_vector(s.vector("standardizer")?)?;
            if 2 * st.entries() != spec.input_size() {
                return Err(Error::dimension("standardizer", spec.input_size(), 2 * st.entries()));
            }
            stds.push(st);
        }
        Ok(Self {
            scenario: scenario.clone(),
            train: train.clone(),
            actors,
            standardizers: stds,
        })
    }
}

/// One agent's networks, optimizers, buffer and input scaling.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: NetworkParameters,
    pub critics: [NetworkParameters; 2],
    pub actor_opt: AdamState,
    pub critic_opts: [AdamState; 2],
    pub buffer: ReplayBuffer,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_losses: [f64; 2],
    pub actor_loss: f64,
    pub mean_spread: f64,
}

impl Agent {
    /// Both critics on one batch, then the actor against the updated critics.
    pub fn training_step(&mut self, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<TrainStats> {
        let batch = self.buffer.sample(cfg.batch_size, rng)?;
        let mut critic_losses = [0.0; 2];
        for c in 0..2 {
            let out = critic_loss(&self.critics[c], &batch, cfg.critic_l2)?;
            self.critics[c].update_running_stats(&out.trace);
            adam_step(&mut self.critics[c], &out.grads, &mut self.critic_opts[c])?;
            critic_losses[c] = out.loss;
        }
        let dim = self.actor.spec().output_size() / 2;
        let noise = standard_normal_matrix(batch.len(), dim, rng);
        let out = actor_loss(
            &self.actor,
            [&self.critics[0], &self.critics[1]],
            &batch.states,
            &noise,
            cfg.entropy_scale,
            cfg.actor_l2,
        )?;
        self.actor.update_running_stats(&out.trace);
        adam_step(&mut self.actor, &out.grads, &mut self.actor_opt)?;
        Ok(TrainStats {
            critic_losses,
            actor_loss: out.loss,
            mean_spread: out.mean_spread,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub mean_spread: f64,
    /// One entry per agent when this step triggered training.
    pub train: Option<Vec<TrainStats>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_losses: [f64; 2],
    pub mean_spread: f64,
    pub updates: usize,
}

/// Full training state; every random draw is indexed by step or update
/// number, so restoring the counters resumes the exact same trajectory.
#[derive(Debug, Clone)]
pub struct Learner {
    pub scenario: ScenarioConfig,
    pub error: ErrorConfig,
    pub train: TrainConfig,
    pub seeds: SeedTree,
    pub agents: Vec<Agent>,
    pub step: u64,
    pub updates: u64,
}

impl Learner {
    pub fn new(scenario: &ScenarioConfig, error: &ErrorConfig, train: &TrainConfig, seed: u64) -> Result<Self> {
        scenario.validate()?;
        error.validate()?;
        train.validate()?;
        if train.action_head != ActionHead::Direct && scenario.num_satellites != 1 {
            return Err(Error::Config("SLNR adaptation heads need a single satellite".into()));
        }
        let seeds = SeedTree::new(seed);
        let (count, _) = agent_layout(scenario, train.info_mode);
        let standardizers = if train.input_standardization {
            warmup_standardizer(scenario, error, train.info_mode, train.warmup_samples, &seeds.child(WARMUP, 0))?
        } else {
            vec![Standardizer::identity(state_dim(scenario, train.info_mode) / 2); count]
        };
        let aspec = actor_spec(scenario, train)?;
        let cspec = critic_spec(scenario, train)?;
        let adim = action_dim(scenario, train.info_mode, train.action_head);
        let mut agents = Vec::with_capacity(count);
        for (k, standardizer) in standardizers.into_iter().enumerate() {
            let k = k as u64;
            let mut actor = init_network(&aspec, &mut seeds.stream(NETWORK_INIT, 3 * k))?;
            if train.action_head != ActionHead::Direct {
                actor.zero_output_layer();
                let last = actor.dense().len() - 1;
                let out = actor.dense_mut(last);
                for i in adim..2 * adim {
                    out.bias[i] = HYBRID_LOG_SPREAD_INIT;
                }
            }
            let critics = [
                init_network(&cspec, &mut seeds.stream(NETWORK_INIT, 3 * k + 1))?,
                init_network(&cspec, &mut seeds.stream(NETWORK_INIT, 3 * k + 2))?,
            ];
            agents.push(Agent {
                actor_opt: AdamState::new(&actor, train.actor_lr),
                critic_opts: [
                    AdamState::new(&critics[0], train.critic_lr),
                    AdamState::new(&critics[1], train.critic_lr),
                ],
                actor,
                critics,
                buffer: ReplayBuffer::new(train.buffer_capacity, train.min_samples, aspec.input_size(), adim)?,
                standardizer,
            });
        }
        Ok(Self {
            scenario: scenario.clone(),
            error: *error,
            train: train.clone(),
            seeds,
            agents,
            step: 0,
            updates: 0,
        })
    }

    /// The draw used by training step `index`.
    pub fn training_draw(&self, index: u64) -> SimulationDraw {
        SimulationDraw::new(&self.scenario, &self.error, &mut self.seeds.child(TRAIN_DRAWS, 0).draw(index))
    }

    pub fn act(&self, draw: &SimulationDraw, err: &ErrorConfig, mode: SampleMode, rng: &mut impl Rng) -> Result<Acted> {
        let actors: Vec<&NetworkParameters> = self.agents.iter().map(|a| &a.actor).collect();
        let stds: Vec<&Standardizer> = self.agents.iter().map(|a| &a.standardizer).collect();
        act_with(&self.scenario, &self.train, &actors, &stds, draw, err, mode, rng)
    }

    /// Deterministic precoding with the current actors.
    pub fn precode(&self, draw: &SimulationDraw, err: &ErrorConfig) -> Result<PrecodingMatrix> {
        let mut rng = self.seeds.stream(ACTION_SAMPLING, 0);
        Ok(self.act(draw, err, SampleMode::Infer, &mut rng)?.precoding)
    }

    pub fn policy(&self) -> Policy {
        Policy {
            scenario: self.scenario.clone(),
            train: self.train.clone(),
            actors: self.agents.iter().map(|a| a.actor.clone()).collect(),
            standardizers: self.agents.iter().map(|a| a.standardizer.clone()).collect(),
        }
    }

    /// Redraw, act with exploration, reward every agent with the shared sum
    /// rate and train every `T_u` steps once all buffers are warm.
    pub fn run_inference_step(&mut self) -> Result<StepOutcome> {
        let draw = self.training_draw(self.step);
        let mut rng = self.seeds.stream(ACTION_SAMPLING, self.step);
        let acted = self.act(&draw, &self.error, SampleMode::Train, &mut rng)?;
        let reward = scenario_rate(&self.scenario, &draw.channel.h, &acted.precoding)?;
        for ((agent, state), action) in self.agents.iter_mut().zip(acted.states).zip(acted.actions) {
            agent.buffer.push(Experience { state, action, reward })?;
        }
        self.step += 1;
        let due = self.step.is_multiple_of(self.train.training_interval as u64);
        let train = if due && self.agents.iter().all(|a| a.buffer.ready()) {
            Some(self.training_step()?)
        } else {
            None
        };
        Ok(StepOutcome {
            reward,
            mean_spread: acted.mean_spread,
            train,
        })
    }

    /// One update of every agent, each from its own buffer.
    pub fn training_step(&mut self) -> Result<Vec<TrainStats>> {
        let mut rng = self.seeds.stream(BUFFER_SAMPLING, self.updates);
        let cfg = self.train.clone();
        let stats = self
            .agents
            .iter_mut()
            .map(|a| a.training_step(&cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        self.updates += 1;
        Ok(stats)
    }

    pub fn episode(&self) -> usize {
        (self.step / self.train.steps_per_episode as u64) as usize
    }

    pub fn run_episode(&mut self) -> Result<EpisodeStats> {
        let episode = self.episode();
        let steps = self.train.steps_per_episode;
        let (mut reward, mut spread) = (0.0, 0.0);
        let (mut actor, mut critic, mut n_updates) = (0.0, [0.0; 2], 0usize);
        for _ in 0..steps {
            let out = self.run_inference_step()?;
            reward += out.reward;
            spread += out.mean_spread;
            for s in out.train.iter().flatten() {
                actor += s.actor_loss;
                critic[0] += s.critic_losses[0];
                critic[1] += s.critic_losses[1];
                n_updates += 1;
            }
        }
        let per_update = |v: f64| if n_updates > 0 { v / n_updates as f64 } else { f64::NAN };
        Ok(EpisodeStats {
            episode,
            mean_reward: reward / steps as f64,
            actor_loss: per_update(actor),
            critic_losses: [per_update(critic[0]), per_update(critic[1])],
            mean_spread: spread / steps as f64,
            updates: n_updates,
        })
    }

    /// `(agent, standardizer)` checkpoints, one pair per agent.
    pub fn checkpoints(&self) -> Vec<(Checkpoint, Checkpoint)> {
        self.agents
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let mut ck = Checkpoint::new();
                ck.counters.insert("agent".into(), vec![k as u64]);
                ck.networks.insert("actor".into(), a.actor.clone());
                ck.networks.insert("critic1".into(), a.critics[0].clone());
                ck.networks.insert("critic2".into(), a.critics[1].clone());
                ck.optimizers.insert("actor".into(), a.actor_opt.clone());
                ck.optimizers.insert("critic1".into(), a.critic_opts[0].clone());
                ck.optimizers.insert("critic2".into(), a.critic_opts[1].clone());
                let (header, data) = a.buffer.to_parts();
                ck.counters.insert("buffer".into(), header);
                ck.vectors.insert("buffer".into(), data);
                ck.counters.insert("progress".into(), vec![self.step, self.updates, self.seeds.master()]);
                ck.counters.insert("layout".into(), layout_record(&self.scenario, &self.train));
                let mut st = Checkpoint::new();
                st.vectors.insert("standardizer".into(), a.standardizer.to_vector());
                st.counters.insert("layout".into(), layout_record(&self.scenario, &self.train));
                (ck, st)
            })
            .collect()
    }

    /// Rebuild a learner mid-training from [`Learner::checkpoints`] output.
    pub fn restore(
        scenario: &ScenarioConfig,
        error: &ErrorConfig,
        train: &TrainConfig,
        parts: &[(Checkpoint, Checkpoint)],
    ) -> Result<Self> {
        let aspec = actor_spec(scenario, train)?;
        let cspec = critic_spec(scenario, train)?;
        let (count, _) = agent_layout(scenario, train.info_mode);
        if parts.len() != count {
            return Err(Error::dimension("agent checkpoints", count, parts.len()));
        }
        let progress = parts[0].0.counter("progress")?;
        let [step, updates, master] = progress[..] else {
            return Err(Error::Config("corrupt progress record".into()));
        };
        let mut agents = Vec::with_capacity(count);
        for (ck, st) in parts {
            let opt = |name: &str| {
                ck.optimizers
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::from(crate::nn::CheckpointError::MissingEntry(name.into())))
            };
            agents.push(Agent {
                actor: ck.network("actor", &aspec)?.clone(),
                critics: [ck.network("critic1", &cspec)?.clone(), ck.network("critic2", &cspec)?.clone()],
                actor_opt: opt("actor")?,
                critic_opts: [opt("critic1")?, opt("critic2")?],
                buffer: ReplayBuffer::from_parts(ck.counter("buffer")?, ck.vector("buffer")?)?,
                standardizer: Standardizer::from_vector(st.vector("standardizer")?)?,
            });
        }
        Ok(Self {
            scenario: scenario.clone(),
            error: *error,
            train: train.clone(),
            seeds: SeedTree::new(master),
            agents,
            step,
            updates,
        })
    }
}

/// `[K, U, N, info mode, action head]`, checked by the weight report.
pub fn layout_record(scenario: &ScenarioConfig, train: &TrainConfig) -> Vec<u64> {
    let mode = match train.info_mode {
        InfoMode::Global => 0,
        InfoMode::Local => 1,
        InfoMode::Limited1 => 2,
        InfoMode::Limited2 => 3,
    };
    let head = match train.action_head {
        ActionHead::Direct => 0,
        ActionHead::SlnrPowerScale => 1,
        ActionHead::SlnrEntryScale => 2,
    };
    vec![
        scenario.num_satellites as u64,
        scenario.num_users as u64,
        scenario.antennas_per_satellite as u64,
        mode,
        head,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_power_scale_is_one() {
        assert!((power_scale(0.0) - 1.0).abs() < 1e-15);
        assert!(power_scale(-50.0) > 0.0);
    }

    #[test]
    fn table_four_network_sizes() {
        let cfg = ScenarioConfig::default();
        let train = TrainConfig::default();
        let (u, kn) = (cfg.num_users, cfg.total_antennas());
        let a = actor_spec(&cfg, &train).unwrap();
        let c = critic_spec(&cfg, &train).unwrap();
        assert_eq!(a.layer_sizes, vec![2 * u * kn, 512, 512, 512, 512, 4 * u * kn]);
        assert_eq!(c.layer_sizes, vec![4 * u * kn, 512, 512, 512, 512, 1]);
    }
}
