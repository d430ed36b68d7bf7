//! Experiment orchestration behind the command line: training runs, Monte
//! Carlo sweeps, beam patterns, timing and first-layer weight reports.

pub mod plot;

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::SimulationDraw;
use crate::config::{ErrorConfig, ExperimentConfig, InfoMode, ScenarioConfig, SweepParameter};
use crate::error::{Error, Result};
use crate::metrics::{beam_pattern, evaluate_precoders, linspace, scenario_rate, BeamPattern, PrecodingMatrix};
use crate::nn::Checkpoint;
use crate::precoders::{mmse_precoder, Baseline, PrecoderName};
use crate::rng::SeedTree;
use crate::sac::{agent_layout, EpisodeStats, Learner, Policy};

use plot::{line_chart, Series};

pub const CONFIG_ECHO: &str = "config.toml";
pub const TRAINING_CSV: &str = "training.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const BENCH_CSV: &str = "bench.csv";

pub fn agent_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("agent-{k}.ckpt"))
}

pub fn standardizer_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("standardizer-{k}.ckpt"))
}

/// Seed tree of the evaluation draws; shared by every precoder and grid point.
pub fn eval_seeds(seed: u64) -> SeedTree {
    SeedTree::new(seed).child("eval", 0)
}

fn write_echo(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml_string())?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingArtifact(path.into()),
        _ => e.into(),
    })?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

// ---- precoder resolution ---------------------------------------------------

/// A named precoder ready to be bound to an error setting.
#[derive(Debug, Clone)]
pub enum Precoder {
    Analytical(PrecoderName),
    Learned(PrecoderName, Box<Policy>),
}

impl Precoder {
    /// Analytical names resolve directly; learned ones load their model directory.
    pub fn resolve(name: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let pn: PrecoderName = name.parse()?;
        match pn {
            PrecoderName::Sac | PrecoderName::SacHybrid => {
                let dir = if pn == PrecoderName::Sac { &cfg.sac_model } else { &cfg.hybrid_model };
                let dir = dir.as_ref().ok_or_else(|| {
                    Error::Config(format!("precoder {pn} needs a model directory in the config"))
                })?;
                Ok(Self::Learned(pn, Box::new(load_policy(dir, &cfg.scenario)?)))
            }
            _ => Ok(Self::Analytical(pn)),
        }
    }

    pub fn name(&self) -> PrecoderName {
        match self {
            Self::Analytical(n) | Self::Learned(n, _) => *n,
        }
    }

    pub fn bind<'a>(&'a self, cfg: &ExperimentConfig, err: &ErrorConfig) -> Result<BoundPrecoder<'a>> {
        Ok(match self {
            Self::Analytical(n) => BoundPrecoder::Analytical(
                Baseline::new(*n, &cfg.scenario, err)?.with_true_aod(cfg.train.slnr_true_aod),
            ),
            Self::Learned(_, p) => BoundPrecoder::Learned(p, *err),
        })
    }
}

pub enum BoundPrecoder<'a> {
    Analytical(Baseline),
    Learned(&'a Policy, ErrorConfig),
}

impl BoundPrecoder<'_> {
    pub fn precode(&self, draw: &SimulationDraw) -> Result<PrecodingMatrix> {
        match self {
            Self::Analytical(b) => b.precode(draw),
            Self::Learned(p, err) => p.precode(draw, err),
        }
    }
}

/// Load the actors of a training output directory.
pub fn load_policy(dir: &Path, scenario: &ScenarioConfig) -> Result<Policy> {
    let echo = dir.join(CONFIG_ECHO);
    if !echo.exists() {
        return Err(Error::MissingArtifact(echo));
    }
    let trained = ExperimentConfig::load(&echo)?;
    let (count, _) = agent_layout(scenario, trained.train.info_mode);
    let mut agents = Vec::with_capacity(count);
    let mut stds = Vec::with_capacity(count);
    for k in 0..count {
        agents.push(Checkpoint::read(&agent_file(dir, k))?);
        stds.push(Checkpoint::read(&standardizer_file(dir, k))?);
    }
    Policy::from_checkpoints(scenario, &trained.train, &agents, &stds)
}

pub fn resolve_all(names: &[String], cfg: &ExperimentConfig) -> Result<Vec<Precoder>> {
    if names.is_empty() {
        return Err(Error::Config("no precoders requested".into()));
    }
    names.iter().map(|n| Precoder::resolve(n.trim(), cfg)).collect()
}

// ---- train -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainOptions {
    /// Continue from the checkpoints in the output directory if present.
    pub resume: bool,
    /// Stop after this many episodes in this invocation.
    pub max_episodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub smoothed_reward: f64,
    /// Centralized MMSE on the episode's draws, for reference.
    pub mmse_reward: f64,
    pub actor_loss: f64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub mean_spread: f64,
    pub updates: usize,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub rows: Vec<TrainRow>,
    pub long_running: bool,
    pub resumed_at: Option<usize>,
    pub finished: bool,
}

fn smoothed(rows: &[TrainRow], current: f64, window: usize) -> f64 {
    let take = window.saturating_sub(1).min(rows.len());
    let sum: f64 = rows[rows.len() - take..].iter().map(|r| r.mean_reward).sum::<f64>() + current;
    sum / (take + 1) as f64
}

fn save_learner(learner: &Learner, dir: &Path) -> Result<()> {
    for (k, (agent, st)) in learner.checkpoints().into_iter().enumerate() {
        st.write(&standardizer_file(dir, k))?;
        agent.write(&agent_file(dir, k))?;
    }
    Ok(())
}

fn restore_learner(cfg: &ExperimentConfig, dir: &Path) -> Result<Learner> {
    let (count, _) = agent_layout(&cfg.scenario, cfg.train.info_mode);
    let parts = (0..count)
        .map(|k| Ok((Checkpoint::read(&agent_file(dir, k))?, Checkpoint::read(&standardizer_file(dir, k))?)))
        .collect::<Result<Vec<_>>>()?;
    let learner = Learner::restore(&cfg.scenario, &cfg.error, &cfg.train, &parts)?;
    if learner.seeds.master() != cfg.seed {
        return Err(Error::Config(format!(
            "checkpoint was trained with seed {}, config asks for {}",
            learner.seeds.master(),
            cfg.seed
        )));
    }
    Ok(learner)
}

/// Warm-up, then episodes of inference with periodic training. Writes the
/// config echo, one CSV row and one checkpoint set per episode.
pub fn cmd_train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    write_echo(cfg, dir)?;
    let csv_path = dir.join(TRAINING_CSV);
    let can_resume = opts.resume && agent_file(dir, 0).exists();
    let (mut learner, mut rows, resumed_at) = if can_resume {
        let learner = restore_learner(cfg, dir)?;
        let done = learner.episode();
        let mut rows: Vec<TrainRow> = if csv_path.exists() { read_csv(&csv_path)? } else { Vec::new() };
        rows.retain(|r| r.episode < done);
        if rows.len() != done {
            return Err(Error::Config(format!(
                "{} holds {} episodes, checkpoint is at {done}",
                csv_path.display(),
                rows.len()
            )));
        }
        (learner, rows, Some(done))
    } else {
        (Learner::new(&cfg.scenario, &cfg.error, &cfg.train, cfg.seed)?, Vec::new(), None)
    };
    write_csv(&csv_path, &rows)?;
    if rows.is_empty() {
        // header only
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record([
            "episode",
            "mean_reward",
            "smoothed_reward",
            "mmse_reward",
            "actor_loss",
            "critic1_loss",
            "critic2_loss",
            "mean_spread",
            "updates",
        ])?;
        w.flush()?;
    }
    let mut appender = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(OpenOptions::new().append(true).open(&csv_path)?);
    let mut ran = 0usize;
    while learner.episode() < cfg.train.episodes && opts.max_episodes.is_none_or(|m| ran < m) {
        let start = learner.step;
        let stats: EpisodeStats = learner.run_episode()?;
        let mut mmse = 0.0;
        for i in start..learner.step {
            let draw = learner.training_draw(i);
            let w = mmse_precoder(&draw.estimate.h_est, &cfg.scenario)?;
            mmse += scenario_rate(&cfg.scenario, &draw.channel.h, &w)?;
        }
        let row = TrainRow {
            episode: stats.episode,
            mean_reward: stats.mean_reward,
            smoothed_reward: smoothed(&rows, stats.mean_reward, cfg.train.smoothing_window),
            mmse_reward: mmse / (learner.step - start) as f64,
            actor_loss: stats.actor_loss,
            critic1_loss: stats.critic_losses[0],
            critic2_loss: stats.critic_losses[1],
            mean_spread: stats.mean_spread,
            updates: stats.updates,
        };
        appender.serialize(&row)?;
        appender.flush()?;
        rows.push(row);
        save_learner(&learner, dir)?;
        ran += 1;
    }
    fs::write(
        dir.join("training.svg"),
        line_chart(
            "training",
            "episode",
            "sum rate [bit/s/Hz]",
            &[
                Series {
                    label: "smoothed reward".into(),
                    points: rows.iter().map(|r| (r.episode as f64, r.smoothed_reward)).collect(),
                },
                Series {
                    label: "mmse".into(),
                    points: rows.iter().map(|r| (r.episode as f64, r.mmse_reward)).collect(),
                },
            ],
        ),
    )?;
    Ok(TrainSummary {
        finished: learner.episode() >= cfg.train.episodes,
        rows,
        long_running: cfg.train.is_long_running(),
        resumed_at,
    })
}

// ---- sweep -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario_id: String,
    pub precoder: String,
    pub parameter: String,
    pub error_point: f64,
    pub mean_rate: f64,
    pub std_err: f64,
    pub n_draws: usize,
    pub seed: u64,
}

pub fn error_at(base: &ErrorConfig, parameter: SweepParameter, value: f64) -> ErrorConfig {
    let mut err = *base;
    match parameter {
        SweepParameter::AodErrorBound => err.aod_error_bound = value,
        SweepParameter::PhaseErrorVariance => err.phase_error_variance = value,
    }
    err
}

fn parameter_name(p: SweepParameter) -> &'static str {
    match p {
        SweepParameter::AodErrorBound => "aod_error_bound",
        SweepParameter::PhaseErrorVariance => "phase_error_variance",
    }
}

/// Mean sum rate of every precoder at every grid point, all on the same draws.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let precoders = resolve_all(&cfg.precoders, cfg)?;
    let seeds = eval_seeds(cfg.seed);
    let mut rows = Vec::new();
    for &point in &cfg.sweep.grid {
        let err = error_at(&cfg.error, cfg.sweep.parameter, point);
        err.validate()?;
        let bound = precoders.iter().map(|p| p.bind(cfg, &err)).collect::<Result<Vec<_>>>()?;
        type Closure<'a> = Box<dyn Fn(&SimulationDraw) -> Result<PrecodingMatrix> + Sync + 'a>;
        let fns: Vec<Closure> = bound.iter().map(|b| Box::new(move |d: &SimulationDraw| b.precode(d)) as Closure).collect();
        let stats = evaluate_precoders(&cfg.scenario, &err, &fns, cfg.n_eval_draws, &seeds)?;
        for (p, s) in precoders.iter().zip(stats) {
            rows.push(SweepRow {
                scenario_id: cfg.scenario_id.clone(),
                precoder: p.name().to_string(),
                parameter: parameter_name(cfg.sweep.parameter).into(),
                error_point: point,
                mean_rate: s.mean,
                std_err: s.std_err,
                n_draws: s.n(),
                seed: cfg.seed,
            });
        }
    }
    write_echo(cfg, &cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(SWEEP_CSV), &rows)?;
    let series: Vec<Series> = precoders
        .iter()
        .map(|p| Series {
            label: p.name().to_string(),
            points: rows
                .iter()
                .filter(|r| r.precoder == p.name().as_str())
                .map(|r| (r.error_point, r.mean_rate))
                .collect(),
        })
        .collect();
    fs::write(
        cfg.out_dir.join("sweep.svg"),
        line_chart(&cfg.scenario_id, parameter_name(cfg.sweep.parameter), "mean sum rate [bit/s/Hz]", &series),
    )?;
    Ok(rows)
}

// ---- beam pattern ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BeamReport {
    /// `U x K` AOD cosines of the selected draw.
    pub user_cosines: Vec<Vec<f64>>,
    pub patterns: Vec<(String, BeamPattern)>,
    pub rates: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct BeamRow<'a> {
    precoder: &'a str,
    user_index: usize,
    cosine: f64,
    gain: f64,
}

#[derive(Serialize)]
struct RateRow<'a> {
    precoder: &'a str,
    sum_rate: f64,
}

#[derive(Serialize)]
struct UserRow {
    user_index: usize,
    satellite: usize,
    aod_cosine: f64,
}

/// Beam patterns of every requested precoder on the single draw picked by the seed.
pub fn cmd_beampattern(cfg: &ExperimentConfig, points: usize) -> Result<BeamReport> {
    cfg.validate()?;
    if points < 2 {
        return Err(Error::Config("beam pattern needs at least 2 grid points".into()));
    }
    let precoders = resolve_all(&cfg.precoders, cfg)?;
    let draw = SimulationDraw::new(
        &cfg.scenario,
        &cfg.error,
        &mut SeedTree::new(cfg.seed).child("beampattern", 0).draw(0),
    );
    let grid = linspace(-1.0, 1.0, points);
    let mut patterns = Vec::new();
    let mut rates = Vec::new();
    for p in &precoders {
        let w = p.bind(cfg, &cfg.error)?.precode(&draw)?;
        rates.push((p.name().to_string(), scenario_rate(&cfg.scenario, &draw.channel.h, &w)?));
        patterns.push((p.name().to_string(), beam_pattern(&w, &cfg.scenario, &grid)?));
    }
    let cos = &draw.channel.geometry.aod_cosines;
    let user_cosines: Vec<Vec<f64>> = (0..cos.nrows()).map(|u| cos.row(u).iter().copied().collect()).collect();

    let dir = &cfg.out_dir;
    write_echo(cfg, dir)?;
    let mut rows = Vec::new();
    for (name, pat) in &patterns {
        for (u, curve) in pat.gains.iter().enumerate() {
            for (c, g) in pat.grid.iter().zip(curve) {
                rows.push(BeamRow { precoder: name, user_index: u, cosine: *c, gain: *g });
            }
        }
    }
    write_csv(&dir.join("beampattern.csv"), &rows)?;
    let rate_rows: Vec<RateRow> = rates.iter().map(|(n, r)| RateRow { precoder: n, sum_rate: *r }).collect();
    write_csv(&dir.join("beampattern_rates.csv"), &rate_rows)?;
    let mut users = Vec::new();
    for (u, row) in user_cosines.iter().enumerate() {
        for (k, c) in row.iter().enumerate() {
            users.push(UserRow { user_index: u, satellite: k, aod_cosine: *c });
        }
    }
    write_csv(&dir.join("beampattern_users.csv"), &users)?;
    let series: Vec<Series> = patterns
        .iter()
        .flat_map(|(name, pat)| {
            pat.gains.iter().enumerate().map(move |(u, g)| Series {
                label: format!("{name} user {u}"),
                points: pat.grid.iter().copied().zip(g.iter().copied()).collect(),
            })
        })
        .collect();
    fs::write(dir.join("beampattern.svg"), line_chart("beam patterns", "cos(AOD)", "power gain", &series))?;
    Ok(BeamReport { user_cosines, patterns, rates })
}

// ---- bench -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario_id: String,
    pub precoder: String,
    pub num_satellites: usize,
    pub antennas_per_satellite: usize,
    pub num_users: usize,
    pub aod_error_bound: f64,
    pub calls: usize,
    pub median_ns: f64,
}

const BENCH_POOL: usize = 32;

/// Median wall-clock time of one precoding call, per requested precoder.
pub fn cmd_bench(cfg: &ExperimentConfig, calls: usize) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if calls == 0 {
        return Err(Error::Config("bench needs at least one call".into()));
    }
    let precoders = resolve_all(&cfg.precoders, cfg)?;
    let seeds = SeedTree::new(cfg.seed).child("bench", 0);
    let pool: Vec<SimulationDraw> = (0..BENCH_POOL)
        .map(|i| SimulationDraw::new(&cfg.scenario, &cfg.error, &mut seeds.draw(i as u64)))
        .collect();
    let mut rows = Vec::new();
    for p in &precoders {
        let bound = p.bind(cfg, &cfg.error)?;
        let mut times = Vec::with_capacity(calls);
        for i in 0..calls {
            let draw = &pool[i % BENCH_POOL];
            let t = Instant::now();
            let w = bound.precode(draw)?;
            times.push(t.elapsed().as_nanos() as f64);
            std::hint::black_box(w);
        }
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median = if times.len() % 2 == 0 { 0.5 * (times[mid - 1] + times[mid]) } else { times[mid] };
        rows.push(BenchRow {
            scenario_id: cfg.scenario_id.clone(),
            precoder: p.name().to_string(),
            num_satellites: cfg.scenario.num_satellites,
            antennas_per_satellite: cfg.scenario.antennas_per_satellite,
            num_users: cfg.scenario.num_users,
            aod_error_bound: cfg.error.aod_error_bound,
            calls,
            median_ns: median,
        });
    }
    write_echo(cfg, &cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(BENCH_CSV), &rows)?;
    Ok(rows)
}

// ---- weight report ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightReport {
    pub agent: usize,
    pub amplitude_mean: f64,
    pub phase_mean: f64,
    pub phase_to_amplitude: f64,
    /// Middle third of each array against the outer thirds.
    pub inner_to_outer_amplitude: f64,
    pub inner_to_outer_phase: f64,
    /// Own satellite block against the others, for per-satellite agents with a full-width view.
    pub own_to_other_amplitude: Option<f64>,
    pub own_to_other_phase: Option<f64>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn mean(self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

fn info_mode_from(code: u64) -> Result<InfoMode> {
    Ok(match code {
        0 => InfoMode::Global,
        1 => InfoMode::Local,
        2 => InfoMode::Limited1,
        3 => InfoMode::Limited2,
        _ => return Err(Error::Config(format!("unknown information mode code {code}"))),
    })
}

/// Mean absolute first-layer actor weight per input group.
pub fn weight_report(ck: &Checkpoint) -> Result<WeightReport> {
    let layout = ck.counter("layout")?;
    let [k_sats, users, n, mode, _head] = layout[..] else {
        return Err(Error::Config("layout record has the wrong length".into()));
    };
    let (k_sats, users, n) = (k_sats as usize, users as usize, n as usize);
    let mode = info_mode_from(mode)?;
    let agent = ck.counter("agent").ok().and_then(|a| a.first().copied()).unwrap_or(0) as usize;
    let actor = ck
        .networks
        .get("actor")
        .ok_or_else(|| Error::from(crate::nn::CheckpointError::MissingEntry("actor".into())))?;
    let width = if mode == InfoMode::Local { n } else { k_sats * n };
    let entries = users * width;
    let w = &actor.dense()[0].weight;
    if w.nrows() != 2 * entries {
        return Err(Error::Config(format!(
            "layout mismatch: {users} users x {width} columns needs {} inputs, actor has {}",
            2 * entries,
            w.nrows()
        )));
    }
    let (lo, hi) = (n / 3, n - n / 3);
    let mut groups = [[Acc::default(); 2]; 2]; // [kind][inner?]
    let mut blocks = [[Acc::default(); 2]; 2]; // [kind][own?]
    let mut all = [Acc::default(); 2];
    for i in 0..2 * entries {
        let kind = i / entries;
        let col = (i % entries) % width;
        let (block, m) = (col / n, col % n);
        let mass: f64 = w.row(i).iter().map(|v| v.abs()).sum();
        all[kind].add(mass);
        if m >= lo && m < hi {
            groups[kind][1].add(mass);
        } else {
            groups[kind][0].add(mass);
        }
        blocks[kind][usize::from(block == agent)].add(mass);
    }
    let per_satellite_full = mode != InfoMode::Global && mode != InfoMode::Local && k_sats > 1;
    let own = |kind: usize| per_satellite_full.then(|| blocks[kind][1].mean() / blocks[kind][0].mean());
    Ok(WeightReport {
        agent,
        amplitude_mean: all[0].mean(),
        phase_mean: all[1].mean(),
        phase_to_amplitude: all[1].mean() / all[0].mean(),
        inner_to_outer_amplitude: groups[0][1].mean() / groups[0][0].mean(),
        inner_to_outer_phase: groups[1][1].mean() / groups[1][0].mean(),
        own_to_other_amplitude: own(0),
        own_to_other_phase: own(1),
    })
}

/// Report on one agent checkpoint, or on every agent of a training directory.
pub fn cmd_weight_report(path: &Path, out: Option<&Path>) -> Result<Vec<WeightReport>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut k = 0;
        let mut v = Vec::new();
        while agent_file(path, k).exists() {
            v.push(agent_file(path, k));
            k += 1;
        }
        if v.is_empty() {
            return Err(Error::MissingArtifact(agent_file(path, 0)));
        }
        v
    } else {
        vec![path.to_path_buf()]
    };
    let reports = files
        .iter()
        .map(|f| weight_report(&Checkpoint::read(f)?))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(File::create(dir.join("weight_report.csv"))?);
        for r in &reports {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(reports)
}
