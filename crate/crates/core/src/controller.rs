//! DQN HVAC controller and the closed-loop fault-tolerant pipeline
//! (predictor, then selector, then DQN).

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{aview1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::FaultConfig;
use crate::history::{normalize_temp, HistoryStep, HistoryWindow};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    adam_step, forward, forward_batch, loss_and_gradient, Activation, AdamState, Architecture, Loss, ParamSet,
};
use crate::plant::{
    generate_weather, zone_costs, Action, CostSchedule, PlantParams, SystemState, WeatherProfile, WeatherSeries,
};
use crate::predictor::Predictor;
use crate::rng::{derive_seed, seeded};
use crate::selector::{Choice, Selector};
use crate::sim::{Environment, Simulation};

pub const FORECAST_HORIZON: usize = 3;
pub const CHECKPOINT_KIND: &str = "dqn";
const SUN_SCALE_WM2: f64 = 1000.0;

/// Observation fed to the Q-network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrlState {
    /// Minutes since midnight over 1440.
    pub clock: f64,
    /// Indoor temperature per zone as delivered to the controller, °C.
    pub t_in: Vec<f64>,
    pub t_out: f64,
    /// W/m².
    pub sun: f64,
    pub forecast_t_out: [f64; FORECAST_HORIZON],
    pub forecast_sun: [f64; FORECAST_HORIZON],
}

impl DrlState {
    pub fn width(zones: usize) -> usize {
        9 + zones
    }

    /// State at `state`'s instant with `t_in` substituted for the indoor
    /// temperatures.
    pub fn observe(state: &SystemState, t_in: &[f64], weather: &WeatherSeries, plant: &PlantParams) -> Self {
        let fc = weather.forecast(state.step as usize, plant.steps_per_control, FORECAST_HORIZON);
        let mut forecast_t_out = [0.0; FORECAST_HORIZON];
        let mut forecast_sun = [0.0; FORECAST_HORIZON];
        for (j, (t, s)) in fc.into_iter().enumerate() {
            forecast_t_out[j] = t;
            forecast_sun[j] = s;
        }
        Self {
            clock: state.clock_fraction(),
            t_in: t_in.to_vec(),
            t_out: state.t_out,
            sun: state.sun,
            forecast_t_out,
            forecast_sun,
        }
    }

    /// Normalized network input: clock, T_in, T_out, sun, forecast T_out, forecast sun.
    pub fn to_input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(Self::width(self.t_in.len()));
        x.push(self.clock);
        x.extend(self.t_in.iter().map(|&t| normalize_temp(t)));
        x.push(normalize_temp(self.t_out));
        x.push(self.sun / SUN_SCALE_WM2);
        x.extend(self.forecast_t_out.iter().map(|&t| normalize_temp(t)));
        x.extend(self.forecast_sun.iter().map(|&s| s / SUN_SCALE_WM2));
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub gamma: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 6.25e-4,
            t_low: 19.0,
            t_high: 24.0,
            gamma: 0.99,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("reward scales must be positive".into()));
        }
        if !(self.t_low < self.t_high) {
            return Err(Error::Config("comfort bounds must satisfy T_l < T_u".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn violates(&self, t: f64) -> bool {
        t < self.t_low || t > self.t_high
    }
}

/// Negative total comfort-band excursion, °C.
pub fn violation_reward(params: &RewardParams, t_in: &[f64]) -> f64 {
    -t_in
        .iter()
        .map(|&t| (params.t_low - t).max(0.0) + (t - params.t_high).max(0.0))
        .sum::<f64>()
}

/// Reward for the period that just ended: `cost` is what the previous action
/// spent, `t_in` the true temperatures it led to.
pub fn reward(params: &RewardParams, t_in: &[f64], cost: f64) -> f64 {
    params.alpha * -cost + params.beta * violation_reward(params, t_in)
}

/// Fixed-capacity ring of transitions stored as flat rows.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    width: usize,
    states: Vec<f64>,
    next: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, width: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            width,
            states: vec![0.0; capacity * width],
            next: vec![0.0; capacity * width],
            actions: vec![0; capacity],
            rewards: vec![0.0; capacity],
            head: 0,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores a transition, overwriting the oldest once full.
    pub fn push(&mut self, state: &[f64], action: usize, reward: f64, next: &[f64]) -> Result<()> {
        if state.len() != self.width || next.len() != self.width {
            return Err(Error::Shape(format!(
                "transition rows of width {} and {}, buffer holds {}",
                state.len(),
                next.len(),
                self.width
            )));
        }
        let i = self.head;
        self.states[i * self.width..(i + 1) * self.width].copy_from_slice(state);
        self.next[i * self.width..(i + 1) * self.width].copy_from_slice(next);
        self.actions[i] = action;
        self.rewards[i] = reward;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Uniform sample with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.len)).collect()
    }

    pub fn transition(&self, i: usize) -> (&[f64], usize, f64, &[f64]) {
        let w = self.width;
        (&self.states[i * w..(i + 1) * w], self.actions[i], self.rewards[i], &self.next[i * w..(i + 1) * w])
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>, Vec<f64>, Array2<f64>) {
        let w = self.width;
        let mut s = Array2::zeros((idx.len(), w));
        let mut n = Array2::zeros((idx.len(), w));
        for (r, &i) in idx.iter().enumerate() {
            s.row_mut(r).assign(&aview1(&self.states[i * w..(i + 1) * w]));
            n.row_mut(r).assign(&aview1(&self.next[i * w..(i + 1) * w]));
        }
        let a = idx.iter().map(|&i| self.actions[i]).collect();
        let rw = idx.iter().map(|&i| self.rewards[i]).collect();
        (s, a, rw, n)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Q-network over the `levels^zones` joint actions.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub arch: Architecture,
    pub params: ParamSet,
    pub zones: usize,
    pub levels: usize,
    /// Multiplier applied to rewards during training; divide outputs by it
    /// to read Q in reward units.
    pub reward_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    zones: usize,
    levels: usize,
    reward_scale: f64,
}

impl QNetwork {
    pub fn architecture(hidden: &[usize], zones: usize, levels: usize) -> Result<Architecture> {
        let actions = action_count(zones, levels)?;
        let mut widths = vec![DrlState::width(zones)];
        widths.extend_from_slice(hidden);
        widths.push(actions);
        Architecture::mlp(&widths, Activation::Identity)
    }

    pub fn init(hidden: &[usize], zones: usize, levels: usize, reward_scale: f64, seed: u64) -> Result<Self> {
        let arch = Self::architecture(hidden, zones, levels)?;
        let params = arch.init(&mut seeded(derive_seed(seed, "dqn-init")));
        Ok(Self {
            arch,
            params,
            zones,
            levels,
            reward_scale,
        })
    }

    pub fn actions(&self) -> usize {
        self.arch.output_size()
    }

    pub fn q_values(&self, state: &DrlState) -> Result<Vec<f64>> {
        if state.t_in.len() != self.zones {
            return Err(Error::Shape(format!(
                "state has {} zones, Q-network expects {}",
                state.t_in.len(),
                self.zones
            )));
        }
        forward(&self.arch, &self.params, &state.to_input())
    }

    pub fn greedy(&self, state: &DrlState) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn action(&self, index: usize) -> Action {
        Action::from_index(index, self.zones, self.levels)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = Meta {
            zones: self.zones,
            levels: self.levels,
            reward_scale: self.reward_scale,
        };
        Checkpoint::from_network(CHECKPOINT_KIND, &self.arch, &self.params, serde_json::to_value(meta)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.metadata.clone())?;
        let (arch, params) = ck.network()?;
        if arch.input_size() != DrlState::width(meta.zones) || arch.output_size() != action_count(meta.zones, meta.levels)? {
            return Err(Error::Shape("DQN checkpoint layers disagree with its zone and level counts".into()));
        }
        Ok(Self {
            arch,
            params,
            zones: meta.zones,
            levels: meta.levels,
            reward_scale: meta.reward_scale,
        })
    }
}

pub fn action_count(zones: usize, levels: usize) -> Result<usize> {
    u32::try_from(zones)
        .ok()
        .and_then(|z| levels.checked_pow(z))
        .filter(|&a| a > 0)
        .ok_or_else(|| Error::Config(format!("{levels}^{zones} joint actions is not representable")))
}

/// ε-greedy action index.
pub fn act<R: Rng + ?Sized>(q: &QNetwork, state: &DrlState, epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q.actions()));
    }
    q.greedy(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    /// Adam step size.
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient updates between target-network copies.
    pub target_sync: usize,
    /// Transitions collected before the first update.
    pub learning_starts: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of all training steps over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub episodes: usize,
    pub episode_days: usize,
    /// Initial indoor temperature is drawn from this range each episode.
    pub initial_temp_c: (f64, f64),
    pub reward_scale: f64,
    /// `false` trains on each transition as it happens, bootstrapping from
    /// the online network, with no replay or target copy.
    pub replay: bool,
    pub divergence_bound: f64,
    /// Length of the held-out validation month. Once ε has reached its
    /// floor, the greedy policy is scored on it after every episode and the
    /// parameters with the best return are kept. 0 keeps the final ones.
    pub validation_days: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50, 100, 200, 400],
            lr: 1e-3,
            batch_size: 32,
            replay_capacity: 50_000,
            target_sync: 200,
            learning_starts: 1_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            episodes: 30,
            episode_days: 30,
            initial_temp_c: (20.0, 26.0),
            reward_scale: 100.0,
            replay: true,
            divergence_bound: 1e6,
            validation_days: 30,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) || !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("DQN layers, learning rate and batch size must be positive".into()));
        }
        if self.episodes == 0 || self.episode_days == 0 {
            return Err(Error::Config("DQN needs at least one episode of one day".into()));
        }
        if self.target_sync == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("target sync must be positive and replay must hold a batch".into()));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::Config("reward scale must be positive".into()));
        }
        if self.initial_temp_c.0 > self.initial_temp_c.1 {
            return Err(Error::Config("initial temperature range is reversed".into()));
        }
        Ok(())
    }

    /// ε at global step `step` of `total`.
    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let horizon = (self.epsilon_decay_fraction * total as f64).max(1.0);
        let frac = (step as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Where the training months come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainingWeather {
    /// Fresh synthetic weather per episode.
    Generated(WeatherProfile),
    /// The same series every episode (truncated to the episode length).
    Fixed(WeatherSeries),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DqnLog {
    /// Sum of unscaled rewards per episode.
    pub episode_returns: Vec<f64>,
    /// Mean squared TD error per episode (scaled units).
    pub episode_losses: Vec<f64>,
    /// Greedy validation return after each episode, where measured.
    pub validation_returns: Vec<Option<f64>>,
    /// Episode (0-based) whose parameters were kept.
    pub kept_episode: usize,
    pub updates: usize,
}

/// Episodic DQN training on clean sensors.
pub fn train_dqn(
    plant: &PlantParams,
    cost: &CostSchedule,
    weather: &TrainingWeather,
    reward_params: &RewardParams,
    config: &DqnConfig,
    seed: u64,
) -> Result<(QNetwork, DqnLog)> {
    config.validate()?;
    reward_params.validate()?;
    let zones = plant.zones();
    let mut q = QNetwork::init(&config.hidden, zones, plant.levels(), config.reward_scale, seed)?;
    let mut target = q.params.clone();
    let mut adam = AdamState::new(&q.params);
    let mut rng = seeded(derive_seed(seed, "dqn-explore"));
    let width = DrlState::width(zones);
    let mut replay = ReplayBuffer::new(config.replay_capacity, width)?;
    let steps_per_episode = config.episode_days * 1440 / plant.control_period_minutes() as usize;
    let total = steps_per_episode * config.episodes;
    let mut log = DqnLog::default();
    let mut global = 0;
    let validation = match (config.validation_days, weather) {
        (0, _) => None,
        (days, TrainingWeather::Generated(profile)) => {
            Some(generate_weather(days + 1, profile, derive_seed(seed, "dqn-validation"))?)
        }
        // No other weather is available; validate on the training series.
        (_, TrainingWeather::Fixed(series)) => Some(series.clone()),
    };
    let validation = match validation {
        Some(w) => {
            let env = Environment::new(plant.clone(), w, cost.clone())?;
            let steps = (config.validation_days * 1440 / plant.control_period_minutes() as usize).min(env.max_control_steps());
            Some((env, steps))
        }
        None => None,
    };
    let floor_at = (config.epsilon_decay_fraction * total as f64).ceil() as usize;
    let mut best: Option<(f64, ParamSet)> = None;

    for episode in 0..config.episodes {
        let series = match weather {
            TrainingWeather::Generated(profile) => generate_weather(
                config.episode_days + 1,
                profile,
                derive_seed(seed, &format!("dqn-weather-{episode}")),
            )?,
            TrainingWeather::Fixed(series) => series.clone(),
        };
        let env = Environment::new(plant.clone(), series, cost.clone())?;
        let steps = steps_per_episode.min(env.max_control_steps());
        let (lo, hi) = config.initial_temp_c;
        let t_init = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut sim = Simulation::new(&env, t_init, FaultConfig::none(0), derive_seed(seed, &format!("dqn-episode-{episode}")))?;
        let mut state = DrlState::observe(&sim.state, &sim.state.t_in, &env.weather, plant).to_input();
        let (mut ret, mut loss_sum, mut loss_n) = (0.0, 0.0, 0usize);
        for step in 0..steps {
            let eps = config.epsilon(global, total);
            let a = if eps > 0.0 && rng.random::<f64>() < eps {
                rng.random_range(0..q.actions())
            } else {
                argmax(&forward(&q.arch, &q.params, &state)?)
            };
            let spent = sim.advance(&env, &q.action(a))?;
            let r = reward(reward_params, &sim.state.t_in, spent);
            ret += r;
            let next = DrlState::observe(&sim.state, &sim.state.t_in, &env.weather, plant).to_input();
            let at = || format!("episode {episode} step {step}");
            let loss = if config.replay {
                replay.push(&state, a, r, &next)?;
                if replay.len() >= config.learning_starts.max(config.batch_size) {
                    let idx = replay.sample_indices(config.batch_size, &mut rng);
                    let (s, acts, rw, n) = replay.gather(&idx);
                    let l = td_update(&mut q, &target, &mut adam, s, &acts, &rw, n, reward_params.gamma, config)
                        .map_err(|e| retag(e, at()))?;
                    log.updates += 1;
                    if log.updates % config.target_sync == 0 {
                        target = q.params.clone();
                    }
                    Some(l)
                } else {
                    None
                }
            } else {
                let s = Array2::from_shape_vec((1, width), state.clone()).map_err(|e| Error::Shape(e.to_string()))?;
                let n = Array2::from_shape_vec((1, width), next.clone()).map_err(|e| Error::Shape(e.to_string()))?;
                let online = q.params.clone();
                let l = td_update(&mut q, &online, &mut adam, s, &[a], &[r], n, reward_params.gamma, config)
                    .map_err(|e| retag(e, at()))?;
                log.updates += 1;
                Some(l)
            };
            if let Some(l) = loss {
                loss_sum += l;
                loss_n += 1;
            }
            state = next;
            global += 1;
        }
        log.episode_returns.push(ret);
        log.episode_losses.push(if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN });
        let score = match &validation {
            Some((env, steps)) if global >= floor_at => {
                let (lo, hi) = config.initial_temp_c;
                Some(greedy_return(&q, env, *steps, 0.5 * (lo + hi), reward_params, derive_seed(seed, "dqn-validation-plant"))?)
            }
            _ => None,
        };
        log.validation_returns.push(score);
        if let Some(v) = score {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, q.params.clone()));
                log.kept_episode = episode;
            }
        }
    }
    match best {
        Some((_, params)) => q.params = params,
        None => log.kept_episode = config.episodes - 1,
    }
    Ok((q, log))
}

/// Sum of rewards of the greedy policy over `steps` clean control steps.
fn greedy_return(q: &QNetwork, env: &Environment, steps: usize, t_init: f64, reward_params: &RewardParams, seed: u64) -> Result<f64> {
    let mut sim = Simulation::new(env, t_init, FaultConfig::none(0), seed)?;
    let mut ret = 0.0;
    for _ in 0..steps {
        let obs = DrlState::observe(&sim.state, &sim.state.t_in, &env.weather, &env.plant);
        let spent = sim.advance(env, &q.action(q.greedy(&obs)?))?;
        ret += reward(reward_params, &sim.state.t_in, spent);
    }
    Ok(ret)
}

fn retag(e: Error, at: String) -> Error {
    match e {
        Error::Training { stage, message, .. } => Error::Training { stage, at, message },
        other => other,
    }
}

/// One gradient step on the squared TD error of the taken actions.
#[allow(clippy::too_many_arguments)]
fn td_update(
    q: &mut QNetwork,
    target: &ParamSet,
    adam: &mut AdamState,
    states: Array2<f64>,
    actions: &[usize],
    rewards: &[f64],
    next: Array2<f64>,
    gamma: f64,
    config: &DqnConfig,
) -> Result<f64> {
    let next_q = forward_batch(&q.arch, target, next.view())?;
    let bound = config.divergence_bound;
    if next_q.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        return Err(Error::training("train-dqn", "", format!("|Q| exceeded {bound:e}")));
    }
    let m = q.actions();
    let mut targets = Array2::zeros((actions.len(), m));
    let mut mask = Array2::zeros((actions.len(), m));
    for (i, (&a, &r)) in actions.iter().zip(rewards).enumerate() {
        let best = next_q.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        targets[[i, a]] = config.reward_scale * r + gamma * best;
        mask[[i, a]] = 1.0;
    }
    if targets.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        return Err(Error::training("train-dqn", "", format!("TD target exceeded {bound:e}")));
    }
    let (loss, grad) = loss_and_gradient(&q.arch, &q.params, states.view(), Loss::MaskedMse, targets.view(), Some(mask.view()))?;
    if !loss.is_finite() {
        return Err(Error::training("train-dqn", "", "non-finite TD loss"));
    }
    adam_step(&mut q.params, &grad, adam, config.lr)?;
    Ok(loss)
}

/// Which temperatures drive the controller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// Raw sensor readings straight into the DQN.
    PlainDqn,
    /// Predictor and selector in front of the DQN.
    #[default]
    Ftf,
    /// Full pipeline runs, but the raw reading is always passed on.
    ForcedRaw,
}

/// Temperatures stored in the predictor's rolling history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistorySource {
    /// Sensor readings, faults included.
    #[default]
    Raw,
    /// The values the selector passed on.
    Selected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtfConfig {
    pub mode: ControlMode,
    pub history: HistorySource,
    pub reward: RewardParams,
    /// Control steps measured after the warm-up.
    pub control_steps: usize,
    pub initial_temp_c: f64,
}

impl Default for FtfConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::Ftf,
            history: HistorySource::Raw,
            reward: RewardParams::default(),
            control_steps: 30 * 96,
            initial_temp_c: 22.0,
        }
    }
}

/// Per-zone row of the episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub step: u64,
    pub zone: usize,
    #[serde(rename = "T_true")]
    pub t_true: f64,
    #[serde(rename = "T_sensor")]
    pub t_sensor: f64,
    #[serde(rename = "T_chosen")]
    pub t_chosen: f64,
    pub action: usize,
    pub cost: f64,
    pub violation: u8,
}

/// Measured part of one closed-loop run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub zones: usize,
    pub rows: Vec<EpisodeRow>,
    /// Joint action index per control step.
    pub actions: Vec<usize>,
    /// `(predicted, true)` per step and zone; empty for plain DQN.
    pub predictions: Vec<Vec<(f64, f64)>>,
    /// Whether each selector decision picked the proposal closer to the truth.
    pub selections: Vec<Vec<bool>>,
    pub choices: Vec<(u64, Vec<Choice>)>,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// θ per zone, percent of control steps outside the comfort band.
    pub fn violation_rates(&self) -> Vec<f64> {
        let mut hits = vec![0usize; self.zones];
        for r in &self.rows {
            hits[r.zone] += r.violation as usize;
        }
        let steps = self.steps().max(1) as f64;
        hits.into_iter().map(|h| 100.0 * h as f64 / steps).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.cost).sum()
    }

    pub fn predictor_rmse(&self) -> Option<f64> {
        let all: Vec<f64> = self.predictions.iter().flatten().map(|(p, t)| (p - t).powi(2)).collect();
        (!all.is_empty()).then(|| (all.iter().sum::<f64>() / all.len() as f64).sqrt())
    }

    /// Percent of selector decisions that were the closer proposal.
    pub fn selector_accuracy(&self) -> Option<f64> {
        let all: Vec<bool> = self.selections.iter().flatten().copied().collect();
        (!all.is_empty()).then(|| 100.0 * all.iter().filter(|&&b| b).count() as f64 / all.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trained stack used by [`run_ftf`]. Plain DQN needs only `qnet`.
#[derive(Clone, Copy, Debug)]
pub struct Components<'a> {
    pub qnet: &'a QNetwork,
    pub predictor: Option<&'a Predictor>,
    pub selector: Option<&'a Selector>,
}

/// Closed-loop run on `env` under `faults`.
///
/// The first `k` control steps fill the predictor history and are driven by
/// raw readings in every mode; they are not part of the returned episode.
pub fn run_ftf(
    env: &Environment,
    faults: FaultConfig,
    components: Components<'_>,
    config: &FtfConfig,
    seed: u64,
) -> Result<Episode> {
    let n = env.zones();
    let q = components.qnet;
    if q.zones != n || q.levels != env.plant.levels() {
        return Err(Error::Config(format!(
            "Q-network is for {} zones with {} levels, plant has {n} zones with {}",
            q.zones,
            q.levels,
            env.plant.levels()
        )));
    }
    let pipeline = match config.mode {
        ControlMode::PlainDqn => None,
        ControlMode::Ftf | ControlMode::ForcedRaw => {
            let (Some(p), Some(s)) = (components.predictor, components.selector) else {
                return Err(Error::Config("fault-tolerant mode needs a predictor and a selector".into()));
            };
            if p.zones != n || s.zones() != n || p.config.window != s.config.window {
                return Err(Error::Config("predictor, selector and plant disagree on zones or window".into()));
            }
            Some((p, s))
        }
    };
    let k = components
        .predictor
        .map(|p| p.config.window)
        .or(components.selector.map(|s| s.config.window))
        .unwrap_or(0);
    let total = k + config.control_steps;
    if total > env.max_control_steps() {
        return Err(Error::Config(format!(
            "{total} control steps (warm-up {k}) requested, weather covers {}",
            env.max_control_steps()
        )));
    }

    let mut sim = Simulation::new(env, config.initial_temp_c, faults, seed)?;
    let mut history: VecDeque<HistoryStep> = VecDeque::with_capacity(k + 1);
    let mut ep = Episode {
        zones: n,
        ..Episode::default()
    };
    for t in 0..total {
        let truth = sim.state.t_in.clone();
        let raw = sim.sensed.clone();
        let measured = t >= k;
        let mut chosen = raw.clone();
        if let (Some((pred, sel)), true) = (pipeline, measured) {
            let window = HistoryWindow::new(history.iter().cloned().collect())?;
            let p = pred.predict(&window)?;
            let (c, flags) = sel.select(&window, &raw, &p)?;
            if config.mode == ControlMode::Ftf {
                chosen = c;
            }
            ep.predictions.push(p.iter().copied().zip(truth.iter().copied()).collect());
            ep.selections.push(
                (0..n)
                    .map(|z| {
                        let closer_raw = (raw[z] - truth[z]).abs() <= (p[z] - truth[z]).abs();
                        (flags[z] == Choice::Raw) == closer_raw
                    })
                    .collect(),
            );
            ep.choices.push((sim.state.step, flags));
        }
        let obs = DrlState::observe(&sim.state, &chosen, &env.weather, &env.plant);
        let a = q.greedy(&obs)?;
        let action = q.action(a);
        let costs = zone_costs(&sim.state, &action, &env.plant, &env.cost);
        if measured {
            for z in 0..n {
                ep.rows.push(EpisodeRow {
                    step: sim.state.step,
                    zone: z,
                    t_true: truth[z],
                    t_sensor: raw[z],
                    t_chosen: chosen[z],
                    action: action.levels[z],
                    cost: costs[z],
                    violation: config.reward.violates(truth[z]) as u8,
                });
            }
            ep.actions.push(a);
        }
        if k > 0 {
            let stored = match config.history {
                HistorySource::Raw => raw,
                HistorySource::Selected => chosen,
            };
            history.push_back(HistoryStep {
                minute: sim.state.minute,
                t_in: stored,
                t_out: sim.state.t_out,
                flow: action.levels.iter().map(|&l| env.plant.flow(l)).collect(),
            });
            if history.len() > k {
                history.pop_front();
            }
        }
        sim.advance(env, &action)?;
    }
    Ok(ep)
}
