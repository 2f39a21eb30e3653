//! D3QN training and inference: epsilon-greedy action selection, a circular
//! replay buffer, double-DQN TD targets, periodic minibatch updates with soft
//! target blending, and greedy policy rollouts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::RunRecord;
use crate::qnet::{
    self, GradientBuffer, NetError, QNetworkParams, Workspace, NUM_ACTIONS,
};
use crate::sim::{encode_observation_into, Action, SimConfig, SimError, Simulator, SystemState};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("replay buffer holds {have} experiences, need {need}")]
    BufferNotReady { have: usize, need: usize },
    #[error("training diverged at episode {episode}, step {step}: loss = {loss}")]
    Diverged { episode: usize, step: u64, loss: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f64>,
    pub action: usize,
    pub next_obs: Vec<f64>,
    pub reward: f64,
}

/// Fixed-capacity circular buffer; once full, the oldest entry is
/// overwritten in insertion order.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Experience>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity >= 1, "capacity must be >= 1");
        ReplayBuffer { capacity, storage: Vec::new(), cursor: 0 }
    }

    pub fn push(&mut self, exp: Experience) {
        if self.storage.len() < self.capacity {
            self.storage.push(exp);
        } else {
            self.storage[self.cursor] = exp;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> &Experience {
        &self.storage[idx]
    }

    /// The stored experiences ordered oldest first.
    pub fn iter_in_order(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.cursor };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// Distinct uniform indices into the buffer (Floyd's algorithm).
    fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        let n = self.storage.len();
        debug_assert!(k <= n);
        for j in (n - k)..n {
            let t = rng.random_range(0..=j);
            if out.contains(&t) {
                out.push(j);
            } else {
                out.push(t);
            }
        }
    }
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub eta: f64,
    /// Per-episode multiplicative step-size decay; 1.0 keeps eta constant.
    pub eta_decay: f64,
    pub batch_size: usize,
    /// Train once every this many environment steps.
    pub train_interval: u64,
    pub tau: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub episodes: usize,
    /// Minimum buffer fill before the first update.
    pub warmup: usize,
    pub replay_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            gamma: 0.995,
            eta: 0.0002,
            eta_decay: 1.0,
            batch_size: 128,
            train_interval: 4,
            tau: 0.001,
            epsilon: 1.0,
            epsilon_decay: 0.98,
            epsilon_min: 0.01,
            episodes: 1500,
            warmup: 128,
            replay_capacity: 50_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |msg: String| Err(AgentError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must be in (0,1), got {}", self.gamma));
        }
        if !(self.eta > 0.0) {
            return fail(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return fail(format!("eta_decay must be in (0,1], got {}", self.eta_decay));
        }
        if self.batch_size == 0 || self.train_interval == 0 {
            return fail("batch_size and train_interval must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail(format!("tau must be in [0,1], got {}", self.tau));
        }
        if !(self.epsilon_min <= self.epsilon && self.epsilon <= 1.0 && self.epsilon_min >= 0.0) {
            return fail(format!(
                "need 0 <= epsilon_min <= epsilon <= 1, got ({}, {})",
                self.epsilon_min, self.epsilon
            ));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return fail(format!("epsilon_decay must be in (0,1], got {}", self.epsilon_decay));
        }
        if self.replay_capacity < self.batch_size {
            return fail("replay capacity must hold at least one batch".into());
        }
        Ok(())
    }
}

/// Network/observation choices that are not part of the update rule itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    /// Shared trunk hidden widths.
    pub hidden: Vec<usize>,
    /// Width of the per-head hidden layer.
    pub head_hidden: usize,
    /// Observation normalization divisor.
    pub obs_norm: f64,
}

impl Default for AgentSpec {
    fn default() -> AgentSpec {
        AgentSpec { hidden: vec![128, 512, 256], head_hidden: 128, obs_norm: 50.0 }
    }
}

/// Which state fields the observation vector carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsEncoding {
    /// Full state: update ages, AP age, access clock, request ages and
    /// carried ages.
    Full,
    /// Same but without the access clock; used by the conventional-age agent.
    DropAccessClock,
}

impl ObsEncoding {
    pub fn encode_into(self, state: &SystemState, norm: f64, out: &mut Vec<f64>) {
        match self {
            ObsEncoding::Full => encode_observation_into(state, norm, out),
            ObsEncoding::DropAccessClock => {
                out.clear();
                out.extend(state.update_ages.iter().map(|&v| v as f64 / norm));
                out.push(state.ap_aoi as f64 / norm);
                out.extend(state.request_ages.iter().map(|&v| v as f64 / norm));
                out.extend(state.request_aois.iter().map(|&v| v as f64 / norm));
            }
        }
    }

    pub fn len(self, n_updates: usize, m_requests: usize) -> usize {
        match self {
            ObsEncoding::Full => n_updates + 2 + 2 * m_requests,
            ObsEncoding::DropAccessClock => n_updates + 1 + 2 * m_requests,
        }
    }
}

/// What the per-slot training reward is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// The environment reward: transmission cost plus delivered request ages.
    Environment,
    /// Transmission cost plus the AP age charged every slot, as if users
    /// could read at any moment.
    PerSlotAoi,
}

/// Greedy argmax with ties broken toward action 0.
fn argmax(q: [f64; NUM_ACTIONS]) -> usize {
    usize::from(q[1] > q[0])
}

/// Epsilon-greedy selection over the network's Q-values.
pub fn select_action<R: Rng + ?Sized>(
    params: &QNetworkParams,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, NetError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..NUM_ACTIONS));
    }
    Ok(argmax(qnet::forward(params, obs)?))
}

fn select_action_ws<R: Rng + ?Sized>(
    params: &QNetworkParams,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
    ws: &mut Workspace,
) -> Result<usize, NetError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..NUM_ACTIONS));
    }
    Ok(argmax(qnet::forward_ws(params, obs, ws)?))
}

/// Double-DQN target: the online network picks the next action, the target
/// network prices it.
pub fn td_target(
    target_params: &QNetworkParams,
    online_params: &QNetworkParams,
    experience: &Experience,
    gamma: f64,
) -> Result<f64, NetError> {
    let next_online = qnet::forward(online_params, &experience.next_obs)?;
    let next_target = qnet::forward(target_params, &experience.next_obs)?;
    Ok(experience.reward + gamma * next_target[argmax(next_online)])
}

fn td_target_ws(
    target_params: &QNetworkParams,
    online_params: &QNetworkParams,
    experience: &Experience,
    gamma: f64,
    ws: &mut Workspace,
) -> Result<f64, NetError> {
    let next_online = qnet::forward_ws(online_params, &experience.next_obs, ws)?;
    let next_target = qnet::forward_ws(target_params, &experience.next_obs, ws)?;
    Ok(experience.reward + gamma * next_target[argmax(next_online)])
}

/// One minibatch update. Samples without replacement, regresses each Q-value
/// onto its TD target with a single SGD step on the batch-mean gradient,
/// then soft-updates the target network. Returns the pre-step mean squared
/// TD error.
pub fn train_step<R: Rng + ?Sized>(
    online: &mut QNetworkParams,
    target: &mut QNetworkParams,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64, AgentError> {
    let mut ws = Workspace::new(online);
    let mut grad = GradientBuffer::zeroed(online);
    let mut indices = Vec::with_capacity(cfg.batch_size);
    train_step_with(online, target, buffer, cfg, cfg.eta, rng, &mut ws, &mut grad, &mut indices)
}

#[allow(clippy::too_many_arguments)]
fn train_step_with<R: Rng + ?Sized>(
    online: &mut QNetworkParams,
    target: &mut QNetworkParams,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    eta: f64,
    rng: &mut R,
    ws: &mut Workspace,
    grad: &mut GradientBuffer,
    indices: &mut Vec<usize>,
) -> Result<f64, AgentError> {
    if buffer.len() < cfg.batch_size {
        return Err(AgentError::BufferNotReady { have: buffer.len(), need: cfg.batch_size });
    }
    buffer.sample_indices(cfg.batch_size, rng, indices);
    grad.reset();
    let scale = 1.0 / cfg.batch_size as f64;
    let mut loss = 0.0;
    for &i in indices.iter() {
        let exp = buffer.get(i);
        let y = td_target_ws(target, online, exp, cfg.gamma, ws)?;
        let residual =
            qnet::accumulate_gradient(online, &exp.obs, exp.action, y, scale, ws, grad)?;
        loss += residual * residual;
    }
    loss *= scale;
    qnet::sgd_step(online, grad, eta)?;
    qnet::soft_update(target, online, cfg.tau)?;
    Ok(loss)
}

/// Exponential decay with a floor: `max(epsilon * decay, epsilon_min)`.
pub fn decay_epsilon(epsilon: f64, cfg: &TrainConfig) -> f64 {
    (epsilon * cfg.epsilon_decay).max(cfg.epsilon_min)
}

/// Per-episode training log row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub total_reward: f64,
    pub epsilon: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: QNetworkParams,
    pub history: Vec<EpisodeStats>,
}

/// Full training loop for the given observation encoding and reward mode.
/// The master seed in `sim_cfg.seed` fixes initialization, exploration, the
/// environment, and batch sampling, so runs replay bit-identically.
pub fn train_loop(
    sim_cfg: &SimConfig,
    cfg: &TrainConfig,
    spec: &AgentSpec,
    encoding: ObsEncoding,
    reward_mode: RewardMode,
) -> Result<TrainResult, AgentError> {
    cfg.validate()?;
    let mut sim = Simulator::new(sim_cfg.clone())?;
    sim.set_trace_enabled(false);

    let obs_len = encoding.len(sim_cfg.n_updates_max, sim_cfg.m_requests_max);
    let dims = qnet::layer_dims(obs_len, &spec.hidden, spec.head_hidden);

    let master = sim_cfg.seed;
    let mut init_rng = ChaCha8Rng::seed_from_u64(master ^ 0x5eed_0001);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(master ^ 0x5eed_0002);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(master ^ 0x5eed_0003);
    let mut episode_seeds = ChaCha8Rng::seed_from_u64(master ^ 0x5eed_0004);

    let mut online = qnet::init_params(&dims, &mut init_rng)?;
    let mut target = online.clone();

    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut ws = Workspace::new(&online);
    let mut grad = GradientBuffer::zeroed(&online);
    let mut indices = Vec::with_capacity(cfg.batch_size);
    let mut obs = Vec::with_capacity(obs_len);
    let mut next_obs = Vec::with_capacity(obs_len);

    let mut epsilon = cfg.epsilon;
    let mut eta = cfg.eta;
    let mut history = Vec::with_capacity(cfg.episodes);
    let mut global_step = 0u64;

    for episode in 0..cfg.episodes {
        let mut state = sim.reset(episode_seeds.random::<u64>());
        let mut total_reward = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_ticks = 0u32;

        for _ in 0..sim_cfg.episode_slots {
            encoding.encode_into(&state, spec.obs_norm, &mut obs);
            let action = select_action_ws(&online, &obs, epsilon, &mut explore_rng, &mut ws)?;
            let outcome = sim.step(Action::from_index(action));
            let reward = match reward_mode {
                RewardMode::Environment => outcome.reward,
                RewardMode::PerSlotAoi => {
                    -(sim_cfg.omega * f64::from(u8::from(outcome.events.update_sent))
                        + outcome.next_state.ap_aoi as f64)
                }
            };
            encoding.encode_into(&outcome.next_state, spec.obs_norm, &mut next_obs);
            buffer.push(Experience {
                obs: obs.clone(),
                action,
                next_obs: next_obs.clone(),
                reward,
            });
            total_reward += reward;
            state = outcome.next_state;
            global_step += 1;

            if global_step % cfg.train_interval == 0
                && buffer.len() >= cfg.warmup.max(cfg.batch_size)
            {
                let loss = train_step_with(
                    &mut online,
                    &mut target,
                    &buffer,
                    cfg,
                    eta,
                    &mut batch_rng,
                    &mut ws,
                    &mut grad,
                    &mut indices,
                )?;
                if !loss.is_finite() {
                    return Err(AgentError::Diverged { episode, step: global_step, loss });
                }
                loss_sum += loss;
                loss_ticks += 1;
            }
        }

        history.push(EpisodeStats {
            episode,
            total_reward,
            epsilon,
            mean_loss: if loss_ticks > 0 { loss_sum / f64::from(loss_ticks) } else { 0.0 },
        });
        epsilon = decay_epsilon(epsilon, cfg);
        eta *= cfg.eta_decay;
    }

    Ok(TrainResult { params: online, history })
}

/// Train the freshness-aware agent on the full observation and the
/// environment reward.
pub fn train(
    sim_cfg: &SimConfig,
    cfg: &TrainConfig,
    spec: &AgentSpec,
) -> Result<TrainResult, AgentError> {
    train_loop(sim_cfg, cfg, spec, ObsEncoding::Full, RewardMode::Environment)
}

/// Anything that maps a system state to a send/hold decision.
pub trait Policy {
    fn act(&mut self, state: &SystemState) -> Action;
}

/// Greedy deployment of trained network parameters.
pub struct GreedyNetPolicy {
    pub params: QNetworkParams,
    pub encoding: ObsEncoding,
    pub obs_norm: f64,
    ws: Workspace,
    obs: Vec<f64>,
}

impl GreedyNetPolicy {
    pub fn new(params: QNetworkParams, encoding: ObsEncoding, obs_norm: f64) -> GreedyNetPolicy {
        let ws = Workspace::new(&params);
        GreedyNetPolicy { params, encoding, obs_norm, ws, obs: Vec::new() }
    }
}

impl Policy for GreedyNetPolicy {
    fn act(&mut self, state: &SystemState) -> Action {
        self.encoding.encode_into(state, self.obs_norm, &mut self.obs);
        let q = qnet::forward_ws(&self.params, &self.obs, &mut self.ws)
            .expect("policy network and observation shapes agree");
        Action::from_index(argmax(q))
    }
}

/// Never sends; the degenerate lower-bound policy.
pub struct NeverSend;

impl Policy for NeverSend {
    fn act(&mut self, _state: &SystemState) -> Action {
        Action::Hold
    }
}

/// Sends every slot; the saturation policy.
pub struct AlwaysSend;

impl Policy for AlwaysSend {
    fn act(&mut self, _state: &SystemState) -> Action {
        Action::Send
    }
}

fn rollout_impl(
    policy: &mut dyn Policy,
    sim_cfg: &SimConfig,
    episodes: usize,
    seed: u64,
    keep_traces: bool,
) -> Result<(RunRecord, Vec<Vec<crate::trace::Event>>), AgentError> {
    let mut sim = Simulator::new(sim_cfg.clone())?;
    sim.set_trace_enabled(keep_traces);
    let mut episode_seeds = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_00e0);
    let mut record = RunRecord::default();
    let mut traces = Vec::new();

    for _ in 0..episodes {
        let mut state = sim.reset(episode_seeds.random::<u64>());
        let mut total_reward = 0.0;
        for _ in 0..sim_cfg.episode_slots {
            let action = policy.act(&state);
            let outcome = sim.step(action);
            total_reward += outcome.reward;
            record.update_count += u64::from(outcome.events.update_sent);
            record.access_count += u64::from(outcome.events.user_accessed);
            record
                .tpaoi_samples
                .extend(outcome.events.requests_arrived.iter().map(|&v| v as f64));
            record
                .interval_aoi_pairs
                .push((outcome.next_state.since_access, outcome.next_state.ap_aoi));
            state = outcome.next_state;
        }
        record.reward_per_episode.push(total_reward);
        if keep_traces {
            traces.push(sim.take_trace());
        }
    }
    Ok((record, traces))
}

/// Deterministic greedy rollout of any policy in the three-phase
/// environment, pooling per-slot logs into one record.
pub fn rollout(
    policy: &mut dyn Policy,
    sim_cfg: &SimConfig,
    episodes: usize,
    seed: u64,
) -> Result<RunRecord, AgentError> {
    Ok(rollout_impl(policy, sim_cfg, episodes, seed, false)?.0)
}

/// Rollout that also returns each episode's event log.
pub fn rollout_traced(
    policy: &mut dyn Policy,
    sim_cfg: &SimConfig,
    episodes: usize,
    seed: u64,
) -> Result<(RunRecord, Vec<Vec<crate::trace::Event>>), AgentError> {
    rollout_impl(policy, sim_cfg, episodes, seed, true)
}

/// Greedy evaluation of trained parameters with the full observation.
pub fn evaluate_policy(
    params: &QNetworkParams,
    sim_cfg: &SimConfig,
    episodes: usize,
    seed: u64,
    obs_norm: f64,
) -> Result<RunRecord, AgentError> {
    let mut policy = GreedyNetPolicy::new(params.clone(), ObsEncoding::Full, obs_norm);
    rollout(&mut policy, sim_cfg, episodes, seed)
}
