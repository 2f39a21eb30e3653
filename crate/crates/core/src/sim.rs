//! Time-slotted simulation of the three-phase status-updating loop: a server
//! pushes updates to an access point over a lossy-delay link, a user reads the
//! AP at random intervals and forwards a request that carries the age it saw.
//!
//! The simulator is deterministic given a seed: replaying the same seed and
//! action sequence reproduces trajectories bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use thiserror::Error;

use crate::trace::Event;

/// Default divisor applied to state entries when building network inputs.
pub const DEFAULT_OBS_NORM: f64 = 50.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Stochastic component of a one-way transmission delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fluctuation {
    Exponential { mean: f64 },
    Normal { mean: f64, variance: f64 },
}

/// One-way link delay: fixed propagation slots plus a random transmission
/// component, discretized to whole slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub base_slots: u64,
    pub fluctuation: Fluctuation,
}

/// User access-interval process: a fixed floor plus a Poisson-distributed
/// extra wait.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessModel {
    pub base_interval: u64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// At most this many status updates concurrently on the server→AP link.
    pub n_updates_max: usize,
    /// At most this many requests concurrently on the AP→server link.
    pub m_requests_max: usize,
    /// Cost charged per transmitted status update.
    pub omega: f64,
    pub delay_model: DelayModel,
    pub access_model: AccessModel,
    pub episode_slots: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_updates_max == 0 {
            return Err(SimError::InvalidConfig("n_updates_max must be >= 1".into()));
        }
        if self.m_requests_max == 0 {
            return Err(SimError::InvalidConfig("m_requests_max must be >= 1".into()));
        }
        if self.episode_slots == 0 {
            return Err(SimError::InvalidConfig("episode_slots must be >= 1".into()));
        }
        if !(self.omega >= 0.0) {
            return Err(SimError::InvalidConfig("omega must be >= 0".into()));
        }
        if self.access_model.base_interval == 0 {
            return Err(SimError::InvalidConfig("base_interval must be >= 1".into()));
        }
        if !(self.access_model.lambda >= 0.0) {
            return Err(SimError::InvalidConfig("lambda must be >= 0".into()));
        }
        match self.delay_model.fluctuation {
            Fluctuation::Exponential { mean } if !(mean >= 0.0) => {
                return Err(SimError::InvalidConfig("exponential mean must be >= 0".into()));
            }
            Fluctuation::Normal { variance, .. } if !(variance >= 0.0) => {
                return Err(SimError::InvalidConfig("normal variance must be >= 0".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Server action for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Hold,
    Send,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Hold => 0,
            Action::Send => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::Hold
        } else {
            Action::Send
        }
    }
}

/// The observable system state at one slot.
///
/// `update_ages[i]` / `request_ages[i]` count slots an in-flight item has
/// spent on its link (0 = idle slot). `request_aois[i]` is the age carried by
/// an in-flight request. `since_access` is 1 at an access slot and grows by
/// one per slot after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    pub update_ages: Vec<u64>,
    pub ap_aoi: u64,
    pub since_access: u64,
    pub request_ages: Vec<u64>,
    pub request_aois: Vec<u64>,
}

impl SystemState {
    fn idle(n: usize, m: usize) -> SystemState {
        SystemState {
            update_ages: vec![0; n],
            ap_aoi: 0,
            since_access: 1,
            request_ages: vec![0; m],
            request_aois: vec![0; m],
        }
    }
}

/// What happened during one step, sufficient to recompute the reward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub update_sent: bool,
    /// Send attempted while every update slot was busy; nothing happened and
    /// no cost was charged.
    pub update_suppressed: bool,
    /// Transit ages of updates delivered this step.
    pub updates_arrived: Vec<u64>,
    pub user_accessed: bool,
    pub request_launched: bool,
    /// Carried ages of requests delivered this step.
    pub requests_arrived: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub reward: f64,
    pub events: StepEvents,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    origin_slot: u64,
    arrival_slot: u64,
}

/// The three-phase updating loop simulator.
///
/// Slot 0 is the reset state; each `step` call forms the next slot. Arrival
/// schedules are kept internally; the public state alone is what a policy may
/// observe.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    slot: u64,
    state: SystemState,
    updates: Vec<Option<InFlight>>,
    requests: Vec<Option<InFlight>>,
    last_update_arrival: u64,
    last_request_arrival: u64,
    next_access_slot: u64,
    trace: Vec<Event>,
    trace_enabled: bool,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Simulator, SimError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let n = cfg.n_updates_max;
        let m = cfg.m_requests_max;
        let mut sim = Simulator {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            slot: 0,
            state: SystemState::idle(n, m),
            updates: vec![None; n],
            requests: vec![None; m],
            last_update_arrival: 0,
            last_request_arrival: 0,
            next_access_slot: 0,
            trace: Vec::new(),
            trace_enabled: true,
        };
        sim.reset(seed);
        Ok(sim)
    }

    /// Return to the all-idle initial state and reseed the random stream.
    pub fn reset(&mut self, seed: u64) -> SystemState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.slot = 0;
        self.state = SystemState::idle(self.cfg.n_updates_max, self.cfg.m_requests_max);
        self.updates.iter_mut().for_each(|s| *s = None);
        self.requests.iter_mut().for_each(|s| *s = None);
        self.last_update_arrival = 0;
        self.last_request_arrival = 0;
        self.next_access_slot = sample_access_interval(&self.cfg.access_model, &mut self.rng);
        self.trace.clear();
        self.state.clone()
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    /// Slot index of the state currently held (0 after reset).
    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Disable event logging for long training loops.
    pub fn set_trace_enabled(&mut self, enabled: bool) {
        self.trace_enabled = enabled;
    }

    pub fn trace(&self) -> &[Event] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.trace)
    }

    /// Advance one slot. Processing order within the step is fixed: update
    /// delivery, request delivery, user access (and request launch), server
    /// send, then age increments for items already on a link.
    pub fn step(&mut self, action: Action) -> StepOutcome {
        let t = self.slot + 1;
        let mut events = StepEvents::default();
        let mut penalty = 0.0;

        // (1) update delivery resets the AP age to the transit time.
        let mut delivered_update = None;
        for (i, slot) in self.updates.iter().enumerate() {
            if let Some(item) = slot {
                assert!(item.arrival_slot >= t, "in-flight update missed its arrival slot");
                if item.arrival_slot == t {
                    delivered_update = Some((i, *item));
                }
            }
        }
        if let Some((i, item)) = delivered_update {
            let transit = t - item.origin_slot;
            debug_assert_eq!(self.state.update_ages[i], transit);
            self.updates[i] = None;
            self.state.update_ages[i] = 0;
            self.state.ap_aoi = transit;
            events.updates_arrived.push(transit);
            if self.trace_enabled {
                self.trace.push(Event::UpdateArrived {
                    slot: t,
                    send_slot: item.origin_slot,
                    transit,
                });
            }
        } else {
            self.state.ap_aoi += 1;
        }

        // (2) request delivery: its carried age is one realized sample.
        let mut delivered_request = None;
        for (i, slot) in self.requests.iter().enumerate() {
            if let Some(item) = slot {
                assert!(item.arrival_slot >= t, "in-flight request missed its arrival slot");
                if item.arrival_slot == t {
                    delivered_request = Some((i, *item));
                }
            }
        }
        if let Some((i, item)) = delivered_request {
            let age = self.state.request_aois[i];
            self.requests[i] = None;
            self.state.request_ages[i] = 0;
            self.state.request_aois[i] = 0;
            penalty += age as f64;
            events.requests_arrived.push(age);
            if self.trace_enabled {
                self.trace.push(Event::RequestArrived {
                    slot: t,
                    access_slot: item.origin_slot,
                    tpaoi: age,
                });
            }
        }

        // (3) user access: reset the interval clock and, if the link has
        // room, launch a request carrying the AP age it just saw.
        let mut new_request = None;
        if t == self.next_access_slot {
            self.state.since_access = 1;
            events.user_accessed = true;
            self.next_access_slot = t + sample_access_interval(&self.cfg.access_model, &mut self.rng);
            if let Some(i) = self.pick_free(true) {
                let delay = sample_update_delay(&self.cfg.delay_model, &mut self.rng);
                let arrival = (t + delay).max(self.last_request_arrival + 1);
                self.last_request_arrival = arrival;
                self.requests[i] = Some(InFlight { origin_slot: t, arrival_slot: arrival });
                self.state.request_ages[i] = 1;
                self.state.request_aois[i] = self.state.ap_aoi + 1;
                new_request = Some(i);
                events.request_launched = true;
            }
            if self.trace_enabled {
                self.trace.push(Event::UserAccessed {
                    slot: t,
                    aoi: self.state.ap_aoi,
                    launched: new_request.is_some(),
                });
            }
        } else {
            self.state.since_access += 1;
        }

        // (4) server action; a send against a full link is a free no-op.
        let mut new_update = None;
        if action == Action::Send {
            if let Some(i) = self.pick_free(false) {
                let delay = sample_update_delay(&self.cfg.delay_model, &mut self.rng);
                let arrival = (t + delay).max(self.last_update_arrival + 1);
                self.last_update_arrival = arrival;
                self.updates[i] = Some(InFlight { origin_slot: t, arrival_slot: arrival });
                self.state.update_ages[i] = 1;
                new_update = Some(i);
                events.update_sent = true;
                if self.trace_enabled {
                    self.trace.push(Event::UpdateSent { slot: t });
                }
            } else {
                events.update_suppressed = true;
            }
        }

        // (5) everything still on a link ages one slot.
        for i in 0..self.cfg.n_updates_max {
            if self.updates[i].is_some() && new_update != Some(i) {
                self.state.update_ages[i] += 1;
            }
        }
        for i in 0..self.cfg.m_requests_max {
            if self.requests[i].is_some() && new_request != Some(i) {
                self.state.request_ages[i] += 1;
                self.state.request_aois[i] += 1;
            }
        }

        let reward = -(self.cfg.omega * f64::from(u8::from(events.update_sent)) + penalty);
        self.slot = t;
        StepOutcome { next_state: self.state.clone(), reward, events }
    }

    /// Uniformly random free slot on the chosen link, if any.
    fn pick_free(&mut self, request_link: bool) -> Option<usize> {
        let occupied: &[Option<InFlight>] = if request_link { &self.requests } else { &self.updates };
        let free: Vec<usize> = occupied
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect();
        match free.len() {
            0 => None,
            1 => Some(free[0]),
            n => Some(free[self.rng.random_range(0..n)]),
        }
    }
}

/// Draw one one-way delay: `base_slots` plus the rounded fluctuation sample,
/// never less than one whole slot. Negative normal draws clamp to zero before
/// the base is added.
pub fn sample_update_delay<R: Rng + ?Sized>(model: &DelayModel, rng: &mut R) -> u64 {
    let fluct = match model.fluctuation {
        Fluctuation::Exponential { mean } => {
            if mean > 0.0 {
                Exp::new(1.0 / mean).expect("positive rate").sample(rng)
            } else {
                0.0
            }
        }
        Fluctuation::Normal { mean, variance } => {
            let draw = Normal::new(mean, variance.sqrt()).expect("valid normal").sample(rng);
            draw.max(0.0)
        }
    };
    (model.base_slots + fluct.round() as u64).max(1)
}

/// Draw one access interval: `base_interval` plus a Poisson(lambda) extra.
pub fn sample_access_interval<R: Rng + ?Sized>(model: &AccessModel, rng: &mut R) -> u64 {
    let extra = if model.lambda > 0.0 {
        Poisson::new(model.lambda).expect("positive lambda").sample(rng) as u64
    } else {
        0
    };
    model.base_interval + extra
}

/// Flatten the state to `[update_ages, ap_aoi, since_access, request_ages,
/// request_aois]` divided by a single normalization constant.
pub fn encode_observation(state: &SystemState, norm: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(observation_len(
        state.update_ages.len(),
        state.request_ages.len(),
    ));
    encode_observation_into(state, norm, &mut out);
    out
}

/// Non-allocating variant for hot loops; clears and refills `out`.
pub fn encode_observation_into(state: &SystemState, norm: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(state.update_ages.iter().map(|&v| v as f64 / norm));
    out.push(state.ap_aoi as f64 / norm);
    out.push(state.since_access as f64 / norm);
    out.extend(state.request_ages.iter().map(|&v| v as f64 / norm));
    out.extend(state.request_aois.iter().map(|&v| v as f64 / norm));
}

/// Observation length for a system with `n` update slots and `m` request slots.
pub fn observation_len(n: usize, m: usize) -> usize {
    n + 2 + 2 * m
}
