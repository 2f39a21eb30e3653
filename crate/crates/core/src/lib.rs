//! Desk-scale laboratory for freshness-aware status updating at the network
//! edge: a seeded time-slotted simulator of the update/access/request loop,
//! age-of-information metrics, a dueling double-DQN agent that learns when
//! to push updates, and the baseline policies it is compared against.

pub mod agent;
pub mod baselines;
pub mod metrics;
pub mod qnet;
pub mod sim;
pub mod trace;
