//! Experiment configuration: a single TOML file per experiment with every
//! unset field filled from a scale profile, and the fully resolved values
//! echoed into the output manifest.

use serde::{Deserialize, Serialize};

use tpaoi_core::agent::{AgentSpec, TrainConfig};
use tpaoi_core::sim::{AccessModel, DelayModel, Fluctuation, SimConfig};

use crate::HarnessError;

/// Which delay fluctuation family the sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayTag {
    Exp,
    Normal,
}

impl DelayTag {
    pub fn fluctuation(self) -> Fluctuation {
        match self {
            DelayTag::Exp => Fluctuation::Exponential { mean: 1.0 },
            DelayTag::Normal => Fluctuation::Normal { mean: 1.0, variance: 1.0 },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DelayTag::Exp => "exp",
            DelayTag::Normal => "normal",
        }
    }
}

/// Runtime/size profile. Desk keeps the whole acceptance suite around an
/// hour on a laptop; full uses the original experiment scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepToml {
    pub lambdas: Option<Vec<f64>>,
    pub omegas: Option<Vec<f64>>,
    pub n_values: Option<Vec<usize>>,
    pub delay: Option<DelayTag>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimToml {
    pub n_updates_max: Option<usize>,
    pub m_requests_max: Option<usize>,
    pub omega: Option<f64>,
    pub base_slots: Option<u64>,
    pub base_interval: Option<u64>,
    pub lambda: Option<f64>,
    pub episode_slots: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainToml {
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    pub eta_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub train_interval: Option<u64>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub epsilon_decay: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub episodes: Option<usize>,
    pub warmup: Option<usize>,
    pub replay_capacity: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub head_hidden: Option<usize>,
    pub obs_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalToml {
    pub episodes: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BaselineToml {
    pub aoi_cap: Option<u64>,
    pub interval_cap: Option<u64>,
    pub gamma: Option<f64>,
    pub tolerance: Option<f64>,
    pub adjusted_offset: Option<u64>,
}

/// The on-disk experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentToml {
    pub name: String,
    pub output_dir: Option<String>,
    pub scale: Option<Scale>,
    pub replications: Option<usize>,
    #[serde(default)]
    pub sweep: SweepToml,
    #[serde(default)]
    pub sim: SimToml,
    #[serde(default)]
    pub train: TrainToml,
    #[serde(default)]
    pub eval: EvalToml,
    #[serde(default)]
    pub baseline: BaselineToml,
}

/// Fully resolved experiment: every field concrete, serialized verbatim into
/// the manifest so reruns are comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub output_dir: String,
    pub scale: Scale,
    pub replications: usize,
    pub lambdas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub n_values: Vec<usize>,
    pub delay: DelayTag,
    pub sim: ResolvedSim,
    pub train: ResolvedTrain,
    pub eval_episodes: usize,
    pub baseline: ResolvedBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSim {
    pub n_updates_max: usize,
    pub m_requests_max: usize,
    pub omega: f64,
    pub base_slots: u64,
    pub base_interval: u64,
    pub lambda: f64,
    pub episode_slots: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTrain {
    pub gamma: f64,
    pub eta: f64,
    pub eta_decay: f64,
    pub batch_size: usize,
    pub train_interval: u64,
    pub tau: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub episodes: usize,
    pub warmup: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub head_hidden: usize,
    pub obs_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBaseline {
    pub aoi_cap: u64,
    pub interval_cap: u64,
    pub gamma: f64,
    pub tolerance: f64,
    pub adjusted_offset: u64,
}

impl ExperimentSpec {
    /// Desk-scale training profile: small network and a hot learning rate,
    /// calibrated so 1500 episodes converge on a laptop.
    pub fn desk_train() -> ResolvedTrain {
        ResolvedTrain {
            gamma: 0.98,
            eta: 0.003,
            eta_decay: 0.9985,
            batch_size: 128,
            train_interval: 4,
            tau: 0.001,
            epsilon: 1.0,
            epsilon_decay: 0.98,
            epsilon_min: 0.01,
            episodes: 1500,
            warmup: 128,
            replay_capacity: 50_000,
            hidden: vec![32, 32],
            head_hidden: 16,
            obs_norm: 25.0,
        }
    }

    /// Full-scale profile: the original hyperparameters and network width.
    pub fn full_train() -> ResolvedTrain {
        ResolvedTrain {
            gamma: 0.995,
            eta: 0.0002,
            eta_decay: 1.0,
            batch_size: 128,
            train_interval: 4,
            tau: 0.001,
            epsilon: 1.0,
            epsilon_decay: 0.98,
            epsilon_min: 0.01,
            episodes: 5000,
            warmup: 128,
            replay_capacity: 50_000,
            hidden: vec![128, 512, 256],
            head_hidden: 128,
            obs_norm: 50.0,
        }
    }

    pub fn resolve(raw: ExperimentToml) -> Result<ExperimentSpec, HarnessError> {
        let scale = raw.scale.unwrap_or_default();
        let base_train = match scale {
            Scale::Desk => Self::desk_train(),
            Scale::Full => Self::full_train(),
        };
        let t = raw.train;
        let train = ResolvedTrain {
            gamma: t.gamma.unwrap_or(base_train.gamma),
            eta: t.eta.unwrap_or(base_train.eta),
            eta_decay: t.eta_decay.unwrap_or(base_train.eta_decay),
            batch_size: t.batch_size.unwrap_or(base_train.batch_size),
            train_interval: t.train_interval.unwrap_or(base_train.train_interval),
            tau: t.tau.unwrap_or(base_train.tau),
            epsilon: t.epsilon.unwrap_or(base_train.epsilon),
            epsilon_decay: t.epsilon_decay.unwrap_or(base_train.epsilon_decay),
            epsilon_min: t.epsilon_min.unwrap_or(base_train.epsilon_min),
            episodes: t.episodes.unwrap_or(base_train.episodes),
            warmup: t.warmup.unwrap_or(base_train.warmup),
            replay_capacity: t.replay_capacity.unwrap_or(base_train.replay_capacity),
            hidden: t.hidden.unwrap_or(base_train.hidden),
            head_hidden: t.head_hidden.unwrap_or(base_train.head_hidden),
            obs_norm: t.obs_norm.unwrap_or(base_train.obs_norm),
        };
        let s = raw.sim;
        let sim = ResolvedSim {
            n_updates_max: s.n_updates_max.unwrap_or(2),
            m_requests_max: s.m_requests_max.unwrap_or(1),
            omega: s.omega.unwrap_or(1.0),
            base_slots: s.base_slots.unwrap_or(5),
            base_interval: s.base_interval.unwrap_or(20),
            lambda: s.lambda.unwrap_or(1.0),
            episode_slots: s.episode_slots.unwrap_or(400),
            seed: s.seed.unwrap_or(7),
        };
        let b = raw.baseline;
        let baseline = ResolvedBaseline {
            aoi_cap: b.aoi_cap.unwrap_or(100),
            interval_cap: b.interval_cap.unwrap_or(60),
            gamma: b.gamma.unwrap_or(0.995),
            tolerance: b.tolerance.unwrap_or(1e-9),
            adjusted_offset: b.adjusted_offset.unwrap_or(12),
        };
        let (default_lambdas, default_eval, default_reps) = match scale {
            Scale::Desk => (vec![0.1, 0.3, 0.5, 0.7, 1.0], 50, 3),
            Scale::Full => (
                vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
                100,
                3,
            ),
        };
        let spec = ExperimentSpec {
            output_dir: raw.output_dir.unwrap_or_else(|| format!("out/{}", raw.name)),
            name: raw.name,
            scale,
            replications: raw.replications.unwrap_or(default_reps),
            lambdas: raw.sweep.lambdas.unwrap_or(default_lambdas),
            omegas: raw.sweep.omegas.unwrap_or_else(|| vec![sim.omega]),
            n_values: raw.sweep.n_values.unwrap_or_else(|| vec![sim.n_updates_max]),
            delay: raw.sweep.delay.unwrap_or(DelayTag::Exp),
            sim,
            train,
            eval_episodes: raw.eval.episodes.unwrap_or(default_eval),
            baseline,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentSpec, HarnessError> {
        let raw: ExperimentToml =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::Config("eval episodes must be >= 1".into()));
        }
        for &l in &self.lambdas {
            if !(l >= 0.0) {
                return Err(HarnessError::Config(format!("lambda must be >= 0, got {l}")));
            }
        }
        for &o in &self.omegas {
            if !(o >= 0.0) {
                return Err(HarnessError::Config(format!("omega must be >= 0, got {o}")));
            }
        }
        for &n in &self.n_values {
            if n == 0 {
                return Err(HarnessError::Config("n_values entries must be >= 1".into()));
            }
        }
        // Grid points must form valid simulator configs.
        for point in self.grid_points() {
            self.sim_config_for(&point)
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// One grid point of the sweep.
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for &lambda in &self.lambdas {
            for &omega in &self.omegas {
                for &n in &self.n_values {
                    points.push(GridPoint { lambda, omega, n_updates: n, delay: self.delay });
                }
            }
        }
        points
    }

    pub fn sim_config_for(&self, point: &GridPoint) -> SimConfig {
        SimConfig {
            n_updates_max: point.n_updates,
            m_requests_max: self.sim.m_requests_max,
            omega: point.omega,
            delay_model: DelayModel {
                base_slots: self.sim.base_slots,
                fluctuation: point.delay.fluctuation(),
            },
            access_model: AccessModel {
                base_interval: self.sim.base_interval,
                lambda: point.lambda,
            },
            episode_slots: self.sim.episode_slots,
            seed: self.sim.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.train.gamma,
            eta: self.train.eta,
            eta_decay: self.train.eta_decay,
            batch_size: self.train.batch_size,
            train_interval: self.train.train_interval,
            tau: self.train.tau,
            epsilon: self.train.epsilon,
            epsilon_decay: self.train.epsilon_decay,
            epsilon_min: self.train.epsilon_min,
            episodes: self.train.episodes,
            warmup: self.train.warmup,
            replay_capacity: self.train.replay_capacity,
        }
    }

    pub fn agent_spec(&self) -> AgentSpec {
        AgentSpec {
            hidden: self.train.hidden.clone(),
            head_hidden: self.train.head_hidden,
            obs_norm: self.train.obs_norm,
        }
    }
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub omega: f64,
    pub n_updates: usize,
    pub delay: DelayTag,
}

impl GridPoint {
    /// Stable key used in file paths and seed derivation.
    pub fn key(&self) -> String {
        format!(
            "lam{}_om{}_n{}_{}",
            self.lambda,
            self.omega,
            self.n_updates,
            self.delay.label()
        )
    }
}

/// 64-bit FNV-1a over a byte string; used for config hashes and derived
/// seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic per-cell seed from the experiment master seed and the cell
/// identity.
pub fn cell_seed(master: u64, experiment: &str, point: &GridPoint, replication: usize, role: &str) -> u64 {
    fnv1a64(format!("{master}|{experiment}|{}|rep{replication}|{role}", point.key()).as_bytes())
}
