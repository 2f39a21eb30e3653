//! Sweep and ablation execution: trains or loads every grid cell, deploys
//! the learned and baseline policies in the three-phase environment, and
//! writes summary tables, raw records, and a manifest.
//!
//! Grid cells are independent and run in parallel; every seed is derived
//! from the experiment master seed and the cell identity, so reruns produce
//! byte-identical outputs regardless of scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use tpaoi_core::agent::{
    self, AgentError, EpisodeStats, GreedyNetPolicy, ObsEncoding, TrainResult,
};
use tpaoi_core::baselines::{self, TabularPolicy};
use tpaoi_core::metrics::RunRecord;
use tpaoi_core::qnet::{self, QNetworkParams};
use tpaoi_core::sim::SimConfig;

use crate::config::{cell_seed, fnv1a64, ExperimentSpec, GridPoint};
use crate::emit;
use crate::stats;
use crate::HarnessError;

pub const POLICY_TPAOI: &str = "tpaoi_agent";
pub const POLICY_CONAOI: &str = "conaoi_agent";
pub const POLICY_QAOI: &str = "qaoi";
pub const POLICY_ADJUSTED: &str = "adjusted_qaoi";

/// One deployed (grid point, replication, policy) result.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub point: GridPoint,
    pub replication: usize,
    pub policy: &'static str,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub record: Option<RunRecord>,
    pub history: Option<Vec<EpisodeStats>>,
    /// Training failure for this cell (the sweep continues).
    pub error: Option<String>,
}

/// Per (grid point, policy) aggregate over replications.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub point: GridPoint,
    pub policy: &'static str,
    pub replications: usize,
    pub mean_tpaoi: f64,
    pub std_tpaoi: f64,
    pub mean_updates: f64,
    pub mean_accesses: f64,
    pub updates_per_access: f64,
    pub mean_episode_reward: f64,
    pub samples: usize,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub spec: ExperimentSpec,
    pub policies: Vec<&'static str>,
    pub cells: Vec<CellOutcome>,
    pub rows: Vec<SummaryRow>,
}

fn qaoi_tables(
    spec: &ExperimentSpec,
    points: &[GridPoint],
) -> Result<BTreeMap<String, TabularPolicy>, HarnessError> {
    let mut tables = BTreeMap::new();
    for point in points {
        let key = format!("{}_{}", point.lambda, point.omega);
        if tables.contains_key(&key) {
            continue;
        }
        let sim = spec.sim_config_for(point);
        let mdp = baselines::build_qaoi_mdp(
            &sim.access_model,
            point.omega,
            spec.baseline.aoi_cap,
            spec.baseline.interval_cap,
        )?;
        let (policy, _) =
            baselines::policy_iteration(&mdp, spec.baseline.gamma, spec.baseline.tolerance)?;
        tables.insert(key, policy);
    }
    Ok(tables)
}

fn train_cache_key(spec: &ExperimentSpec, sim: &SimConfig, role: &str) -> u64 {
    let canonical = format!(
        "{role}|{:?}|{:?}|{:?}|{:?}|{:?}",
        sim,
        spec.train,
        spec.train.hidden,
        spec.train.head_hidden,
        spec.train.obs_norm
    );
    fnv1a64(canonical.as_bytes())
}

/// Train an agent, or reload it from the cache directory if an identical
/// configuration was trained before.
fn train_or_load(
    spec: &ExperimentSpec,
    sim: &SimConfig,
    role: &'static str,
    cache_dir: Option<&Path>,
) -> Result<(QNetworkParams, Vec<EpisodeStats>), AgentError> {
    let key = train_cache_key(spec, sim, role);
    let (ckpt, hist, marker) = match cache_dir {
        Some(dir) => (
            Some(dir.join(format!("{key:016x}.ckpt"))),
            Some(dir.join(format!("{key:016x}.history.csv"))),
            Some(dir.join(format!("{key:016x}.diverged"))),
        ),
        None => (None, None, None),
    };
    if let (Some(ckpt), Some(hist)) = (&ckpt, &hist) {
        if let Some(marker) = &marker {
            if marker.exists() {
                let text = std::fs::read_to_string(marker).unwrap_or_default();
                return Err(AgentError::Diverged {
                    episode: text.trim().parse().unwrap_or(0),
                    step: 0,
                    loss: f64::NAN,
                });
            }
        }
        if ckpt.exists() && hist.exists() {
            if let (Ok(params), Ok(text)) =
                (qnet::load_checkpoint(ckpt), std::fs::read_to_string(hist))
            {
                if let Ok(history) = emit::history_from_csv(&text) {
                    return Ok((params, history));
                }
            }
        }
    }
    let result: Result<TrainResult, AgentError> = match role {
        POLICY_CONAOI => baselines::train_conventional_aoi_agent(
            sim,
            &spec.train_config(),
            &spec.agent_spec(),
        ),
        _ => agent::train(sim, &spec.train_config(), &spec.agent_spec()),
    };
    match result {
        Ok(trained) => {
            if let (Some(ckpt), Some(hist)) = (&ckpt, &hist) {
                let _ = std::fs::create_dir_all(ckpt.parent().unwrap());
                let _ = qnet::save_checkpoint(&trained.params, ckpt);
                let _ = std::fs::write(hist, emit::history_csv(&trained.history));
            }
            Ok((trained.params, trained.history))
        }
        Err(err) => {
            if let (Some(marker), AgentError::Diverged { episode, .. }) = (&marker, &err) {
                let _ = std::fs::create_dir_all(marker.parent().unwrap());
                let _ = std::fs::write(marker, episode.to_string());
            }
            Err(err)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    spec: &ExperimentSpec,
    point: &GridPoint,
    replication: usize,
    policies: &[&'static str],
    qaoi: &BTreeMap<String, TabularPolicy>,
    cache_dir: Option<&Path>,
) -> Vec<CellOutcome> {
    let eval_seed = cell_seed(spec.sim.seed, &spec.name, point, replication, "eval");
    let mut outcomes = Vec::with_capacity(policies.len());
    for &policy_name in policies {
        let train_seed = cell_seed(spec.sim.seed, &spec.name, point, replication, policy_name);
        let mut sim = spec.sim_config_for(point);
        sim.seed = train_seed;
        let mut outcome = CellOutcome {
            point: *point,
            replication,
            policy: policy_name,
            train_seed,
            eval_seed,
            record: None,
            history: None,
            error: None,
        };
        let deployed: Result<RunRecord, String> = match policy_name {
            POLICY_TPAOI | POLICY_CONAOI => {
                match train_or_load(spec, &sim, policy_name, cache_dir) {
                    Ok((params, history)) => {
                        outcome.history = Some(history);
                        let encoding = if policy_name == POLICY_TPAOI {
                            ObsEncoding::Full
                        } else {
                            ObsEncoding::DropAccessClock
                        };
                        let mut greedy =
                            GreedyNetPolicy::new(params, encoding, spec.train.obs_norm);
                        agent::rollout(&mut greedy, &sim, spec.eval_episodes, eval_seed)
                            .map_err(|e| e.to_string())
                    }
                    Err(err) => Err(err.to_string()),
                }
            }
            POLICY_QAOI | POLICY_ADJUSTED => {
                let table = &qaoi[&format!("{}_{}", point.lambda, point.omega)];
                let offset = if policy_name == POLICY_QAOI {
                    0
                } else {
                    spec.baseline.adjusted_offset
                };
                let mut deployed = baselines::adjusted_qaoi_policy(table, offset);
                baselines::deploy_in_tpaoi_env(&mut deployed, &sim, spec.eval_episodes, eval_seed)
                    .map_err(|e| e.to_string())
            }
            other => Err(format!("unknown policy `{other}`")),
        };
        match deployed {
            Ok(record) => outcome.record = Some(record),
            Err(err) => outcome.error = Some(err),
        }
        outcomes.push(outcome);
    }
    outcomes
}

fn aggregate(
    points: &[GridPoint],
    policies: &[&'static str],
    cells: &[CellOutcome],
) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for point in points {
        for &policy in policies {
            let records: Vec<&RunRecord> = cells
                .iter()
                .filter(|c| c.point == *point && c.policy == policy)
                .filter_map(|c| c.record.as_ref())
                .collect();
            let tpaois: Vec<f64> =
                records.iter().filter_map(|r| r.mean_tpaoi()).collect();
            let updates: Vec<f64> = records.iter().map(|r| r.update_count as f64).collect();
            let accesses: Vec<f64> = records.iter().map(|r| r.access_count as f64).collect();
            let upd_per_acc: Vec<f64> =
                records.iter().filter_map(|r| r.updates_per_access()).collect();
            let rewards: Vec<f64> = records
                .iter()
                .map(|r| stats::mean(&r.reward_per_episode))
                .collect();
            rows.push(SummaryRow {
                point: *point,
                policy,
                replications: records.len(),
                mean_tpaoi: stats::mean(&tpaois),
                std_tpaoi: stats::std_dev(&tpaois),
                mean_updates: stats::mean(&updates),
                mean_accesses: stats::mean(&accesses),
                updates_per_access: stats::mean(&upd_per_acc),
                mean_episode_reward: stats::mean(&rewards),
                samples: records.iter().map(|r| r.tpaoi_samples.len()).sum(),
            });
        }
    }
    rows
}

/// Run a sweep over the given grid for the given policies. Pure compute; the
/// caller decides whether to write files.
pub fn run_sweep(
    spec: &ExperimentSpec,
    points: &[GridPoint],
    policies: &[&'static str],
    cache_dir: Option<&Path>,
) -> Result<SweepOutput, HarnessError> {
    let qaoi = qaoi_tables(spec, points)?;
    let tasks: Vec<(GridPoint, usize)> = points
        .iter()
        .flat_map(|p| (0..spec.replications).map(move |r| (*p, r)))
        .collect();
    let cells: Vec<CellOutcome> = tasks
        .par_iter()
        .flat_map(|(point, rep)| run_cell(spec, point, *rep, policies, &qaoi, cache_dir))
        .collect();
    let rows = aggregate(points, policies, &cells);
    Ok(SweepOutput { spec: spec.clone(), policies: policies.to_vec(), cells, rows })
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "lambda,omega,n_updates,delay,policy,replications,mean_tpaoi,std_tpaoi,mean_updates,mean_accesses,updates_per_access,mean_episode_reward,samples\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:?},{:?},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.point.lambda,
            r.point.omega,
            r.point.n_updates,
            r.point.delay.label(),
            r.policy,
            r.replications,
            r.mean_tpaoi,
            r.std_tpaoi,
            r.mean_updates,
            r.mean_accesses,
            r.updates_per_access,
            r.mean_episode_reward,
            r.samples
        );
    }
    out
}

#[derive(Serialize)]
struct ManifestCell {
    point: String,
    replication: usize,
    policy: &'static str,
    train_seed: u64,
    eval_seed: u64,
    diverged: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'a str,
    config_hash: String,
    policies: &'a [&'static str],
    spec: &'a ExperimentSpec,
    cells: Vec<ManifestCell>,
}

pub fn config_hash(spec: &ExperimentSpec) -> String {
    let canonical = toml::to_string(spec).unwrap_or_default();
    format!("{:016x}", fnv1a64(canonical.as_bytes()))
}

fn manifest_json(output: &SweepOutput) -> Result<String, HarnessError> {
    let manifest = Manifest {
        name: &output.spec.name,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config_hash(&output.spec),
        policies: &output.policies,
        spec: &output.spec,
        cells: output
            .cells
            .iter()
            .map(|c| ManifestCell {
                point: c.point.key(),
                replication: c.replication,
                policy: c.policy,
                train_seed: c.train_seed,
                eval_seed: c.eval_seed,
                diverged: c.error.is_some(),
                error: c.error.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Output(e.to_string()))
}

/// Write summary, manifest, and raw per-cell records under the output
/// directory.
pub fn write_sweep_output(output: &SweepOutput, dir: &Path) -> Result<(), HarnessError> {
    emit::write_file(&dir.join("summary.csv"), &summary_csv(&output.rows))?;
    emit::write_file(&dir.join("manifest.json"), &manifest_json(output)?)?;
    for cell in &output.cells {
        let cell_dir = dir
            .join("cells")
            .join(cell.point.key())
            .join(format!("rep{}", cell.replication))
            .join(cell.policy);
        if let Some(record) = &cell.record {
            emit::write_run_record(&cell_dir, record)?;
        }
        if let Some(history) = &cell.history {
            emit::write_file(&cell_dir.join("history.csv"), &emit::history_csv(history))?;
        }
        if let Some(error) = &cell.error {
            emit::write_file(&cell_dir.join("error.txt"), error)?;
        }
    }
    Ok(())
}

/// The comparison experiment: all four policies across the lambda grid.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<SweepOutput, HarnessError> {
    let out_dir = PathBuf::from(&spec.output_dir);
    let cache = out_dir.join("cache");
    let points = spec.grid_points();
    let policies = [POLICY_TPAOI, POLICY_CONAOI, POLICY_QAOI, POLICY_ADJUSTED];
    let output = run_sweep(spec, &points, &policies, Some(&cache))?;
    write_sweep_output(&output, &out_dir)?;
    Ok(output)
}

fn trend_stats_csv(rows: &[SummaryRow], knob: &str, knob_of: impl Fn(&GridPoint) -> f64) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| knob_of(&r.point)).collect();
    let tpaoi: Vec<f64> = rows.iter().map(|r| r.mean_tpaoi).collect();
    let upd: Vec<f64> = rows.iter().map(|r| r.updates_per_access).collect();
    let mut out = String::from("metric,knob,spearman_rho\n");
    if xs.len() >= 2 {
        let _ = writeln!(out, "mean_tpaoi,{knob},{:?}", stats::spearman(&xs, &tpaoi));
        let _ = writeln!(out, "updates_per_access,{knob},{:?}", stats::spearman(&xs, &upd));
    }
    out
}

/// Transmission-cost ablation: sweep omega at fixed lambda, learned agent
/// only, reporting the updates-per-access ratio and trend statistics.
pub fn run_ablation_omega(spec: &ExperimentSpec) -> Result<SweepOutput, HarnessError> {
    let mut ablation = spec.clone();
    if ablation.omegas.len() < 2 {
        ablation.omegas = vec![0.1, 0.4, 0.7, 1.0];
    }
    ablation.lambdas = vec![spec.sim.lambda];
    ablation.n_values = vec![spec.sim.n_updates_max];
    let out_dir = PathBuf::from(&ablation.output_dir);
    let cache = out_dir.join("cache");
    let points = ablation.grid_points();
    let output = run_sweep(&ablation, &points, &[POLICY_TPAOI], Some(&cache))?;
    write_sweep_output(&output, &out_dir)?;
    emit::write_file(
        &out_dir.join("trend_stats.csv"),
        &trend_stats_csv(&output.rows, "omega", |p| p.omega),
    )?;
    Ok(output)
}

/// Concurrency ablation: sweep the in-flight update cap at fixed omega.
pub fn run_ablation_concurrency(spec: &ExperimentSpec) -> Result<SweepOutput, HarnessError> {
    let mut ablation = spec.clone();
    if ablation.n_values.len() < 2 {
        ablation.n_values = vec![1, 2, 4];
    }
    ablation.lambdas = vec![spec.sim.lambda];
    ablation.omegas = vec![spec.sim.omega];
    let out_dir = PathBuf::from(&ablation.output_dir);
    let cache = out_dir.join("cache");
    let points = ablation.grid_points();
    let output = run_sweep(&ablation, &points, &[POLICY_TPAOI], Some(&cache))?;
    write_sweep_output(&output, &out_dir)?;
    emit::write_file(
        &out_dir.join("trend_stats.csv"),
        &trend_stats_csv(&output.rows, "n_updates", |p| p.n_updates as f64),
    )?;
    Ok(output)
}

/// Train one agent at the base grid point and write its checkpoint, history,
/// and manifest.
pub fn train_single(spec: &ExperimentSpec, out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let point = GridPoint {
        lambda: spec.sim.lambda,
        omega: spec.sim.omega,
        n_updates: spec.sim.n_updates_max,
        delay: spec.delay,
    };
    let mut sim = spec.sim_config_for(&point);
    sim.seed = cell_seed(spec.sim.seed, &spec.name, &point, 0, POLICY_TPAOI);
    let trained = agent::train(&sim, &spec.train_config(), &spec.agent_spec())?;
    let ckpt = out_dir.join("checkpoint.txt");
    std::fs::create_dir_all(out_dir)?;
    qnet::save_checkpoint(&trained.params, &ckpt)?;
    emit::write_file(&out_dir.join("history.csv"), &emit::history_csv(&trained.history))?;
    emit::write_file(
        &out_dir.join("curve.csv"),
        &emit::learning_curve_csv(&trained.history)?,
    )?;
    let output = SweepOutput {
        spec: spec.clone(),
        policies: vec![POLICY_TPAOI],
        cells: vec![CellOutcome {
            point,
            replication: 0,
            policy: POLICY_TPAOI,
            train_seed: sim.seed,
            eval_seed: 0,
            record: None,
            history: Some(trained.history),
            error: None,
        }],
        rows: vec![],
    };
    emit::write_file(&out_dir.join("manifest.json"), &manifest_json(&output)?)?;
    Ok(ckpt)
}

/// Deploy a checkpoint greedily at the base grid point and write its record.
pub fn evaluate_single(
    spec: &ExperimentSpec,
    checkpoint: &Path,
    episodes: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<RunRecord, HarnessError> {
    let params = qnet::load_checkpoint(checkpoint)?;
    let point = GridPoint {
        lambda: spec.sim.lambda,
        omega: spec.sim.omega,
        n_updates: spec.sim.n_updates_max,
        delay: spec.delay,
    };
    let sim = spec.sim_config_for(&point);
    let encoding = if params.input_dim()
        == ObsEncoding::DropAccessClock.len(sim.n_updates_max, sim.m_requests_max)
    {
        ObsEncoding::DropAccessClock
    } else {
        ObsEncoding::Full
    };
    let mut policy = GreedyNetPolicy::new(params, encoding, spec.train.obs_norm);
    let (record, traces) = agent::rollout_traced(&mut policy, &sim, episodes, seed)?;
    emit::write_run_record(out_dir, &record)?;
    // The raw event log, one block per episode.
    let mut log = String::new();
    for (i, trace) in traces.iter().enumerate() {
        let _ = writeln!(log, "# episode {i}");
        log.push_str(&tpaoi_core::trace::write_trace(trace));
    }
    emit::write_file(&out_dir.join("trace.log"), &log)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentToml;

    fn tiny_spec(name: &str, dir: &Path) -> ExperimentSpec {
        let toml_text = format!(
            r#"
name = "{name}"
output_dir = "{}"
replications = 1

[sweep]
lambdas = [1.0]

[sim]
episode_slots = 60
seed = 5

[train]
episodes = 2
batch_size = 8
warmup = 8
hidden = [8]
head_hidden = 4

[eval]
episodes = 2
"#,
            dir.display()
        );
        let raw: ExperimentToml = toml::from_str(&toml_text).unwrap();
        ExperimentSpec::resolve(raw).unwrap()
    }

    #[test]
    fn sweep_produces_rows_for_every_policy_and_reruns_identically() {
        let tmp = std::env::temp_dir().join(format!("tpaoi-sweep-{}", std::process::id()));
        let spec = tiny_spec("tiny", &tmp.join("a"));
        let output = run_experiment(&spec).unwrap();
        assert_eq!(output.rows.len(), 4);
        for row in &output.rows {
            assert_eq!(row.replications, 1, "policy {} diverged", row.policy);
            assert!(row.mean_accesses > 0.0);
        }
        let first = std::fs::read_to_string(tmp.join("a").join("summary.csv")).unwrap();

        let spec_b = tiny_spec("tiny", &tmp.join("b"));
        run_experiment(&spec_b).unwrap();
        let second = std::fs::read_to_string(tmp.join("b").join("summary.csv")).unwrap();
        assert_eq!(first, second, "rerun should be byte-identical");

        // Cached rerun into the same directory is also identical.
        run_experiment(&spec).unwrap();
        let third = std::fs::read_to_string(tmp.join("a").join("summary.csv")).unwrap();
        assert_eq!(first, third, "cache hit should not change results");

        let manifest = std::fs::read_to_string(tmp.join("a").join("manifest.json")).unwrap();
        assert!(manifest.contains("config_hash"));
        assert!(manifest.contains("tpaoi_agent"));
        let _ = std::fs::remove_dir_all(&tmp);
    }

    #[test]
    fn empty_grid_writes_manifest_and_no_rows() {
        let tmp = std::env::temp_dir().join(format!("tpaoi-empty-{}", std::process::id()));
        let mut spec = tiny_spec("empty", &tmp);
        spec.lambdas = vec![];
        let output = run_experiment(&spec).unwrap();
        assert!(output.rows.is_empty());
        let summary = std::fs::read_to_string(tmp.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1, "header only");
        assert!(tmp.join("manifest.json").exists());
        let _ = std::fs::remove_dir_all(&tmp);
    }

    #[test]
    fn summary_rows_recompute_from_raw_records() {
        let tmp = std::env::temp_dir().join(format!("tpaoi-recompute-{}", std::process::id()));
        let spec = tiny_spec("recompute", &tmp);
        let output = run_experiment(&spec).unwrap();
        for row in &output.rows {
            let records: Vec<&RunRecord> = output
                .cells
                .iter()
                .filter(|c| c.policy == row.policy)
                .filter_map(|c| c.record.as_ref())
                .collect();
            let tpaois: Vec<f64> = records.iter().filter_map(|r| r.mean_tpaoi()).collect();
            assert_eq!(row.mean_tpaoi, stats::mean(&tpaois));
            let updates: Vec<f64> = records.iter().map(|r| r.update_count as f64).collect();
            assert_eq!(row.mean_updates, stats::mean(&updates));
        }
        let _ = std::fs::remove_dir_all(&tmp);
    }

    #[test]
    fn ablations_write_trend_stats() {
        let tmp = std::env::temp_dir().join(format!("tpaoi-abl-{}", std::process::id()));
        let mut spec = tiny_spec("abl", &tmp);
        spec.omegas = vec![0.1, 1.0];
        let output = run_ablation_omega(&spec).unwrap();
        assert_eq!(output.rows.len(), 2);
        let trend = std::fs::read_to_string(tmp.join("trend_stats.csv")).unwrap();
        assert!(trend.lines().count() >= 3);
        assert!(trend.contains("mean_tpaoi,omega"));
        let _ = std::fs::remove_dir_all(&tmp);
    }

    #[test]
    fn train_and_evaluate_single_round_trip() {
        let tmp = std::env::temp_dir().join(format!("tpaoi-single-{}", std::process::id()));
        let spec = tiny_spec("single", &tmp);
        let ckpt = train_single(&spec, &tmp.join("train")).unwrap();
        assert!(ckpt.exists());
        assert!(tmp.join("train").join("curve.csv").exists());
        let record =
            evaluate_single(&spec, &ckpt, 2, 11, &tmp.join("eval")).unwrap();
        assert!(record.access_count > 0);
        let again = evaluate_single(&spec, &ckpt, 2, 11, &tmp.join("eval2")).unwrap();
        assert_eq!(record, again);
        let _ = std::fs::remove_dir_all(&tmp);
    }
}
