//! CSV emission. Every file has a header row; floats are printed with
//! shortest round-trip formatting so reruns produce byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tpaoi_core::agent::EpisodeStats;
use tpaoi_core::metrics::{self, HistogramScaling, RunRecord};

use crate::HarnessError;

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Training history rows: `episode,total_reward,epsilon,mean_loss`.
pub fn history_csv(history: &[EpisodeStats]) -> String {
    let mut out = String::from("episode,total_reward,epsilon,mean_loss\n");
    for row in history {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?}",
            row.episode, row.total_reward, row.epsilon, row.mean_loss
        );
    }
    out
}

pub fn history_from_csv(text: &str) -> Result<Vec<EpisodeStats>, HarnessError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(HarnessError::Output(format!("history line {}: expected 4 fields", i + 1)));
        }
        let parse = |s: &str| -> Result<f64, HarnessError> {
            s.trim().parse().map_err(|e| HarnessError::Output(format!("history line {}: {e}", i + 1)))
        };
        rows.push(EpisodeStats {
            episode: parse(fields[0])? as usize,
            total_reward: parse(fields[1])?,
            epsilon: parse(fields[2])?,
            mean_loss: parse(fields[3])?,
        });
    }
    Ok(rows)
}

/// Learning-curve rows: `episode,reward,moving_avg_100`.
pub fn learning_curve_csv(history: &[EpisodeStats]) -> Result<String, HarnessError> {
    if history.is_empty() {
        return Err(HarnessError::Output("empty training history".into()));
    }
    let rewards: Vec<f64> = history.iter().map(|h| h.total_reward).collect();
    let ma = metrics::moving_average(&rewards, 100);
    let mut out = String::from("episode,reward,moving_avg_100\n");
    for (row, avg) in history.iter().zip(&ma) {
        let _ = writeln!(out, "{},{:?},{:?}", row.episode, row.total_reward, avg);
    }
    Ok(out)
}

/// Scaled interval/age frequency rows: `interval,aoi,scaled_freq`.
pub fn interval_aoi_csv(
    record: &RunRecord,
    scaling: HistogramScaling,
) -> Result<String, HarnessError> {
    let cells = metrics::interval_aoi_histogram(&record.interval_aoi_pairs, scaling)
        .map_err(|e| HarnessError::Output(e.to_string()))?;
    let mut out = String::from("interval,aoi,scaled_freq\n");
    for cell in cells {
        let _ = writeln!(out, "{},{},{:?}", cell.interval, cell.aoi, cell.scaled);
    }
    Ok(out)
}

/// Write one run record as a small directory of CSVs.
pub fn write_run_record(dir: &Path, record: &RunRecord) -> Result<(), HarnessError> {
    let mut meta = String::from("tpaoi_samples,update_count,access_count,episodes,mean_tpaoi\n");
    let mean = record.mean_tpaoi().unwrap_or(f64::NAN);
    let _ = writeln!(
        meta,
        "{},{},{},{},{:?}",
        record.tpaoi_samples.len(),
        record.update_count,
        record.access_count,
        record.reward_per_episode.len(),
        mean
    );
    write_file(&dir.join("record_meta.csv"), &meta)?;

    let mut tpaoi = String::from("tpaoi\n");
    for v in &record.tpaoi_samples {
        let _ = writeln!(tpaoi, "{v:?}");
    }
    write_file(&dir.join("tpaoi.csv"), &tpaoi)?;

    let mut pairs = String::from("interval,aoi\n");
    for &(interval, aoi) in &record.interval_aoi_pairs {
        let _ = writeln!(pairs, "{interval},{aoi}");
    }
    write_file(&dir.join("pairs.csv"), &pairs)?;

    let mut rewards = String::from("episode,total_reward\n");
    for (i, r) in record.reward_per_episode.iter().enumerate() {
        let _ = writeln!(rewards, "{i},{r:?}");
    }
    write_file(&dir.join("rewards.csv"), &rewards)?;
    Ok(())
}

/// Read back the pairs file written by `write_run_record`.
pub fn pairs_from_csv(text: &str) -> Result<Vec<(u64, u64)>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let interval = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| HarnessError::Output(format!("pairs line {}: bad interval", i + 1)))?;
        let aoi = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| HarnessError::Output(format!("pairs line {}: bad aoi", i + 1)))?;
        out.push((interval, aoi));
    }
    Ok(out)
}
