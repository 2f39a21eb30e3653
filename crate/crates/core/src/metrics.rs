//! Pure age-of-information accounting over event traces: the per-slot AP age
//! series, the per-request three-phase age, long-run averages, and the
//! interval/age frequency table.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::trace::Event;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("no data")]
    EmptyData,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Everything a deployment run produces, pooled across its episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    /// Carried age of every request that reached the service.
    pub tpaoi_samples: Vec<f64>,
    pub update_count: u64,
    pub access_count: u64,
    pub reward_per_episode: Vec<f64>,
    /// Per-slot (slots-since-access, AP age) pairs.
    pub interval_aoi_pairs: Vec<(u64, u64)>,
}

impl RunRecord {
    pub fn mean_tpaoi(&self) -> Option<f64> {
        if self.tpaoi_samples.is_empty() {
            None
        } else {
            Some(self.tpaoi_samples.iter().sum::<f64>() / self.tpaoi_samples.len() as f64)
        }
    }

    /// Transmissions divided by user visits.
    pub fn updates_per_access(&self) -> Option<f64> {
        if self.access_count == 0 {
            None
        } else {
            Some(self.update_count as f64 / self.access_count as f64)
        }
    }

    pub fn merge(&mut self, other: RunRecord) {
        self.tpaoi_samples.extend(other.tpaoi_samples);
        self.update_count += other.update_count;
        self.access_count += other.access_count;
        self.reward_per_episode.extend(other.reward_per_episode);
        self.interval_aoi_pairs.extend(other.interval_aoi_pairs);
    }
}

fn validate_trace(trace: &[Event]) -> Result<(), MetricsError> {
    let mut last_slot = 0u64;
    for ev in trace {
        if ev.slot() < last_slot {
            return Err(MetricsError::MalformedTrace(format!(
                "slots must be nondecreasing, saw {} after {}",
                ev.slot(),
                last_slot
            )));
        }
        last_slot = ev.slot();
        match *ev {
            Event::UpdateArrived { slot, send_slot, .. } => {
                let sent = trace.iter().any(|e| matches!(*e, Event::UpdateSent { slot: s } if s == send_slot && s <= slot));
                if !sent {
                    return Err(MetricsError::MalformedTrace(format!(
                        "update arrival at {slot} has no matching send at {send_slot}"
                    )));
                }
            }
            Event::RequestArrived { slot, access_slot, .. } => {
                let accessed = trace.iter().any(|e| matches!(*e, Event::UserAccessed { slot: s, launched: true, .. } if s == access_slot && s <= slot));
                if !accessed {
                    return Err(MetricsError::MalformedTrace(format!(
                        "request arrival at {slot} has no matching access at {access_slot}"
                    )));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// AP age for slots `1..=horizon` via the slot recursion: grow by one per
/// slot, reset to the transit time on an update arrival. The age at slot 0
/// is 0.
pub fn conventional_aoi_series(trace: &[Event], horizon: u64) -> Result<Vec<u64>, MetricsError> {
    validate_trace(trace)?;
    let mut arrivals: BTreeMap<u64, u64> = BTreeMap::new();
    for ev in trace {
        if let Event::UpdateArrived { slot, send_slot, transit } = *ev {
            if slot.saturating_sub(send_slot) != transit {
                return Err(MetricsError::MalformedTrace(format!(
                    "arrival at {slot} claims transit {transit} but was sent at {send_slot}"
                )));
            }
            // If several updates land on one slot, the freshest wins.
            let e = arrivals.entry(slot).or_insert(transit);
            *e = (*e).min(transit);
        }
    }
    let mut series = Vec::with_capacity(horizon as usize);
    let mut age = 0u64;
    for t in 1..=horizon {
        age = match arrivals.get(&t) {
            Some(&transit) => transit,
            None => age + 1,
        };
        series.push(age);
    }
    Ok(series)
}

/// Age carried by one request at delivery, from its four timeline points.
/// Equal to `q_arrive - u_send`: update transit, plus wait until the access,
/// plus request transit.
pub fn tpaoi_of_request(
    u_send: u64,
    u_arrive: u64,
    q_access: u64,
    q_arrive: u64,
) -> Result<u64, MetricsError> {
    if !(u_send <= u_arrive && u_arrive <= q_access && q_access <= q_arrive) {
        return Err(MetricsError::InvalidArgument(format!(
            "expected u_send <= u_arrive <= q_access <= q_arrive, got ({u_send}, {u_arrive}, {q_access}, {q_arrive})"
        )));
    }
    Ok((u_arrive - u_send) + (q_access - u_arrive) + (q_arrive - q_access))
}

/// Mean carried age over every delivered request in the given records.
pub fn long_run_average_tpaoi(records: &[RunRecord]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in records {
        sum += r.tpaoi_samples.iter().sum::<f64>();
        count += r.tpaoi_samples.len();
    }
    if count == 0 {
        return Err(MetricsError::EmptyData);
    }
    Ok(sum / count as f64)
}

/// How histogram counts are scaled into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistogramScaling {
    /// Divide every count by the single largest cell count.
    #[default]
    GlobalMax,
    /// Divide each count by the largest count in its interval column.
    ColumnMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramCell {
    pub interval: u64,
    pub aoi: u64,
    pub count: u64,
    pub scaled: f64,
}

/// Frequency table of (slots-since-access, AP age) pairs with counts scaled
/// into [0, 1]. Cells come back sorted by interval then age.
pub fn interval_aoi_histogram(
    pairs: &[(u64, u64)],
    scaling: HistogramScaling,
) -> Result<Vec<HistogramCell>, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyData);
    }
    let mut counts: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    for &(interval, aoi) in pairs {
        *counts.entry((interval, aoi)).or_insert(0) += 1;
    }
    let global_max = counts.values().copied().max().unwrap_or(1);
    let mut column_max: BTreeMap<u64, u64> = BTreeMap::new();
    for (&(interval, _), &c) in &counts {
        let e = column_max.entry(interval).or_insert(0);
        *e = (*e).max(c);
    }
    Ok(counts
        .into_iter()
        .map(|((interval, aoi), count)| {
            let denom = match scaling {
                HistogramScaling::GlobalMax => global_max,
                HistogramScaling::ColumnMax => column_max[&interval],
            };
            HistogramCell { interval, aoi, count, scaled: count as f64 / denom as f64 }
        })
        .collect())
}

/// Trailing mean with the window clipped at the start of the series.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        let len = (i + 1).min(window);
        out.push(sum / len as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aoi_series_grows_linearly_without_arrivals() {
        let series = conventional_aoi_series(&[], 5).unwrap();
        assert_eq!(series, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn aoi_series_resets_to_transit_on_arrival() {
        let trace = vec![
            Event::UpdateSent { slot: 2 },
            Event::UpdateArrived { slot: 6, send_slot: 2, transit: 4 },
        ];
        let series = conventional_aoi_series(&trace, 8).unwrap();
        assert_eq!(series, vec![1, 2, 3, 4, 5, 4, 5, 6]);
    }

    #[test]
    fn aoi_series_rejects_unmatched_arrival() {
        let trace = vec![Event::UpdateArrived { slot: 6, send_slot: 2, transit: 4 }];
        assert!(matches!(
            conventional_aoi_series(&trace, 8),
            Err(MetricsError::MalformedTrace(_))
        ));
    }

    #[test]
    fn request_age_decomposition() {
        assert_eq!(tpaoi_of_request(5, 11, 25, 31).unwrap(), 26);
        assert_eq!(tpaoi_of_request(7, 7, 7, 7).unwrap(), 0);
        assert_eq!(tpaoi_of_request(0, 3, 3, 7).unwrap(), 7);
        assert!(tpaoi_of_request(5, 4, 25, 31).is_err());
        assert!(tpaoi_of_request(5, 11, 10, 31).is_err());
    }

    #[test]
    fn long_run_average_pools_samples() {
        let a = RunRecord { tpaoi_samples: vec![10.0, 20.0], ..Default::default() };
        assert_eq!(long_run_average_tpaoi(&[a.clone()]).unwrap(), 15.0);

        let b = RunRecord { tpaoi_samples: vec![26.0], ..Default::default() };
        assert_eq!(long_run_average_tpaoi(&[b.clone()]).unwrap(), 26.0);
        assert_eq!(long_run_average_tpaoi(&[a, b]).unwrap(), (10.0 + 20.0 + 26.0) / 3.0);

        assert_eq!(long_run_average_tpaoi(&[]), Err(MetricsError::EmptyData));
        assert_eq!(
            long_run_average_tpaoi(&[RunRecord::default()]),
            Err(MetricsError::EmptyData)
        );
    }

    #[test]
    fn deterministic_synthetic_trace_matches_closed_form() {
        // Fixed update transit d_u, request transit d_r, access period p, and
        // an update arriving exactly w slots before each access: every sample
        // equals d_u + w + d_r.
        let (d_u, d_r, w, p) = (6u64, 6u64, 2u64, 20u64);
        let mut samples = Vec::new();
        for k in 1..=10_000u64 {
            let access = k * p;
            let arrive = access - w;
            let send = arrive - d_u;
            let q_arrive = access + d_r;
            samples.push(tpaoi_of_request(send, arrive, access, q_arrive).unwrap() as f64);
        }
        let record = RunRecord { tpaoi_samples: samples, ..Default::default() };
        let mean = long_run_average_tpaoi(&[record]).unwrap();
        assert_eq!(mean, (d_u + w + d_r) as f64);
    }

    #[test]
    fn histogram_scaling_maps_max_to_one() {
        let pairs = vec![(1, 9); 7];
        let cells = interval_aoi_histogram(&pairs, HistogramScaling::GlobalMax).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].scaled, 1.0);
        assert_eq!(cells[0].count, 7);

        let pairs = vec![(3, 5), (3, 5), (3, 5), (3, 8)];
        let cells = interval_aoi_histogram(&pairs, HistogramScaling::GlobalMax).unwrap();
        assert_eq!(cells[0].scaled, 1.0);
        assert!((cells[1].scaled - 1.0 / 3.0).abs() < 1e-12);

        // Column scaling differs from global scaling across columns.
        let pairs = vec![(1, 2), (1, 2), (2, 3)];
        let global = interval_aoi_histogram(&pairs, HistogramScaling::GlobalMax).unwrap();
        assert_eq!(global[1].scaled, 0.5);
        let column = interval_aoi_histogram(&pairs, HistogramScaling::ColumnMax).unwrap();
        assert_eq!(column[1].scaled, 1.0);

        assert_eq!(
            interval_aoi_histogram(&[], HistogramScaling::GlobalMax),
            Err(MetricsError::EmptyData)
        );
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 1), vec![1.0, 2.0, 3.0]);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[2.5; 9], 4), vec![2.5; 9]);
    }
}
