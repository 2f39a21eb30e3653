//! Property suite for the metrics layer, built on independent oracles: the
//! definition-form age formula checked against the slot recursion, and the
//! request-age decomposition checked against the direct difference.

use proptest::prelude::*;

use tpaoi_core::metrics::{
    conventional_aoi_series, interval_aoi_histogram, moving_average, tpaoi_of_request,
    HistogramScaling,
};
use tpaoi_core::trace::Event;

/// Random well-formed update timeline: increasing send slots, first-come
/// first-served arrivals.
fn arb_update_trace() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((1u64..=8, 1u64..=10), 0..12).prop_map(|gaps| {
        let mut events = Vec::new();
        let mut send = 0u64;
        let mut last_arrival = 0u64;
        for (gap, delay) in gaps {
            send += gap;
            let arrival = (send + delay).max(last_arrival + 1);
            last_arrival = arrival;
            events.push(Event::UpdateSent { slot: send });
            events.push(Event::UpdateArrived {
                slot: arrival,
                send_slot: send,
                transit: arrival - send,
            });
        }
        events.sort_by_key(|e| e.slot());
        events
    })
}

/// Definition-form oracle: age at `t` is `t` minus the newest send whose
/// arrival is at or before `t`, with a phantom update at slot zero.
fn definition_aoi(trace: &[Event], t: u64) -> u64 {
    let freshest = trace
        .iter()
        .filter_map(|e| match *e {
            Event::UpdateArrived { slot, send_slot, .. } if slot <= t => Some(send_slot),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    t - freshest
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn recursion_agrees_with_the_definition_form(trace in arb_update_trace()) {
        let horizon = 120u64;
        let series = conventional_aoi_series(&trace, horizon).unwrap();
        for t in 1..=horizon {
            prop_assert_eq!(
                series[(t - 1) as usize],
                definition_aoi(&trace, t),
                "age mismatch at slot {}",
                t
            );
        }
    }

    #[test]
    fn request_age_paths_agree(
        u_send in 0u64..50,
        d_update in 0u64..20,
        wait in 0u64..30,
        d_request in 0u64..20,
    ) {
        let u_arrive = u_send + d_update;
        let q_access = u_arrive + wait;
        let q_arrive = q_access + d_request;
        let three_term = (u_arrive - u_send) + (q_access - u_arrive) + (q_arrive - q_access);
        prop_assert_eq!(
            tpaoi_of_request(u_send, u_arrive, q_access, q_arrive).unwrap(),
            three_term
        );
        prop_assert_eq!(three_term, q_arrive - u_send);
    }

    #[test]
    fn moving_average_stays_within_series_bounds(
        series in prop::collection::vec(-100.0f64..100.0, 1..80),
        window in 1usize..20,
    ) {
        let out = moving_average(&series, window);
        prop_assert_eq!(out.len(), series.len());
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in out {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn histogram_peak_is_exactly_one(
        pairs in prop::collection::vec((1u64..30, 0u64..40), 1..200),
    ) {
        for scaling in [HistogramScaling::GlobalMax, HistogramScaling::ColumnMax] {
            let cells = interval_aoi_histogram(&pairs, scaling).unwrap();
            let max = cells.iter().map(|c| c.scaled).fold(0.0, f64::max);
            prop_assert!((max - 1.0).abs() < 1e-12);
            prop_assert!(cells.iter().all(|c| c.scaled > 0.0 && c.scaled <= 1.0));
            let total: u64 = cells.iter().map(|c| c.count).sum();
            prop_assert_eq!(total as usize, pairs.len());
        }
    }
}
