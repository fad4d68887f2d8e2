use std::thread;

use proptest::prelude::*;
use textpipe_core::metrics::{aggregate_series, speedup_pct, summarize};
use textpipe_core::{Clock, EventKind, Metrics, PipelineEvent};

fn event() -> impl Strategy<Value = PipelineEvent> {
    (any::<bool>(), 0u64..120_000, 1u64..50).prop_map(|(received, ts, n)| {
        if received {
            PipelineEvent::received(ts, n)
        } else {
            PipelineEvent::processed(ts, n)
        }
    })
}

proptest! {
    #[test]
    fn series_equals_bin_and_prefix_sum(events in prop::collection::vec(event(), 0..200), bin_s in 1u64..30) {
        let series = aggregate_series(&events, bin_s).unwrap();
        if events.is_empty() {
            prop_assert!(series.points.is_empty());
            return Ok(());
        }
        let origin = events.iter().map(|e| e.ts).min().unwrap();
        let last = events.iter().map(|e| e.ts).max().unwrap();
        prop_assert!(series.points.last().unwrap().t_s * 1000 > last - origin);
        for (i, p) in series.points.iter().enumerate() {
            let edge = origin + (i as u64 + 1) * bin_s * 1000;
            let count = |kind| events.iter().filter(|e| e.kind == kind && e.ts < edge).map(|e| e.record_count).sum::<u64>();
            prop_assert_eq!(p.received_cum, count(EventKind::Received));
            prop_assert_eq!(p.processed_cum, count(EventKind::Processed));
            prop_assert_eq!(p.t_s, (i as u64 + 1) * bin_s);
        }
    }

    #[test]
    fn speedup_identity(t in 0.001f64..1e6) {
        prop_assert_eq!(speedup_pct(t, t), 100.0);
    }
}

#[test]
fn concurrent_recording_totals() {
    let metrics = Metrics::new(Clock::new());
    let per_thread: Vec<(u64, u64)> = thread::scope(|s| {
        let handles: Vec<_> = (0..4u64)
            .map(|t| {
                let m = metrics.clone();
                s.spawn(move || {
                    let (mut r, mut p) = (0, 0);
                    for i in 0..5_000u64 {
                        let n = (i + t) % 7 + 1;
                        if (i + t) % 3 == 0 {
                            m.record(PipelineEvent::processed(i, n));
                            p += n;
                        } else {
                            m.record(PipelineEvent::received(i, n));
                            r += n;
                        }
                    }
                    (r, p)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let (r, p) = per_thread.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    assert_eq!(metrics.received_total(), r);
    assert_eq!(metrics.processed_total(), p);
    let events = metrics.events();
    assert_eq!(events.len(), 20_000);
    assert!(events.windows(2).all(|w| w[0].ts <= w[1].ts));
}

#[test]
fn summaries_for_three_known_spans() {
    // processed time reconstructed from event timestamps
    let span = |min: f64| {
        vec![
            PipelineEvent::received(0, 1),
            PipelineEvent::processed((min * 60_000.0).round() as u64, 1),
        ]
    };
    let base = summarize(&span(15.0), 10.0, None).unwrap();
    assert_eq!(base.processed_time_min, 15.0);
    assert_eq!(base.latency_min, 5.0);
    assert_eq!(base.speedup_pct, None);
    let two = summarize(&span(11.5), 10.0, Some(15.0)).unwrap();
    assert_eq!(two.latency_min, 1.5);
    assert!((two.speedup_pct.unwrap() - 130.0).abs() <= 0.5);
    let three = summarize(&span(10.7), 10.0, Some(15.0)).unwrap();
    assert!((three.latency_min - 0.7).abs() < 1e-12);
    assert!((three.speedup_pct.unwrap() - 140.0).abs() <= 0.5);
}
