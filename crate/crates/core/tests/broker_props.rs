use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Barrier};
use std::thread;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textpipe_core::broker::partition_for_key;
use textpipe_core::{Broker, ConsumerPosition};

fn consume_all(broker: &Broker, topic: &str, partition: u32) -> Vec<textpipe_core::Record> {
    let mut out = Vec::new();
    loop {
        let batch = broker.consume(topic, partition, out.len() as u64, 997).unwrap();
        if batch.is_empty() {
            return out;
        }
        out.extend(batch);
    }
}

#[test]
fn concurrent_producers_keep_partition_order() {
    const PRODUCERS: usize = 8;
    const PER_PRODUCER: usize = 2_000;
    let broker = Broker::in_memory();
    broker.create_topic("t", 3).unwrap();
    let barrier = Arc::new(Barrier::new(PRODUCERS));
    let journals: Vec<Vec<(u32, u64, Vec<u8>)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..PRODUCERS)
            .map(|p| {
                let (broker, barrier) = (&broker, Arc::clone(&barrier));
                s.spawn(move || {
                    barrier.wait();
                    (0..PER_PRODUCER)
                        .map(|i| {
                            let payload = format!("{p}:{i}").into_bytes();
                            let key = (i % 5 == 0).then(|| format!("k{}", i % 17));
                            let r = broker.produce("t", key.as_deref().map(str::as_bytes), &payload).unwrap();
                            (r.partition, r.offset, payload)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    // each producer sees strictly increasing offsets within a partition
    for journal in &journals {
        let mut last: HashMap<u32, u64> = HashMap::new();
        for (p, o, _) in journal {
            if let Some(prev) = last.insert(*p, *o) {
                assert!(*o > prev);
            }
        }
    }
    let mut by_partition: BTreeMap<u32, BTreeMap<u64, Vec<u8>>> = BTreeMap::new();
    for (p, o, payload) in journals.into_iter().flatten() {
        assert!(by_partition.entry(p).or_default().insert(o, payload).is_none());
    }
    let mut total = 0;
    for p in 0..3 {
        let consumed = consume_all(&broker, "t", p);
        let expected = by_partition.remove(&p).unwrap_or_default();
        assert_eq!(consumed.len(), expected.len());
        for (i, (r, (o, payload))) in consumed.iter().zip(expected).enumerate() {
            assert_eq!(r.offset, i as u64);
            assert_eq!(r.offset, o);
            assert_eq!(r.payload, payload);
        }
        assert!(consumed.windows(2).all(|w| w[0].produce_ts <= w[1].produce_ts));
        total += consumed.len();
    }
    assert_eq!(total, PRODUCERS * PER_PRODUCER);
}

#[test]
fn keyed_affinity_for_random_keys() {
    let broker = Broker::in_memory();
    broker.create_topic("t", 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1_000 {
        let len = rng.random_range(1..24);
        let key: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let a = broker.produce("t", Some(&key), b"x").unwrap().partition;
        let b = broker.produce("t", Some(&key), b"y").unwrap().partition;
        assert_eq!(a, b);
        assert_eq!(a, partition_for_key(&key, 7));
    }
}

#[test]
fn file_backed_broker_survives_reopen_under_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    {
        let broker = Broker::open(dir.path()).unwrap();
        broker.create_topic("t", 2).unwrap();
        thread::scope(|s| {
            for p in 0..4 {
                let broker = &broker;
                s.spawn(move || {
                    for i in 0..250 {
                        broker.produce("t", None, format!("{p}-{i}").as_bytes()).unwrap();
                    }
                });
            }
        });
        broker
            .commit_offset(&ConsumerPosition {
                group_id: "g".into(),
                topic: "t".into(),
                partition: 1,
                committed_offset: 100,
            })
            .unwrap();
    }
    let broker = Broker::open(dir.path()).unwrap();
    assert_eq!(broker.partition_lengths("t").unwrap(), vec![500, 500]);
    assert_eq!(broker.fetch_committed("g", "t", 1), Some(100));
    for p in 0..2 {
        let records = consume_all(&broker, "t", p);
        assert!(records.iter().enumerate().all(|(i, r)| r.offset == i as u64));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn keyless_round_robin_balances(partitions in 1usize..9, n in 0usize..200) {
        let broker = Broker::in_memory();
        broker.create_topic("t", partitions).unwrap();
        for i in 0..n {
            broker.produce("t", None, &i.to_le_bytes()).unwrap();
        }
        let lens = broker.partition_lengths("t").unwrap();
        prop_assert_eq!(lens.iter().sum::<u64>(), n as u64);
        let (min, max) = (lens.iter().min().unwrap(), lens.iter().max().unwrap());
        prop_assert!(max - min <= 1);
    }

    #[test]
    fn consume_window_matches_log(n in 0u64..60, from in 0u64..70, max in 1usize..30) {
        let broker = Broker::in_memory();
        broker.create_topic("t", 1).unwrap();
        for i in 0..n {
            broker.produce("t", None, &i.to_le_bytes()).unwrap();
        }
        let records = broker.consume("t", 0, from, max).unwrap();
        let expect: Vec<u64> = (from..n.min(from + max as u64)).collect();
        let got: Vec<u64> = records.iter().map(|r| r.offset).collect();
        prop_assert_eq!(got, expect);
        for r in &records {
            prop_assert_eq!(&r.payload[..], &r.offset.to_le_bytes()[..]);
        }
    }

    #[test]
    fn commits_are_monotone_and_bounded(commits in prop::collection::vec(0u64..20, 1..12)) {
        let broker = Broker::in_memory();
        broker.create_topic("t", 1).unwrap();
        for _ in 0..10 {
            broker.produce("t", None, b"x").unwrap();
        }
        let mut committed: Option<u64> = None;
        for c in commits {
            let r = broker.commit_offset(&ConsumerPosition {
                group_id: "g".into(),
                topic: "t".into(),
                partition: 0,
                committed_offset: c,
            });
            let ok = c <= 10 && committed.is_none_or(|prev| c >= prev);
            prop_assert_eq!(r.is_ok(), ok);
            if ok {
                committed = Some(c);
            }
            prop_assert_eq!(broker.fetch_committed("g", "t", 0), committed);
        }
    }
}
