use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use textpipe_core::{Dataset, StreamContext};

#[derive(Debug, Clone)]
enum Stage {
    Map { mul: i64, add: i64 },
    Filter { modulus: i64, keep: i64 },
    /// Key by `x mod buckets`, group, and emit `key + sum(values) + len`.
    Group { buckets: i64, out_partitions: usize },
}

fn stage() -> impl Strategy<Value = Stage> {
    prop_oneof![
        (-3i64..4, -50i64..50).prop_map(|(mul, add)| Stage::Map { mul, add }),
        (2i64..5).prop_flat_map(|m| (Just(m), 0..m)).prop_map(|(modulus, keep)| Stage::Filter { modulus, keep }),
        (1i64..12, 1usize..6).prop_map(|(buckets, out_partitions)| Stage::Group { buckets, out_partitions }),
    ]
}

fn reference(input: &[i64], stages: &[Stage]) -> Vec<i64> {
    let mut xs = input.to_vec();
    for s in stages {
        xs = match *s {
            Stage::Map { mul, add } => xs.iter().map(|x| x.wrapping_mul(mul).wrapping_add(add)).collect(),
            Stage::Filter { modulus, keep } => xs.into_iter().filter(|x| x.rem_euclid(modulus) == keep).collect(),
            Stage::Group { buckets, .. } => {
                let mut groups: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
                for x in xs {
                    groups.entry(x.rem_euclid(buckets)).or_default().push(x);
                }
                groups
                    .into_iter()
                    .map(|(k, vs)| k.wrapping_add(vs.iter().fold(0i64, |a, b| a.wrapping_add(*b))).wrapping_add(vs.len() as i64))
                    .collect()
            }
        };
    }
    xs.sort_unstable();
    xs
}

fn build(ds: Dataset<i64>, stages: &[Stage], calls: &Arc<AtomicUsize>) -> Dataset<i64> {
    let mut ds = ds;
    for s in stages {
        let calls = Arc::clone(calls);
        ds = match *s {
            Stage::Map { mul, add } => ds.map(move |x| {
                calls.fetch_add(1, Ordering::Relaxed);
                x.wrapping_mul(mul).wrapping_add(add)
            }),
            Stage::Filter { modulus, keep } => ds.filter(move |x| {
                calls.fetch_add(1, Ordering::Relaxed);
                x.rem_euclid(modulus) == keep
            }),
            Stage::Group { buckets, out_partitions } => {
                let keyed = ds.map(move |x| {
                    calls.fetch_add(1, Ordering::Relaxed);
                    (x.rem_euclid(buckets), x)
                });
                keyed
                    .group_by_key_into(out_partitions)
                    .map(|(k, vs): (i64, Vec<i64>)| {
                        k.wrapping_add(vs.iter().fold(0i64, |a, b| a.wrapping_add(*b))).wrapping_add(vs.len() as i64)
                    })
            }
        };
    }
    ds
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_pipelines_match_reference(
        input in prop::collection::vec(-1000i64..1000, 0..1000),
        stages in prop::collection::vec(stage(), 0..=4),
        partitions in 1usize..8,
        workers in prop::sample::select(vec![1usize, 4]),
    ) {
        let ctx = StreamContext::new(workers).unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let ds = build(ctx.from_records(input.clone(), partitions).unwrap(), &stages, &calls);
        prop_assert_eq!(calls.load(Ordering::Relaxed), 0);
        let mut got = ds.collect().unwrap();
        got.sort_unstable();
        let expect = reference(&input, &stages);
        prop_assert_eq!(&got, &expect);
        prop_assert_eq!(ds.count().unwrap(), expect.len());
        if !expect.is_empty() {
            let sum = ds.reduce(|a, b| a.wrapping_add(b)).unwrap();
            prop_assert_eq!(sum, expect.iter().fold(0i64, |a, b| a.wrapping_add(*b)));
        }
    }

    #[test]
    fn take_is_a_prefix_of_collect(
        input in prop::collection::vec(0i64..100, 0..300),
        partitions in 1usize..6,
        n in 0usize..320,
    ) {
        let ctx = StreamContext::new(2).unwrap();
        let ds = ctx.from_records(input, partitions).unwrap().filter(|x| x % 3 != 0);
        let all = ds.collect().unwrap();
        let taken = ds.take(n).unwrap();
        prop_assert_eq!(&taken[..], &all[..n.min(all.len())]);
    }
}

#[test]
fn cached_dataset_evaluates_once() {
    let ctx = StreamContext::new(3).unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&calls);
    let ds = ctx
        .from_records((0..500).collect::<Vec<i64>>(), 5)
        .unwrap()
        .map(move |x| {
            c.fetch_add(1, Ordering::Relaxed);
            x * 2
        })
        .cache();
    assert_eq!(ds.count().unwrap(), 500);
    assert_eq!(ds.reduce(|a, b| a + b).unwrap(), 2 * (0..500).sum::<i64>());
    assert_eq!(ds.map(|x| x + 1).count().unwrap(), 500);
    assert_eq!(calls.load(Ordering::Relaxed), 500);
}

#[test]
fn worker_count_does_not_change_partition_contents() {
    let input: Vec<i64> = (0..997).collect();
    let outputs: Vec<Vec<Vec<i64>>> = [1, 2, 4]
        .into_iter()
        .map(|w| {
            StreamContext::new(w)
                .unwrap()
                .from_records(input.clone(), 6)
                .unwrap()
                .map(|x| (x % 10, x))
                .group_by_key_into(3)
                .map(|(k, vs): (i64, Vec<i64>)| k * 1_000_000 + vs.iter().sum::<i64>())
                .collect_partitions()
                .unwrap()
        })
        .map(|mut ps| {
            ps.iter_mut().for_each(|p| p.sort_unstable());
            ps
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
