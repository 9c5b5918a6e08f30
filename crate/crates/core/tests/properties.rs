mod common;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use proptest::prelude::*;

use disagg_core::broker::Broker;
use disagg_core::cache::Cache;
use disagg_core::config::{NodeType, WorkerCounts};
use disagg_core::hash::{result_hash, sorted_rows};
use disagg_core::metrics::{simulate, SimTask};
use disagg_core::reference::execute_reference;
use disagg_core::task::{Message, SignalMessage};
use disagg_core::worker::{exec_hash_partition, exec_probe_join, nested_loop_join};
use disagg_core::{Error, Field, PlanMode, QueueKey, RowBatch, Schema, Value, ValueType};

fn signal(n: usize) -> Message {
    Message::Signal(SignalMessage {
        name: "partition-ready".into(),
        query_id: "q".into(),
        group: n,
        keys: vec![],
    })
}

fn group_of(m: &Message) -> usize {
    match m {
        Message::Signal(s) => s.group,
        _ => unreachable!(),
    }
}

fn keyed(prefix: &str, keys: &[i64]) -> RowBatch {
    RowBatch::try_new(
        Schema::new(vec![
            Field::new(format!("{prefix}.k"), ValueType::Int64),
            Field::new(format!("{prefix}.v"), ValueType::Int64),
        ]),
        keys.iter()
            .enumerate()
            .map(|(i, k)| vec![Value::Int64(*k), Value::Int64(i as i64)])
            .collect(),
    )
    .unwrap()
}

fn grace(build: &RowBatch, probe: &RowBatch, buckets: u32) -> RowBatch {
    let bp = exec_hash_partition(build, "a.k", buckets).unwrap();
    let pp = exec_hash_partition(probe, "b.k", buckets).unwrap();
    let parts: Vec<RowBatch> = bp
        .iter()
        .zip(&pp)
        .map(|(b, p)| exec_probe_join(b, p, "a.k", "b.k").unwrap())
        .collect();
    RowBatch::concat(&parts[0].schema, parts.iter()).unwrap()
}

fn counts(general: u32, gpu: u32) -> WorkerCounts {
    BTreeMap::from([(NodeType::General, general), (NodeType::Gpu, gpu)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grace_join_equals_nested_loop(
        left in prop::collection::vec(0i64..40, 0..120),
        right in prop::collection::vec(0i64..40, 0..120),
        b in prop::sample::select(vec![1u32, 2, 3, 4, 8]),
    ) {
        let (l, r) = (keyed("a", &left), keyed("b", &right));
        prop_assert_eq!(sorted_rows(&grace(&l, &r, b)), sorted_rows(&nested_loop_join(&l, &r, "a.k", "b.k").unwrap()));
    }

    #[test]
    fn partition_preserves_rows(keys in prop::collection::vec(any::<i64>(), 0..200), b in 1u32..16) {
        let t = keyed("a", &keys);
        let parts = exec_hash_partition(&t, "a.k", b).unwrap();
        prop_assert_eq!(parts.len(), b as usize);
        let joined = RowBatch::concat(&t.schema, parts.iter()).unwrap();
        prop_assert_eq!(sorted_rows(&joined), sorted_rows(&t));
    }

    #[test]
    fn broker_preserves_single_queue_order(n in 0usize..300) {
        let broker = Broker::new();
        let q = QueueKey::cpu_general();
        for i in 0..n {
            broker.publish(&q, signal(i)).unwrap();
        }
        let mut last = None;
        for i in 0..n {
            let m = broker.poll(&q, Duration::ZERO).unwrap().unwrap();
            prop_assert_eq!(group_of(&m.message), i);
            prop_assert!(last.is_none_or(|s| m.enqueue_seq > s));
            last = Some(m.enqueue_seq);
        }
        prop_assert!(broker.poll(&q, Duration::ZERO).unwrap().is_none());
    }

    #[test]
    fn cache_accounting(sizes in prop::collection::vec(0usize..30, 1..20), limit in 200u64..4000) {
        let cache = Cache::new(limit);
        let mut expected = 0u64;
        for (i, n) in sizes.iter().enumerate() {
            let batch = keyed("a", &vec![1; *n]);
            let bytes = batch.byte_size() as u64;
            let key = format!("q1.stage1.t{i}");
            match cache.put(&key, batch) {
                Ok(_) => {
                    prop_assert!(expected + bytes <= limit);
                    expected += bytes;
                }
                Err(Error::CapacityExceeded { .. }) => prop_assert!(expected + bytes > limit),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            prop_assert_eq!(cache.total_bytes(), expected);
        }
        cache.drop_query("q1");
        prop_assert_eq!(cache.total_bytes(), 0);
    }

    #[test]
    fn makespan_bounds_and_monotone(durations in prop::collection::vec(1.0f64..500.0, 1..40), w in 1u32..6) {
        let tasks: Vec<SimTask> = durations
            .iter()
            .enumerate()
            .map(|(i, d)| SimTask { id: format!("t{i}"), queue: QueueKey::cpu_general(), duration_ms: *d, depends_on: vec![] })
            .collect();
        let one = simulate(&tasks, &counts(w, 0)).unwrap().makespan_ms;
        let two = simulate(&tasks, &counts(w * 2, 0)).unwrap().makespan_ms;
        let total: f64 = durations.iter().sum();
        let longest = durations.iter().cloned().fold(0.0, f64::max);
        prop_assert!(one + 1e-9 >= longest && one + 1e-9 >= total / w as f64);
        prop_assert!(one <= total + 1e-9);
        prop_assert!(two <= one + 1e-9);
    }

    #[test]
    fn chains_take_their_sum(durations in prop::collection::vec(1.0f64..100.0, 1..10), w in 1u32..4) {
        let tasks: Vec<SimTask> = durations
            .iter()
            .enumerate()
            .map(|(i, d)| SimTask {
                id: format!("t{i}"),
                queue: QueueKey::gpu(),
                duration_ms: *d,
                depends_on: if i == 0 { vec![] } else { vec![format!("t{}", i - 1)] },
            })
            .collect();
        let m = simulate(&tasks, &counts(0, w)).unwrap().makespan_ms;
        prop_assert!((m - durations.iter().sum::<f64>()).abs() < 1e-6);
    }
}

fn shared_lake() -> &'static common::DemoLake {
    static LAKE: OnceLock<common::DemoLake> = OnceLock::new();
    LAKE.get_or_init(|| common::demo_lake(120, 21))
}

fn shared_engine() -> &'static disagg_core::engine::Engine {
    static ENGINE: OnceLock<disagg_core::engine::Engine> = OnceLock::new();
    ENGINE.get_or_init(|| shared_lake().engine("general=2,himem=1,gpu=1"))
}

fn predicate() -> impl Strategy<Value = String> {
    prop_oneof![
        (0i64..130).prop_map(|v| format!("a.id > {v}")),
        (0i64..130).prop_map(|v| format!("b.id <= {v}")),
        (0i64..130).prop_map(|v| format!("a.id < {v}")),
        (100.0f64..1000.0).prop_map(|v| format!("molecular_weight(b.smile) > {v:.1}")),
        Just("hasEyeglasses(a.id)".to_string()),
        Just("hasBangs(a.id) = false".to_string()),
        Just("to_upper(b.smile) = b.smile".to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Optimized, staged execution returns the same multiset as the
    /// unoptimized single-node reference.
    #[test]
    fn optimizer_is_sound(preds in prop::collection::vec(predicate(), 0..4), join in any::<bool>(), sym in any::<bool>()) {
        let d = shared_lake();
        let sql = if join {
            let mut s = "select a.id, b.smile, a.bangs from celeba_s as a join pubchem_s as b on a.id = b.id".to_string();
            if !preds.is_empty() {
                s += " where ";
                s += &preds.join(" and ");
            }
            s
        } else {
            let own: Vec<&String> = preds.iter().filter(|p| !p.contains("b.")).collect();
            let mut s = "select * from celeba_s as a".to_string();
            if !own.is_empty() {
                s += " where ";
                s += &own.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(" and ");
            }
            s
        };
        let mode = if sym { PlanMode::Symmetric } else { PlanMode::Disaggregated };
        let got = shared_engine().run_query(&sql, mode).unwrap();
        let want = execute_reference(&sql, &d.catalog, &d.lake).unwrap();
        prop_assert_eq!(got.report.result_hash, result_hash(&want), "{}", sql);
    }
}

#[test]
fn broker_exactly_once_with_concurrent_pollers() {
    let broker = Arc::new(Broker::new());
    let q = QueueKey::cpu_himem();
    let n = 2000;
    let pollers: Vec<_> = (0..8)
        .map(|_| {
            let (b, q) = (broker.clone(), q.clone());
            std::thread::spawn(move || {
                let mut got = Vec::new();
                while let Some(m) = b.poll(&q, Duration::from_millis(200)).unwrap() {
                    got.push(group_of(&m.message));
                }
                got
            })
        })
        .collect();
    for i in 0..n {
        broker.publish(&q, signal(i)).unwrap();
    }
    let mut all: Vec<usize> = pollers
        .into_iter()
        .flat_map(|h| h.join().unwrap())
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
}
