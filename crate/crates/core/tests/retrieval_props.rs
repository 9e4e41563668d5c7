mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use qsuggest::domain::{dot, BinaryAnswerability, Embedding};
use qsuggest::retrieval::{retrieve_examples, retrieve_from, RetrievalConfig, VisitOrder};
use qsuggest::store::SimilarityStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const A: BinaryAnswerability = BinaryAnswerability::Answerable;
const N: BinaryAnswerability = BinaryAnswerability::NotAnswerable;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_oracle(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let q = inst.query_embedding();
        let got = retrieve_examples(&q, &inst.store(), &inst.cfg).unwrap();
        let want = oracle_retrieve(q.as_slice(), &inst.candidates, &inst.cfg);
        prop_assert_eq!(ids(&got.positive), ids(&want.positive));
        prop_assert_eq!(ids(&got.negative), ids(&want.negative));
    }

    #[test]
    fn caps_purity_admission(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let q = inst.query_embedding();
        let got = retrieve_examples(&q, &inst.store(), &inst.cfg).unwrap();
        prop_assert!(got.positive.len() <= inst.cfg.max_positive);
        prop_assert!(got.negative.len() <= inst.cfg.max_negative);
        prop_assert!(got.positive.iter().all(|e| e.answerability == A));
        prop_assert!(got.negative.iter().all(|e| e.answerability == N));
        for list in [&got.positive, &got.negative] {
            let sims: Vec<f64> = list.iter().map(|e| dot(q.as_slice(), e.embedding.as_slice())).collect();
            prop_assert!(sims.iter().all(|s| *s >= inst.cfg.theta_sim));
            prop_assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn voting_off_returns_every_admitted_example(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let q = inst.query_embedding();
        let cfg = RetrievalConfig { voting: false, max_positive: usize::MAX, max_negative: usize::MAX, ..inst.cfg };
        let got = retrieve_examples(&q, &inst.store(), &cfg).unwrap();
        let admitted = inst.candidates.iter().filter(|c| dot(&inst.query, c.embedding.as_slice()) >= cfg.theta_sim).count();
        prop_assert_eq!(got.positive.len() + got.negative.len(), admitted);
    }

    #[test]
    fn shuffled_order_keeps_invariants(seed in any::<u64>(), order_seed in any::<u64>()) {
        let inst = random_instance(seed);
        let (got, votes) = retrieve_from(&inst.query_embedding(), &inst.candidates, &inst.cfg, VisitOrder::Shuffled(order_seed)).unwrap();
        prop_assert!(got.positive.len() <= inst.cfg.max_positive && got.negative.len() <= inst.cfg.max_negative);
        prop_assert!(votes.iter().all(|v| v.counter >= 0));
    }

    #[test]
    fn scan_matches_brute_force(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let store = inst.store();
        let q = inst.query_embedding();
        let got: Vec<String> = store.scan_above(&q, inst.cfg.theta_sim).unwrap().iter().map(|e| e.id.clone()).collect();
        let mut want: Vec<(f64, usize)> = inst.candidates.iter().enumerate()
            .map(|(i, c)| (c.embedding.as_slice().iter().zip(&inst.query).map(|(a, b)| a * b).sum::<f64>(), i))
            .filter(|(s, _)| *s >= inst.cfg.theta_sim)
            .collect();
        want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<String> = want.iter().map(|(_, i)| inst.candidates[*i].id.clone()).collect();
        // Independent summation order may move items sitting exactly on the threshold.
        let diff: BTreeSet<_> = got.iter().collect::<BTreeSet<_>>().symmetric_difference(&want.iter().collect()).cloned().collect();
        for id in &diff {
            let c = inst.candidates.iter().find(|c| &&c.id == id).unwrap();
            prop_assert!((dot(&inst.query, c.embedding.as_slice()) - inst.cfg.theta_sim).abs() < 1e-12);
        }
        if diff.is_empty() {
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn dead_cluster_hand_trace() {
    let cands = vec![example("i1", angle2(0.0), A), example("i2", angle2(5.0), N), example("i3", angle2(6.0), A)];
    let cfg = RetrievalConfig::new(0.8, 0.95).unwrap();
    let (got, votes) = retrieve_from(&Embedding::new(angle2(0.0)).unwrap(), &cands, &cfg, VisitOrder::Similarity).unwrap();
    assert_eq!(ids(&got.positive), vec!["i3"]);
    assert!(got.negative.is_empty());
    assert_eq!(got, oracle_retrieve(&angle2(0.0), &cands, &cfg));
    assert_eq!(votes.iter().map(|v| (v.representative_index, v.counter)).collect::<Vec<_>>(), vec![(0, 0), (2, 1)]);
}

#[test]
fn trivial_cases() {
    let cfg = RetrievalConfig::default();
    let q = Embedding::new(angle2(0.0)).unwrap();
    let empty = SimilarityStore::in_memory(2, "a").unwrap();
    assert!(retrieve_examples(&q, &empty, &cfg).unwrap().is_empty());
    let one = vec![example("x", angle2(10.0), A)];
    assert_eq!(ids(&retrieve_from(&q, &one, &cfg, VisitOrder::Similarity).unwrap().0.positive), vec!["x"]);
    let far = vec![example("y", angle2(80.0), A), example("z", angle2(170.0), N)];
    assert!(retrieve_from(&q, &far, &cfg, VisitOrder::Similarity).unwrap().0.is_empty());
    assert!(oracle_retrieve(&angle2(0.0), &far, &cfg).is_empty());
}

#[test]
fn scan_above_angles() {
    let mut s = SimilarityStore::in_memory(2, "a").unwrap();
    for (id, deg) in [("d90", 90.0), ("d30", 30.0), ("d0", 0.0)] {
        s.insert(example(id, angle2(deg), A)).unwrap();
    }
    let q = Embedding::new(angle2(0.0)).unwrap();
    let got: Vec<_> = s.scan_above(&q, 45f64.to_radians().cos()).unwrap().into_iter().map(|e| e.id.clone()).collect();
    assert_eq!(got, vec!["d0", "d30"]);
    assert_eq!(s.scan_above(&q, -1.0).unwrap().len(), 3);
}

/// In an isolated tight cluster with an odd member count the literal vote
/// behaves like a streaming majority vote: exactly one representative
/// survives and it carries the majority label, whichever label seeded it.
#[test]
fn tight_cluster_emits_majority_label() {
    let cfg = RetrievalConfig::default();
    for m in [3usize, 5, 7, 9] {
        for mask in 0u32..(1 << (m - 1)) {
            let pattern: Vec<bool> = (0..m - 1).map(|b| mask & (1 << b) != 0).collect();
            for seed_label in [A, N] {
                let (q, cands) = tight_cluster(m, &pattern, seed_label);
                let got = retrieve_from(&Embedding::new(q).unwrap(), &cands, &cfg, VisitOrder::Similarity).unwrap().0;
                let reps: Vec<_> = got.positive.iter().chain(&got.negative).filter(|e| e.id.starts_with('m')).collect();
                let k = 1 + pattern.iter().filter(|b| **b).count();
                let majority = if 2 * k > m { seed_label } else { seed_label.flipped() };
                assert_eq!(reps.len(), 1, "m={m} pattern={pattern:?}");
                assert_eq!(reps[0].answerability, majority, "m={m} pattern={pattern:?}");
            }
        }
    }
}

#[test]
fn retrieval_is_thread_independent() {
    let inst = random_instance(99);
    let store = inst.store();
    let q = inst.query_embedding();
    let base = retrieve_examples(&q, &store, &inst.cfg).unwrap();
    std::thread::scope(|s| {
        let hs: Vec<_> = (0..8).map(|_| s.spawn(|| retrieve_examples(&q, &store, &inst.cfg).unwrap())).collect();
        for h in hs {
            assert_eq!(h.join().unwrap(), base);
        }
    });
}

#[test]
fn large_store_scan_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = SimilarityStore::in_memory(16, "a").unwrap();
    let mut all = Vec::new();
    for i in 0..10_000 {
        let v = random_unit(&mut rng, 16);
        let label = if rng.random_bool(0.5) { A } else { N };
        s.insert(example(&format!("e{i}"), v.clone(), label)).unwrap();
        all.push(v);
    }
    let q = random_unit(&mut rng, 16);
    let thr = 0.3;
    let got: Vec<String> = s.scan_above(&Embedding::new(q.clone()).unwrap(), thr).unwrap().iter().map(|e| e.id.clone()).collect();
    let mut want: Vec<(f64, usize)> = all
        .iter()
        .enumerate()
        .map(|(i, v)| (dot(&q, Embedding::new(v.clone()).unwrap().as_slice()), i))
        .filter(|(x, _)| *x >= thr)
        .collect();
    want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    assert_eq!(got, want.iter().map(|(_, i)| format!("e{i}")).collect::<Vec<_>>());
}

#[test]
fn persistence_round_trip_preserves_searches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let inst = random_instance(7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let queries: Vec<Embedding> = (0..20).map(|_| Embedding::new(random_unit(&mut rng, inst.dim)).unwrap()).collect();
    let before = {
        let mut s = SimilarityStore::open(&path, inst.dim, "a", true).unwrap();
        for c in &inst.candidates {
            s.insert(c.clone()).unwrap();
        }
        let results: Vec<_> = queries.iter().map(|q| retrieve_examples(q, &s, &inst.cfg).unwrap()).collect();
        (s.examples().to_vec(), results)
    };
    let s = SimilarityStore::open(&path, inst.dim, "a", true).unwrap();
    assert_eq!(s.examples(), before.0.as_slice());
    for (q, r) in queries.iter().zip(&before.1) {
        assert_eq!(&retrieve_examples(q, &s, &inst.cfg).unwrap(), r);
    }
}
