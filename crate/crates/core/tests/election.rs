use std::collections::BTreeMap;

use lshfed::election::{build_ring, elect_roles, quantile_score, traverse, PoolTag, ReputationLedger};
use lshfed::rng;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn quantile_endpoints_for_every_pool_size() {
    for r in 2..=100 {
        assert_eq!(quantile_score(1, r).unwrap(), 1.0);
        assert_eq!(quantile_score(r, r).unwrap(), 0.0);
    }
}

#[test]
fn single_picks_follow_ring_weights() {
    let mut g = rng::rng(5);
    let pool: Vec<(u32, f64)> = (0..12).map(|id| (id, g.gen_range(0.2..1.0))).collect();
    let ring = build_ring(&pool, PoolTag::DataNodes).unwrap();
    let n = 100_000u64;
    let mut hits: BTreeMap<u32, u64> = BTreeMap::new();
    for round in 0..n {
        *hits.entry(traverse(&ring, round, 9, 1).unwrap()[0]).or_default() += 1;
    }
    let mut chi2 = 0.0;
    for &(id, _) in &pool {
        let expected = ring.weight(id).unwrap() * n as f64;
        let observed = hits.get(&id).copied().unwrap_or(0) as f64;
        assert!((observed - expected).abs() / expected < 0.05, "node {id}: {observed} vs {expected}");
        chi2 += (observed - expected).powi(2) / expected;
    }
    let critical = ChiSquared::new((pool.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn later_rounds_pick_distinct_trainers_and_aggregators() {
    let dns: Vec<u32> = (0..10).collect();
    let ags: Vec<u32> = (10..19).collect();
    let ledger = ReputationLedger::new(dns.iter().chain(&ags).copied(), 0.5, 0.5).unwrap();
    for round in 2..200 {
        let e = elect_roles(&dns, &ags, &ledger, 5, 2, round, 3).unwrap();
        let mut t = e.trainers.clone();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), 5);
        assert_ne!(e.aggregators[0], e.aggregators[1]);
        let sizes: Vec<usize> = e.groups.iter().map(|g| g.trainers.len()).collect();
        assert_eq!(sizes, vec![3, 2]);
    }
}

#[test]
fn first_round_enlists_every_data_node() {
    let dns: Vec<u32> = (0..7).collect();
    let ags: Vec<u32> = (7..12).collect();
    let ledger = ReputationLedger::new(dns.iter().chain(&ags).copied(), 0.5, 0.5).unwrap();
    let e = elect_roles(&dns, &ags, &ledger, 3, 2, 1, 11).unwrap();
    assert_eq!(e.trainers, dns);
    assert!(e.aggregators.iter().all(|a| ags.contains(a)));
}
