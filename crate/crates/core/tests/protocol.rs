use std::collections::BTreeSet;

use lshfed::learner::AttackKind;
use lshfed::lshgm::hamming;
use lshfed::protocol::{
    bootstrap, report, run_experiment, run_round, Defense, ExperimentConfig, PayloadKind, Placement,
};
use lshfed::Exec;

const GOLDEN_CONFIG: &str = include_str!("golden/small.conf");
const GOLDEN_METRICS: &str = include_str!("golden/small_metrics.csv");
const GOLDEN_TRANSCRIPT: &str = include_str!("golden/small_transcript.csv");

fn small() -> ExperimentConfig {
    ExperimentConfig::parse(GOLDEN_CONFIG).unwrap()
}

#[test]
fn golden_transcript() {
    let rep = run_experiment(&small(), Exec::default()).unwrap();
    assert_eq!(report::metrics_csv(&rep.transcripts), GOLDEN_METRICS);
    assert_eq!(report::transcript_csv(&rep.transcripts), GOLDEN_TRANSCRIPT);
}

#[test]
fn sequential_and_parallel_agree() {
    let cfg = small();
    let a = run_experiment(&cfg, Exec::Sequential).unwrap();
    let b = run_experiment(&cfg, Exec::default()).unwrap();
    assert_eq!(report::metrics_csv(&a.transcripts), report::metrics_csv(&b.transcripts));
    assert_eq!(report::elections_csv(&a.transcripts), report::elections_csv(&b.transcripts));
    assert_eq!(a.summary, b.summary);
}

#[test]
fn bootstrap_is_reproducible_and_isolates_the_verifier() {
    let cfg = small();
    let w1 = bootstrap(&cfg, Exec::Sequential).unwrap();
    let w2 = bootstrap(&cfg, Exec::default()).unwrap();
    assert_eq!(w1.benchmark, w2.benchmark);
    assert_eq!(w1.benchmark.len(), cfg.r * w1.shape.total_cols());
    let vr_ids: BTreeSet<u32> = w1.vr_shard.ids().iter().copied().collect();
    let test_ids: BTreeSet<u32> = w1.test.ids().iter().copied().collect();
    assert!(vr_ids.is_disjoint(&test_ids));
    for shard in w1.shards.values() {
        assert!(shard.ids().iter().all(|i| !vr_ids.contains(i) && !test_ids.contains(i)));
    }
    assert!(!w1.aggregator_pool.contains(&w1.verifier));
    assert_eq!(w1.dns.len() + w1.aggregator_pool.len() + 1, cfg.dn_count + cfg.non_dn_count);
}

#[test]
fn winner_is_the_closest_candidate() {
    let cfg = ExperimentConfig { rounds: 8, ..small() };
    let mut world = bootstrap(&cfg, Exec::default()).unwrap();
    for round in 1..=cfg.rounds as u64 {
        let before = world.benchmark.clone();
        let t = run_round(&mut world, round).unwrap();
        let w = t.winner().expect("a candidate each round");
        for c in &t.candidates {
            let d = hamming(c.bits.as_ref().unwrap(), &before).unwrap();
            assert_eq!(c.distance, Some(d));
            assert!(w.distance.unwrap() <= d);
        }
        assert_eq!(t.benchmark, *w.bits.as_ref().unwrap());
    }
}

#[test]
fn every_message_is_metered_at_its_wire_size() {
    let cfg = small();
    let rep = run_experiment(&cfg, Exec::default()).unwrap();
    let shape = cfg.shape();
    for t in &rep.transcripts {
        for m in &t.messages {
            assert!(m.bytes > 0);
            assert_eq!(m.bytes, m.kind.size(&shape, cfg.r));
            assert_ne!(m.sender, m.receiver);
        }
        let count = |k| t.messages.iter().filter(|m| m.kind == k).count();
        let q = t.election.trainers.len();
        let p = t.election.aggregators.len();
        assert_eq!(count(PayloadKind::MaskedGradient), q);
        assert_eq!(count(PayloadKind::MaskResidual), q - p);
        assert_eq!(count(PayloadKind::BitString), p);
        assert_eq!(count(PayloadKind::Aggregate), 0);
        assert_eq!(count(PayloadKind::ScoreReport), q + p);
        assert_eq!(count(PayloadKind::Notification), q + p + 1);
        assert_eq!(t.verification_bytes, t.bytes_by_kind(PayloadKind::BitString));
        assert_eq!(t.full_gradient_bytes, p * PayloadKind::MaskedGradient.size(&shape, cfg.r));
    }
}

#[test]
fn fedavg_skips_verification() {
    let cfg = ExperimentConfig {
        defense: Defense::Fedavg,
        ..small()
    };
    let rep = run_experiment(&cfg, Exec::default()).unwrap();
    for t in &rep.transcripts {
        assert_eq!(t.bytes_by_kind(PayloadKind::BitString), 0);
        assert!(t.bytes_by_kind(PayloadKind::Aggregate) > 0);
        assert!(t.candidates.iter().all(|c| c.accepted));
    }
    assert_eq!(rep.summary.verification_ratio, None);
}

#[test]
fn noise_groups_never_win_under_interleaved_placement() {
    for seed in 1..=4 {
        let cfg = ExperimentConfig {
            seed,
            rounds: 20,
            attack: AttackKind::GaussianNoise,
            malicious_fraction: 0.5,
            collusion: false,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.placement, Placement::Interleaved);
        let rep = run_experiment(&cfg, Exec::default()).unwrap();
        assert_eq!(rep.summary.malicious_wins, 0, "seed {seed}");
    }
}

#[test]
fn tampered_group_is_excluded_and_its_members_flagged() {
    let cfg = ExperimentConfig {
        rounds: 30,
        attack: AttackKind::MaskTamper,
        malicious_fraction: 0.1,
        ..ExperimentConfig::default()
    };
    let rep = run_experiment(&cfg, Exec::default()).unwrap();
    let tamperer = rep.summary.malicious_nodes[0];
    let mut seen = 0;
    for t in &rep.transcripts {
        for c in &t.candidates {
            if c.trainers.contains(&tamperer) {
                seen += 1;
                assert!(!c.mask_ok);
                assert!(!c.accepted, "round {}", t.round_id);
                let entry = t.ledger.iter().find(|(id, _)| *id == tamperer).unwrap().1;
                assert!(entry.flagged);
                assert_eq!(entry.phi_distance, 0.0);
            } else {
                assert!(c.mask_ok);
            }
        }
    }
    assert!(seen > 0, "tamperer never trained");
}
