use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use crate::election::{elect_roles, Election, LedgerEntry, NodeMetrics, ReputationLedger};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fixed::FixedPointGradient;
use crate::learner::{
    evaluate, generate_synthetic, local_train, make_partitions, split, AttackKind, AttackSpec,
    Dataset, Model,
};
use crate::lshgm::{project, rank_candidates, BitString, HyperplaneSet};
use crate::masking::{apply_mask, run_mask_chain, uniform_mask, unmask_aggregate, verify_mask_sum, MaskConfig};
use crate::protocol::config::{Defense, ExperimentConfig, PartitionKind, Placement};
use crate::protocol::meter::{meter, Notice, Payload, PayloadKind};
use crate::rng::{self, Stream};
use crate::tensor::{GradientUpdate, ModelShape};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDescriptor {
    pub id: NodeId,
    pub is_data_node: bool,
    pub honest: bool,
    pub attack: AttackSpec,
    /// Log-space mean and spread of the simulated compute time.
    pub time_mu: f64,
    pub time_sigma: f64,
}

impl NodeDescriptor {
    /// Simulated seconds this node spends on round `round`.
    pub fn compute_time(&self, seed: u64, round: u64) -> f64 {
        let z = rng::normal_vec(1, rng::stream_seed(seed, Stream::ComputeTime, &[round, self.id as u64]))[0];
        (self.time_mu + self.time_sigma * z).exp()
    }
}

/// Everything that persists between rounds.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: ExperimentConfig,
    pub shape: ModelShape,
    pub planes: HyperplaneSet,
    pub model: Model,
    /// Sketch of the last accepted update.
    pub benchmark: BitString,
    pub ledger: ReputationLedger,
    pub nodes: BTreeMap<NodeId, NodeDescriptor>,
    pub dns: Vec<NodeId>,
    /// Non-data nodes other than the verifier.
    pub aggregator_pool: Vec<NodeId>,
    pub verifier: NodeId,
    pub shards: BTreeMap<NodeId, Dataset>,
    pub vr_shard: Dataset,
    pub test: Dataset,
    pub exec: Exec,
}

impl World {
    pub fn malicious(&self) -> Vec<NodeId> {
        self.nodes.values().filter(|n| !n.honest).map(|n| n.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub kind: PayloadKind,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub aggregator: NodeId,
    pub trainers: Vec<NodeId>,
    /// Every member uploaded; otherwise the group is dropped.
    pub complete: bool,
    /// Masks actually applied sum to `R_sum`.
    pub mask_ok: bool,
    pub bits: Option<BitString>,
    pub distance: Option<u32>,
    pub accepted: bool,
    pub contains_malicious: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTranscript {
    pub round_id: u64,
    pub election: Election,
    /// Score and ring share of every electable node going into the round.
    pub pre_scores: Vec<(NodeId, f64, f64)>,
    pub messages: Vec<MessageRecord>,
    pub candidates: Vec<CandidateRecord>,
    /// `B^t`, unchanged when nothing was accepted.
    pub benchmark: BitString,
    pub applied: bool,
    pub ledger: Vec<(NodeId, LedgerEntry)>,
    pub accuracy: f64,
    pub verification_bytes: usize,
    /// What the same candidates would have sent as full gradients.
    pub full_gradient_bytes: usize,
}

impl RoundTranscript {
    pub fn winner(&self) -> Option<&CandidateRecord> {
        self.candidates.iter().find(|c| c.accepted)
    }

    pub fn bytes_by_kind(&self, kind: PayloadKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).map(|m| m.bytes).sum()
    }
}

fn choose_malicious(cfg: &ExperimentConfig, dns: &[NodeId]) -> BTreeSet<NodeId> {
    let m = cfg.malicious_count();
    match cfg.placement {
        Placement::Random => {
            // one shuffle for every fraction, so larger attacker sets contain smaller ones
            let mut pool = dns.to_vec();
            pool.shuffle(&mut rng::rng(rng::stream_seed(cfg.seed, Stream::Placement, &[])));
            pool.into_iter().take(m).collect()
        }
        Placement::Interleaved => dns.iter().rev().step_by(2).take(m).copied().collect(),
        Placement::Contiguous => dns.iter().rev().take(m).copied().collect(),
    }
}

fn load_pools(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let client_pool = match cfg.partition {
        // label skew draws unevenly from the classes and needs slack
        PartitionKind::LabelSkew => 2 * cfg.dn_count * cfg.samples_per_node,
        _ => cfg.dn_count * cfg.samples_per_node,
    };
    let data = match &cfg.dataset {
        None => generate_synthetic(
            &cfg.synthetic_spec(),
            cfg.test_samples + cfg.vr_samples + client_pool,
            rng::stream_seed(cfg.seed, Stream::Dataset, &[]),
        ),
        Some(path) => {
            let d = Dataset::load(path)?;
            if d.dim() != cfg.input_dim || d.classes() != cfg.classes {
                return Err(Error::InvalidArgument(format!(
                    "{} holds {}-dimensional data with {} classes, config expects {} and {}",
                    path.display(),
                    d.dim(),
                    d.classes(),
                    cfg.input_dim,
                    cfg.classes
                )));
            }
            d
        }
    };
    let pool = client_pool.min(data.len().saturating_sub(cfg.test_samples + cfg.vr_samples));
    let mut parts = split(
        &data,
        &[cfg.test_samples, cfg.vr_samples, pool],
        rng::stream_seed(cfg.seed, Stream::Dataset, &[1]),
    )?
    .into_iter();
    let (test, vr, pool) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    Ok((test, vr, pool))
}

/// Builds the initial world: data, shards, hyperplanes, the global model and
/// the verifier's benchmark `B^0`.
pub fn bootstrap(cfg: &ExperimentConfig, exec: Exec) -> Result<World> {
    cfg.validate()?;
    let shape = cfg.shape();
    let dns: Vec<NodeId> = (0..cfg.dn_count as NodeId).collect();
    let non_dns: Vec<NodeId> = (cfg.dn_count as NodeId..(cfg.dn_count + cfg.non_dn_count) as NodeId).collect();
    let verifier = *non_dns.last().expect("validated non-empty");
    let aggregator_pool = non_dns[..non_dns.len() - 1].to_vec();

    let (test, vr_shard, pool) = load_pools(cfg)?;
    let vr_shard = vr_shard.subset(&(0..vr_shard.len()).collect::<Vec<_>>(), verifier);
    let shards: BTreeMap<NodeId, Dataset> = dns
        .iter()
        .copied()
        .zip(make_partitions(&pool, &dns, cfg.partition_scheme(), cfg.seed)?)
        .collect();

    let planes = HyperplaneSet::for_shape(&shape, cfg.r, cfg.seed)?;
    let model = Model::new(cfg.input_dim, cfg.hidden, cfg.classes, rng::stream_seed(cfg.seed, Stream::ModelInit, &[]));
    let vr_update = local_train(
        &model,
        &vr_shard,
        cfg.train_params(),
        rng::stream_seed(cfg.seed, Stream::Training, &[0, verifier as u64]),
    )?;
    let benchmark = project(&vr_update, &planes, exec)?;

    let bad = choose_malicious(cfg, &dns);
    let mut nodes = BTreeMap::new();
    for &id in dns.iter().chain(&non_dns) {
        let is_dn = (id as usize) < cfg.dn_count;
        let honest = !bad.contains(&id);
        nodes.insert(
            id,
            NodeDescriptor {
                id,
                is_data_node: is_dn,
                honest,
                attack: if honest { AttackSpec { kind: AttackKind::None, ..cfg.attack_spec() } } else { cfg.attack_spec() },
                time_mu: cfg.time_mu,
                time_sigma: cfg.time_sigma,
            },
        );
    }
    let ledger = ReputationLedger::new(dns.iter().chain(&aggregator_pool).copied(), cfg.alpha1, cfg.alpha2)?;
    Ok(World {
        cfg: cfg.clone(),
        shape,
        planes,
        model,
        benchmark,
        ledger,
        nodes,
        dns,
        aggregator_pool,
        verifier,
        shards,
        vr_shard,
        test,
        exec,
    })
}

#[derive(Default)]
struct Outbox(Vec<MessageRecord>);

impl Outbox {
    fn send(&mut self, sender: NodeId, receiver: NodeId, payload: Payload) -> usize {
        let bytes = meter(&payload);
        self.0.push(MessageRecord {
            sender,
            receiver,
            kind: payload.kind(),
            bytes,
        });
        bytes
    }
}

struct Upload {
    masked: Option<FixedPointGradient>,
    mask: FixedPointGradient,
}

struct GroupResult {
    aggregate: Option<GradientUpdate>,
    bits: Option<BitString>,
    mask_ok: bool,
}

/// One full round: election, masked training, per-group sketching,
/// verification against the benchmark, and scoring.
pub fn run_round(world: &mut World, round: u64) -> Result<RoundTranscript> {
    let cfg = world.cfg.clone();
    let seed = cfg.seed;
    let exec = world.exec;
    let params = cfg.fixed_params();
    let vr = world.verifier;
    let lshfed = cfg.defense == Defense::Lshfed;

    let election = elect_roles(
        &world.dns,
        &world.aggregator_pool,
        &world.ledger,
        cfg.lt_count,
        cfg.ag_count,
        round,
        seed,
    )?;
    let pre_scores = world
        .dns
        .iter()
        .chain(&world.aggregator_pool)
        .map(|&id| (id, world.ledger.score(id), election.ring_weight(id, &world.dns, &world.aggregator_pool)))
        .collect();

    let mut out = Outbox::default();

    // Step 1: roles, mask chains, local training, masked uploads.
    for &lt in &election.trainers {
        out.send(vr, lt, Payload::Notification { round, node: lt, notice: Notice::Trainer });
    }
    for &ag in &election.aggregators {
        out.send(vr, ag, Payload::Notification { round, node: ag, notice: Notice::Aggregator });
    }
    let mask_cfgs: Vec<MaskConfig> = election
        .groups
        .iter()
        .map(|g| MaskConfig::new(&world.shape, params, cfg.r_sum, g.trainers.clone()))
        .collect();
    let chains = exec
        .map(&election.groups.iter().zip(&mask_cfgs).collect::<Vec<_>>(), |(g, mc)| {
            run_mask_chain(mc, rng::stream_seed(seed, Stream::Mask, &[round, g.aggregator as u64]))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for chain in &chains {
        for w in chain.windows(2) {
            out.send(w[0].owner, w[1].owner, Payload::MaskResidual(&w[0].residual_out));
        }
    }
    let chain_mask: BTreeMap<NodeId, &FixedPointGradient> =
        chains.iter().flatten().map(|s| (s.owner, &s.mask)).collect();

    let model = &world.model;
    let nodes = &world.nodes;
    let shards = &world.shards;
    let uploads: Vec<Upload> = exec
        .map(&election.trainers, |&lt| -> Result<Upload> {
            let node = &nodes[&lt];
            let shard = node.attack.poison_shard(&shards[&lt]);
            let update = local_train(
                model,
                &shard,
                cfg.train_params(),
                rng::stream_seed(seed, Stream::Training, &[round, lt as u64]),
            )?;
            let update = node.attack.corrupt_update(update, rng::derive(seed, round), lt)?;
            let mut mask = chain_mask[&lt].clone();
            if node.attack.kind == AttackKind::MaskTamper {
                mask = uniform_mask(&mask, rng::stream_seed(seed, Stream::Tamper, &[round, lt as u64]));
            }
            let masked = match apply_mask(&update, &mask, params) {
                Ok(m) => Some(m),
                Err(Error::Overflow { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(Upload { masked, mask })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let upload_of: BTreeMap<NodeId, &Upload> = election.trainers.iter().copied().zip(&uploads).collect();
    for g in &election.groups {
        for lt in &g.trainers {
            if let Some(m) = &upload_of[lt].masked {
                out.send(*lt, g.aggregator, Payload::MaskedGradient(m));
            }
        }
    }

    // Step 2: each aggregator unmasks its group and sketches the mean.
    let planes = &world.planes;
    let shape = &world.shape;
    let groups: Vec<GroupResult> = exec
        .map(&election.groups.iter().zip(&mask_cfgs).collect::<Vec<_>>(), |(g, mc)| -> Result<GroupResult> {
            let masks: Vec<FixedPointGradient> = g.trainers.iter().map(|lt| upload_of[lt].mask.clone()).collect();
            let mask_ok = verify_mask_sum(&masks, mc)?;
            let masked: Vec<FixedPointGradient> =
                g.trainers.iter().filter_map(|lt| upload_of[lt].masked.clone()).collect();
            let aggregate = match unmask_aggregate(&masked, mc, shape) {
                Ok(a) => Some(a),
                Err(Error::IncompleteGroup { .. }) => None,
                Err(e) => return Err(e),
            };
            let bits = match (&aggregate, lshfed) {
                (Some(a), true) => Some(project(a, planes, Exec::Sequential)?),
                _ => None,
            };
            Ok(GroupResult { aggregate, bits, mask_ok })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut verification_bytes = 0;
    let mut full_gradient_bytes = 0;
    for (g, res) in election.groups.iter().zip(&groups) {
        if let Some(bits) = &res.bits {
            verification_bytes += out.send(g.aggregator, vr, Payload::BitString(bits));
            full_gradient_bytes += PayloadKind::MaskedGradient.size(shape, cfg.r);
        } else if let (Some(agg), false) = (&res.aggregate, lshfed) {
            out.send(g.aggregator, vr, Payload::Aggregate(agg));
        }
    }

    // Step 3: verification and global aggregation.
    let mut candidates: Vec<CandidateRecord> = election
        .groups
        .iter()
        .zip(&groups)
        .map(|(g, res)| CandidateRecord {
            aggregator: g.aggregator,
            trainers: g.trainers.clone(),
            complete: res.aggregate.is_some(),
            mask_ok: res.mask_ok,
            bits: res.bits.clone(),
            distance: None,
            accepted: false,
            contains_malicious: g.trainers.iter().any(|lt| !nodes[lt].honest),
        })
        .collect();
    let mut applied = false;
    let active: Vec<NodeId> = election.trainers.iter().chain(&election.aggregators).copied().collect();
    if lshfed {
        let pool: Vec<(NodeId, BitString)> = candidates
            .iter()
            .filter_map(|c| c.bits.clone().map(|b| (c.aggregator, b)))
            .collect();
        if !pool.is_empty() {
            let ranking = rank_candidates(&pool, &world.benchmark, cfg.filter_rank)?;
            for (ag, d) in &ranking.ordered {
                let c = candidates.iter_mut().find(|c| c.aggregator == *ag).expect("ranked candidate exists");
                c.distance = Some(*d);
                c.accepted = ranking.accepted.contains(ag);
            }
            let accepted: Vec<(&GradientUpdate, f64)> = election
                .groups
                .iter()
                .zip(&groups)
                .filter(|(g, _)| ranking.accepted.contains(&g.aggregator))
                .map(|(g, r)| (r.aggregate.as_ref().expect("candidates are complete"), g.trainers.len() as f64))
                .collect();
            let merged = GradientUpdate::weighted_mean(&accepted)?;
            for &ag in &ranking.accepted {
                out.send(vr, ag, Payload::Notification { round, node: ag, notice: Notice::Accepted });
            }
            world.model.apply_update(&merged)?;
            let lead = ranking.accepted[0];
            for &n in active.iter().chain(std::iter::once(&vr)) {
                if n != lead {
                    out.send(lead, n, Payload::ModelBroadcast(world.model.params()));
                }
            }
            world.benchmark = if accepted.len() == 1 {
                pool.iter().find(|(ag, _)| *ag == lead).expect("lead is a candidate").1.clone()
            } else {
                project(&merged, planes, exec)?
            };
            applied = true;
        }
    } else {
        let parts: Vec<(&GradientUpdate, f64)> = election
            .groups
            .iter()
            .zip(&groups)
            .filter_map(|(g, r)| r.aggregate.as_ref().map(|a| (a, g.trainers.len() as f64)))
            .collect();
        if !parts.is_empty() {
            let merged = GradientUpdate::weighted_mean(&parts)?;
            world.model.apply_update(&merged)?;
            for &n in &active {
                out.send(vr, n, Payload::ModelBroadcast(world.model.params()));
            }
            candidates.iter_mut().filter(|c| c.complete).for_each(|c| c.accepted = true);
            applied = true;
        }
    }

    // Step 4: scoring from this round's evidence only.
    let mut metrics: BTreeMap<NodeId, NodeMetrics> = BTreeMap::new();
    for &n in &active {
        let seconds = nodes[&n].compute_time(seed, round);
        out.send(n, vr, Payload::ScoreReport { round, node: n, seconds });
        metrics.insert(n, NodeMetrics { time: Some(seconds), ..Default::default() });
    }
    if lshfed && applied {
        for c in &candidates {
            if let Some(d) = c.distance {
                metrics.get_mut(&c.aggregator).expect("active").distance = Some(d);
            }
            for lt in &c.trainers {
                let m = metrics.get_mut(lt).expect("active");
                if c.accepted {
                    m.distance = c.distance;
                } else {
                    m.flagged = true;
                }
            }
        }
    }
    world.ledger = world.ledger.compute_scores(&metrics);
    let accuracy = evaluate(&world.model, &world.test);

    Ok(RoundTranscript {
        round_id: round,
        election,
        pre_scores,
        messages: out.0,
        candidates,
        benchmark: world.benchmark.clone(),
        applied,
        ledger: world.ledger.entries().map(|(id, e)| (id, *e)).collect(),
        accuracy,
        verification_bytes,
        full_gradient_bytes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Mean accuracy over the last ten rounds (or all, if fewer).
    pub final_accuracy: f64,
    pub rounds: usize,
    pub verification_bytes: usize,
    pub full_gradient_bytes: usize,
    pub verification_ratio: Option<f64>,
    /// Of the groups left out, the share that held an attacker.
    pub detection_precision: Option<f64>,
    /// Of the groups holding an attacker, the share left out.
    pub detection_recall: Option<f64>,
    pub malicious_wins: usize,
    pub rounds_without_candidates: usize,
    pub malicious_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub transcripts: Vec<RoundTranscript>,
    pub summary: Summary,
}

pub const FINAL_WINDOW: usize = 10;

pub fn summarize(transcripts: &[RoundTranscript], malicious_nodes: Vec<NodeId>) -> Summary {
    let tail = &transcripts[transcripts.len().saturating_sub(FINAL_WINDOW)..];
    let final_accuracy = tail.iter().map(|t| t.accuracy).sum::<f64>() / tail.len().max(1) as f64;
    let verification_bytes: usize = transcripts.iter().map(|t| t.verification_bytes).sum();
    let full_gradient_bytes: usize = transcripts.iter().map(|t| t.full_gradient_bytes).sum();
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for c in transcripts.iter().flat_map(|t| &t.candidates) {
        match (c.contains_malicious, c.accepted) {
            (true, false) => tp += 1,
            (false, false) => fp += 1,
            (true, true) => fne += 1,
            (false, true) => {}
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Summary {
        final_accuracy,
        rounds: transcripts.len(),
        verification_bytes,
        full_gradient_bytes,
        verification_ratio: ratio(verification_bytes, full_gradient_bytes),
        detection_precision: ratio(tp, tp + fp),
        detection_recall: ratio(tp, tp + fne),
        malicious_wins: fne,
        rounds_without_candidates: transcripts.iter().filter(|t| !t.applied).count(),
        malicious_nodes,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentReport> {
    let mut world = bootstrap(cfg, exec)?;
    let transcripts = (1..=cfg.rounds as u64)
        .map(|round| run_round(&mut world, round))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&transcripts, world.malicious());
    Ok(ExperimentReport {
        config: cfg.clone(),
        transcripts,
        summary,
    })
}
