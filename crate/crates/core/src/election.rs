//! Reputation-weighted hash-ring role election.
//!
//! Each round every node gets `S(i) = α1·φ_time(i) + α2·φ_dist(i)` where the
//! φ are quantile-normalised ranks `(R - rank) / (R - 1)`. Data nodes and
//! non-data nodes sit on two rings whose arcs are proportional to `S`; a
//! per-round start point derived from `(round_id, seed, pool)` picks who
//! serves by walking clockwise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::NodeId;

/// Minimum score a node keeps on the ring.
pub const SCORE_FLOOR: f64 = 1e-3;
/// Quantile assigned when a node produced no evidence this round.
pub const NEUTRAL_QUANTILE: f64 = 0.5;

pub fn quantile_score(rank: usize, total: usize) -> Result<f64> {
    if total <= 1 {
        return Err(Error::DegeneratePool);
    }
    if rank == 0 || rank > total {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} outside 1..={total}"
        )));
    }
    Ok((total - rank) as f64 / (total - 1) as f64)
}

/// Quantile scores for a ranking list, `R` being the list length.
pub fn quantile_scores(rankings: &[(NodeId, usize)]) -> Result<BTreeMap<NodeId, f64>> {
    let total = rankings.len();
    rankings
        .iter()
        .map(|&(id, rank)| Ok((id, quantile_score(rank, total)?)))
        .collect()
}

/// Competition ranking ascending by value: ties share the better rank.
pub fn competition_ranks(values: &[(NodeId, f64)]) -> Vec<(NodeId, usize)> {
    values
        .iter()
        .map(|&(id, v)| (id, 1 + values.iter().filter(|&&(_, w)| w < v).count()))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeMetrics {
    /// Simulated seconds spent on this round's work.
    pub time: Option<f64>,
    /// Hamming distance of the node's group sketch to the benchmark.
    pub distance: Option<u32>,
    /// Member of a group the verifier rejected this round.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub last_round_time: Option<f64>,
    pub last_round_lsh_distance: Option<u32>,
    pub flagged: bool,
    pub phi_time: f64,
    pub phi_distance: f64,
    pub score: f64,
}

impl Default for LedgerEntry {
    fn default() -> Self {
        LedgerEntry {
            last_round_time: None,
            last_round_lsh_distance: None,
            flagged: false,
            phi_time: NEUTRAL_QUANTILE,
            phi_distance: NEUTRAL_QUANTILE,
            score: NEUTRAL_QUANTILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReputationLedger {
    alpha1: f64,
    alpha2: f64,
    entries: BTreeMap<NodeId, LedgerEntry>,
}

impl ReputationLedger {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha1) || (alpha1 + alpha2 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "reputation weights must be non-negative and sum to 1 (got {alpha1}, {alpha2})"
            )));
        }
        Ok(ReputationLedger {
            alpha1,
            alpha2,
            entries: nodes.into_iter().map(|n| (n, LedgerEntry::default())).collect(),
        })
    }

    pub fn alphas(&self) -> (f64, f64) {
        (self.alpha1, self.alpha2)
    }

    pub fn entry(&self, id: NodeId) -> Option<&LedgerEntry> {
        self.entries.get(&id)
    }

    pub fn score(&self, id: NodeId) -> f64 {
        self.entries.get(&id).map_or(NEUTRAL_QUANTILE, |e| e.score)
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeId, &LedgerEntry)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn pool_scores(&self, pool: &[NodeId]) -> Vec<(NodeId, f64)> {
        pool.iter().map(|&id| (id, self.score(id))).collect()
    }

    /// Recomputes every score from this round's metrics alone.
    pub fn compute_scores(&self, metrics: &BTreeMap<NodeId, NodeMetrics>) -> Self {
        let get = |id: &NodeId| metrics.get(id).copied().unwrap_or_default();

        let times: Vec<(NodeId, f64)> = self
            .entries
            .keys()
            .filter_map(|id| get(id).time.map(|t| (*id, t)))
            .collect();
        let phi_time = quantiles_or_neutral(&competition_ranks(&times));

        // Flagged nodes take the bottom rank; the rest rank by distance.
        let evidenced: Vec<NodeId> = self
            .entries
            .keys()
            .copied()
            .filter(|id| get(id).flagged || get(id).distance.is_some())
            .collect();
        let total = evidenced.len();
        let clean: Vec<(NodeId, f64)> = evidenced
            .iter()
            .filter(|id| !get(id).flagged)
            .map(|id| (*id, get(id).distance.unwrap_or(0) as f64))
            .collect();
        let mut dist_ranks: Vec<(NodeId, usize)> = competition_ranks(&clean);
        dist_ranks.extend(
            evidenced
                .iter()
                .filter(|id| get(id).flagged)
                .map(|&id| (id, total)),
        );
        let phi_dist: BTreeMap<NodeId, f64> = if total == 1 {
            dist_ranks
                .iter()
                .map(|&(id, _)| (id, if get(&id).flagged { 0.0 } else { 1.0 }))
                .collect()
        } else {
            quantiles_with_total(&dist_ranks, total)
        };

        let entries = self
            .entries
            .keys()
            .map(|&id| {
                let m = get(&id);
                let pt = phi_time.get(&id).copied().unwrap_or(NEUTRAL_QUANTILE);
                let pd = phi_dist.get(&id).copied().unwrap_or(NEUTRAL_QUANTILE);
                (
                    id,
                    LedgerEntry {
                        last_round_time: m.time,
                        last_round_lsh_distance: m.distance,
                        flagged: m.flagged,
                        phi_time: pt,
                        phi_distance: pd,
                        score: self.alpha1 * pt + self.alpha2 * pd,
                    },
                )
            })
            .collect();
        ReputationLedger {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            entries,
        }
    }
}

fn quantiles_with_total(ranks: &[(NodeId, usize)], total: usize) -> BTreeMap<NodeId, f64> {
    ranks
        .iter()
        .map(|&(id, r)| (id, quantile_score(r, total).expect("ranks within 1..=total")))
        .collect()
}

fn quantiles_or_neutral(ranks: &[(NodeId, usize)]) -> BTreeMap<NodeId, f64> {
    match ranks.len() {
        0 => BTreeMap::new(),
        1 => ranks.iter().map(|&(id, _)| (id, 1.0)).collect(),
        n => quantiles_with_total(ranks, n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PoolTag {
    DataNodes,
    NonDataNodes,
}

impl PoolTag {
    fn byte(self) -> u8 {
        match self {
            PoolTag::DataNodes => 0,
            PoolTag::NonDataNodes => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub node: NodeId,
    pub start: f64,
    pub end: f64,
}

impl Arc {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashRing {
    arcs: Vec<Arc>,
    tag: PoolTag,
}

/// Arcs in ascending node id, each of length `max(S, floor) / Σ max(S, floor)`.
pub fn build_ring(pool: &[(NodeId, f64)], tag: PoolTag) -> Result<HashRing> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut sorted: Vec<(NodeId, f64)> = pool
        .iter()
        .map(|&(id, s)| (id, if s.is_finite() { s.max(SCORE_FLOOR) } else { SCORE_FLOOR }))
        .collect();
    sorted.sort_by_key(|&(id, _)| id);
    let total: f64 = sorted.iter().map(|&(_, s)| s).sum();
    let mut arcs = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    for (i, &(node, s)) in sorted.iter().enumerate() {
        let start = acc;
        acc += s;
        let end = if i + 1 == sorted.len() { 1.0 } else { acc / total };
        arcs.push(Arc { node, start: start / total, end });
    }
    // Re-stitch so neighbouring arcs share exact endpoints.
    for i in 1..arcs.len() {
        arcs[i].start = arcs[i - 1].end;
    }
    Ok(HashRing { arcs, tag })
}

impl HashRing {
    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn tag(&self) -> PoolTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn weight(&self, node: NodeId) -> Option<f64> {
        self.arcs.iter().find(|a| a.node == node).map(Arc::len)
    }

    fn arc_index(&self, point: f64) -> usize {
        self.arcs
            .partition_point(|a| a.end <= point)
            .min(self.arcs.len() - 1)
    }
}

/// xxHash64 (seed 0) of `round_id ‖ seed ‖ pool tag`, little-endian.
pub fn hash64(round_id: u64, seed: u64, tag: PoolTag) -> u64 {
    let mut buf = [0u8; 17];
    buf[..8].copy_from_slice(&round_id.to_le_bytes());
    buf[8..16].copy_from_slice(&seed.to_le_bytes());
    buf[16] = tag.byte();
    xxh64(&buf, 0)
}

/// Start point in `[0, 1)`: the top 53 bits of the hash over `2^53`.
pub fn ring_start(round_id: u64, seed: u64, tag: PoolTag) -> f64 {
    (hash64(round_id, seed, tag) >> 11) as f64 / (1u64 << 53) as f64
}

/// Distinct nodes clockwise from the round's start point.
pub fn traverse(ring: &HashRing, round_id: u64, seed: u64, count: usize) -> Result<Vec<NodeId>> {
    if count == 0 || count > ring.len() {
        return Err(Error::CountExceedsPool {
            count,
            pool: ring.len(),
        });
    }
    let first = ring.arc_index(ring_start(round_id, seed, ring.tag));
    Ok((0..count)
        .map(|j| ring.arcs[(first + j) % ring.len()].node)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub aggregator: NodeId,
    pub trainers: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Election {
    pub round_id: u64,
    /// Local trainers in selection order.
    pub trainers: Vec<NodeId>,
    pub aggregators: Vec<NodeId>,
    pub groups: Vec<Group>,
    pub dn_ring: Option<HashRing>,
    pub non_dn_ring: Option<HashRing>,
}

impl Election {
    /// Selection probability of `node` in its pool's ring (uniform in round one).
    pub fn ring_weight(&self, node: NodeId, dns: &[NodeId], non_dns: &[NodeId]) -> f64 {
        let (ring, pool) = if dns.contains(&node) {
            (&self.dn_ring, dns)
        } else {
            (&self.non_dn_ring, non_dns)
        };
        match ring {
            Some(r) => r.weight(node).unwrap_or(0.0),
            None => 1.0 / pool.len() as f64,
        }
    }
}

/// Round-robin split of the trainer order into `p` groups.
pub fn form_groups(trainers: &[NodeId], aggregators: &[NodeId]) -> Vec<Group> {
    let p = aggregators.len();
    aggregators
        .iter()
        .enumerate()
        .map(|(j, &aggregator)| Group {
            aggregator,
            trainers: trainers.iter().skip(j).step_by(p).copied().collect(),
        })
        .collect()
}

/// Role election for round `round_id` (rounds count from 1).
///
/// Round one: every data node trains, aggregators are a uniform draw.
/// Later rounds: two reputation rings, `q` trainers and `p` aggregators.
pub fn elect_roles(
    dns: &[NodeId],
    non_dns: &[NodeId],
    ledger: &ReputationLedger,
    q: usize,
    p: usize,
    round_id: u64,
    seed: u64,
) -> Result<Election> {
    if q == 0 || q > dns.len() {
        return Err(Error::InsufficientPool {
            what: "data nodes",
            need: q,
            have: dns.len(),
        });
    }
    if p == 0 || p > non_dns.len() {
        return Err(Error::InsufficientPool {
            what: "non-data nodes",
            need: p,
            have: non_dns.len(),
        });
    }
    if round_id <= 1 {
        let mut trainers = dns.to_vec();
        trainers.sort();
        let mut pool = non_dns.to_vec();
        pool.sort();
        let mut rng = rng::rng(rng::stream_seed(seed, Stream::Roles, &[round_id]));
        let (chosen, _) = pool.partial_shuffle(&mut rng, p);
        let aggregators = chosen.to_vec();
        return Ok(Election {
            round_id,
            groups: form_groups(&trainers, &aggregators),
            trainers,
            aggregators,
            dn_ring: None,
            non_dn_ring: None,
        });
    }
    let dn_ring = build_ring(&ledger.pool_scores(dns), PoolTag::DataNodes)?;
    let non_dn_ring = build_ring(&ledger.pool_scores(non_dns), PoolTag::NonDataNodes)?;
    let trainers = traverse(&dn_ring, round_id, seed, q)?;
    let aggregators = traverse(&non_dn_ring, round_id, seed, p)?;
    Ok(Election {
        round_id,
        groups: form_groups(&trainers, &aggregators),
        trainers,
        aggregators,
        dn_ring: Some(dn_ring),
        non_dn_ring: Some(non_dn_ring),
    })
}
