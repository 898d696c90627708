//! Sign-projection sketches of gradient updates.
//!
//! Every column of every gradient matrix is dotted with `r` shared random
//! hyperplanes; each dot product contributes one bit (`1` when `s >= 0`).
//! Candidates are compared against a benchmark sketch by Hamming distance and
//! only the closest ones are accepted.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{self, Stream};
use crate::tensor::{GradientUpdate, ModelShape, ShapeId, ShapeRegistry};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneSet {
    /// `planes[i][k]` has the row count of matrix `i`.
    planes: Vec<Vec<Vec<f64>>>,
    r: usize,
    master_seed: u64,
    shape_id: ShapeId,
}

fn hyperplane_seed(master_seed: u64, matrix: usize, k: usize) -> u64 {
    // (i, k) packed into one word keeps the derivation injective.
    rng::stream_seed(
        master_seed,
        Stream::Hyperplanes,
        &[((matrix as u64) << 32) | k as u64],
    )
}

pub fn generate_hyperplanes(
    registry: &ShapeRegistry,
    shape_id: ShapeId,
    r: usize,
    master_seed: u64,
) -> Result<HyperplaneSet> {
    let shape = registry.get(shape_id)?;
    HyperplaneSet::for_shape(shape, r, master_seed)
}

impl HyperplaneSet {
    pub fn for_shape(shape: &ModelShape, r: usize, master_seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidArgument("need at least one hyperplane".into()));
        }
        let planes = shape
            .dims
            .iter()
            .enumerate()
            .map(|(i, &(rows, _))| {
                (0..r)
                    .map(|k| {
                        let mut bump = 0u64;
                        loop {
                            let v = rng::normal_vec(rows, hyperplane_seed(master_seed, i, k) ^ bump);
                            if v.iter().any(|&x| x != 0.0) {
                                break v;
                            }
                            bump += 1;
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(HyperplaneSet {
            planes,
            r,
            master_seed,
            shape_id: shape.id(),
        })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn shape_id(&self) -> ShapeId {
        self.shape_id
    }

    pub fn planes(&self, matrix: usize) -> &[Vec<f64>] {
        &self.planes[matrix]
    }

    pub fn num_matrices(&self) -> usize {
        self.planes.len()
    }

    pub fn total_vectors(&self) -> usize {
        self.planes.iter().map(Vec::len).sum()
    }
}

/// Packed bits, most significant bit first within each 64-bit word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
    shape_id: ShapeId,
    r: usize,
}

impl BitString {
    pub fn zeros(len: usize, shape_id: ShapeId, r: usize) -> Self {
        BitString {
            words: vec![0; len.div_ceil(64)],
            len,
            shape_id,
            r,
        }
    }

    pub fn from_bits(bits: &[bool], shape_id: ShapeId, r: usize) -> Self {
        let mut out = Self::zeros(bits.len(), shape_id, r);
        for (i, &b) in bits.iter().enumerate() {
            out.set(i, b);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape_id(&self) -> ShapeId {
        self.shape_id
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.words[i / 64] >> (63 - i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len);
        let mask = 1u64 << (63 - i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= !0u64 << (64 - rem);
            }
        }
    }

    /// Wire size: 4-byte length prefix plus the packed bytes.
    pub fn wire_len(&self) -> usize {
        4 + self.len.div_ceil(8)
    }

    /// `u32` little-endian bit length, then `ceil(L/8)` bytes, MSB first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        let nbytes = self.len.div_ceil(8);
        out.extend(self.words.iter().flat_map(|w| w.to_be_bytes()).take(nbytes));
        out
    }

    pub fn from_bytes(bytes: &[u8], shape_id: ShapeId, r: usize) -> Result<Self> {
        let header: [u8; 4] = bytes
            .get(..4)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| Error::Format("bit string shorter than its header".into()))?;
        let len = u32::from_le_bytes(header) as usize;
        let body = &bytes[4..];
        if body.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "bit string of {len} bits needs {} bytes, got {}",
                len.div_ceil(8),
                body.len()
            )));
        }
        let mut out = Self::zeros(len, shape_id, r);
        for (wi, chunk) in body.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            out.words[wi] = u64::from_be_bytes(buf);
        }
        out.clear_tail();
        Ok(out)
    }
}

pub fn hamming(a: &BitString, b: &BitString) -> Result<u32> {
    if a.len != b.len || a.shape_id != b.shape_id {
        return Err(Error::LengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// Sketch of `g`: bits in ascending (matrix, column, hyperplane) order.
pub fn project(g: &GradientUpdate, planes: &HyperplaneSet, exec: Exec) -> Result<BitString> {
    if g.shape_id() != planes.shape_id
        || g.matrices().len() != planes.planes.len()
        || g.matrices()
            .iter()
            .zip(&planes.planes)
            .any(|(m, hs)| hs.first().is_some_and(|h| h.len() != m.rows()))
    {
        return Err(Error::ShapeMismatch(
            "gradient does not match the hyperplane set".into(),
        ));
    }
    let r = planes.r;
    let per_matrix: Vec<Vec<bool>> = exec.map_range(g.matrices().len(), |i| {
        let m = &g.matrices()[i];
        let dots: Vec<Vec<f64>> = planes.planes[i].iter().map(|h| m.column_dots(h)).collect();
        let mut bits = Vec::with_capacity(m.cols() * r);
        for j in 0..m.cols() {
            for dk in &dots {
                bits.push(dk[j] >= 0.0);
            }
        }
        bits
    });
    let bits: Vec<bool> = per_matrix.into_iter().flatten().collect();
    Ok(BitString::from_bits(&bits, g.shape_id(), r))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    /// All candidates, ascending by distance, ties by node id.
    pub ordered: Vec<(NodeId, u32)>,
    pub accepted: Vec<NodeId>,
}

pub fn rank_candidates(
    candidates: &[(NodeId, BitString)],
    benchmark: &BitString,
    filter_rank: usize,
) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if filter_rank == 0 {
        return Err(Error::InvalidArgument("filter_rank must be >= 1".into()));
    }
    let mut ordered = candidates
        .iter()
        .map(|(id, bits)| Ok((*id, hamming(bits, benchmark)?)))
        .collect::<Result<Vec<_>>>()?;
    ordered.sort_by_key(|&(id, d)| (d, id));
    let accepted = ordered.iter().take(filter_rank).map(|&(id, _)| id).collect();
    Ok(Ranking { ordered, accepted })
}

#[derive(Debug, Clone)]
pub struct CorrelationConfig {
    pub shape: ModelShape,
    pub r: usize,
    pub pairs: usize,
    /// Perturbation scale relative to unit-variance base gradients, graded
    /// linearly across the pairs.
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            shape: ModelShape::mlp(128, 64, 10),
            r: 8,
            pairs: 250,
            scale_range: (0.0, 1.0),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationPoint {
    pub perturbation: f64,
    pub euclidean: f64,
    pub hamming: u32,
}

#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub points: Vec<CorrelationPoint>,
    pub pearson: f64,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Pearson correlation between sketch Hamming distance and Euclidean
/// distance over random gradient pairs at graded perturbation scales.
pub fn correlation_study(cfg: &CorrelationConfig, exec: Exec) -> Result<CorrelationReport> {
    if cfg.pairs < 30 {
        return Err(Error::InvalidArgument(format!(
            "correlation study needs at least 30 pairs, got {}",
            cfg.pairs
        )));
    }
    let planes = HyperplaneSet::for_shape(&cfg.shape, cfg.r, cfg.seed)?;
    let n = cfg.shape.num_params();
    let (lo, hi) = cfg.scale_range;
    let points = exec.map_range(cfg.pairs, |p| -> Result<CorrelationPoint> {
        let t = p as f64 / (cfg.pairs - 1) as f64;
        let scale = lo + (hi - lo) * t;
        let base_seed = rng::stream_seed(cfg.seed, Stream::Correlation, &[p as u64, 0]);
        let noise_seed = rng::stream_seed(cfg.seed, Stream::Correlation, &[p as u64, 1]);
        let base = GradientUpdate::from_flat(&cfg.shape, &rng::normal_vec(n, base_seed))?;
        let noise = rng::normal_vec(n, noise_seed);
        let mut other = base.clone();
        for (x, e) in other.values_mut().zip(&noise) {
            *x += scale * e;
        }
        let a = project(&base, &planes, Exec::Sequential)?;
        let b = project(&other, &planes, Exec::Sequential)?;
        Ok(CorrelationPoint {
            perturbation: scale,
            euclidean: base.euclidean(&other)?,
            hamming: hamming(&a, &b)?,
        })
    });
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.euclidean).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.hamming as f64).collect();
    Ok(CorrelationReport {
        pearson: pearson(&xs, &ys),
        points,
    })
}
