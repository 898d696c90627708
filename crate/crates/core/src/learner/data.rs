use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::NodeId;

/// Labelled examples stored row-major. Every example keeps the id it had in
/// the pool it was drawn from so shards can be checked for overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    ids: Vec<u32>,
    owner: NodeId,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} features do not split into {} rows of {dim}",
                features.len(),
                labels.len()
            )));
        }
        if classes == 0 || classes > 256 || labels.iter().any(|&l| l as usize >= classes) {
            return Err(Error::InvalidArgument(format!("labels outside 0..{classes}")));
        }
        let ids = (0..labels.len() as u32).collect();
        Ok(Dataset {
            dim,
            classes,
            features,
            labels,
            ids,
            owner: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Rows `idx` (in that order), owned by `owner`.
    pub fn subset(&self, idx: &[usize], owner: NodeId) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.features(i));
        }
        Dataset {
            dim: self.dim,
            classes: self.classes,
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            owner,
        }
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.ids.extend_from_slice(&other.ids);
        out
    }

    /// Little-endian: `u32 count, u32 dim, u32 classes`, then `count*dim` f32
    /// features, then `count` u8 labels.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.features.len() * 4 + self.len());
        for v in [self.len(), self.dim, self.classes] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &x in &self.features {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        buf.extend_from_slice(&self.labels);
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let word = |i: usize| -> Result<usize> {
            buf.get(i * 4..i * 4 + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| Error::Format("dataset header truncated".into()))
        };
        let (count, dim, classes) = (word(0)?, word(1)?, word(2)?);
        let expected = 12 + count * dim * 4 + count;
        if buf.len() != expected {
            return Err(Error::Format(format!(
                "dataset body is {} bytes, header implies {expected}",
                buf.len()
            )));
        }
        let feat_end = 12 + count * dim * 4;
        let features = buf[12..feat_end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Dataset::new(dim, classes, features, buf[feat_end..].to_vec())
    }
}

/// Gaussian blobs: one random centre per class, isotropic noise around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    /// Norm of each class centre.
    pub separation: f64,
    /// Per-feature noise standard deviation.
    pub noise: f64,
}

/// `n` examples with labels cycling `0, 1, ..` so classes stay balanced.
/// The class centres depend only on `seed`, so pools drawn with the same seed
/// and different sizes share a distribution.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Dataset {
    let centres: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let v = rng::normal_vec(spec.dim, rng::stream_seed(seed, Stream::Dataset, &[0, c as u64]));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x * spec.separation / norm).collect()
        })
        .collect();
    let noise = rng::normal_vec(n * spec.dim, rng::stream_seed(seed, Stream::Dataset, &[1, n as u64]));
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.classes;
        labels.push(c as u8);
        for (d, mu) in centres[c].iter().enumerate() {
            features.push(mu + spec.noise * noise[i * spec.dim + d]);
        }
    }
    Dataset::new(spec.dim, spec.classes, features, labels).expect("generator produces consistent rows")
}

/// Shuffles `data` and cuts it into consecutive pieces of the given sizes.
pub fn split(data: &Dataset, sizes: &[usize], seed: u64) -> Result<Vec<Dataset>> {
    let need: usize = sizes.iter().sum();
    if need > data.len() {
        return Err(Error::InsufficientData(format!(
            "need {need} examples, pool has {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut at = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let part = data.subset(&order[at..at + s], 0);
            at += s;
            part
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Partition {
    Iid,
    /// Each client draws `primary_fraction` of its shard from two seeded
    /// classes and the rest uniformly from the others.
    LabelSkew {
        primary_fraction: f64,
        /// Cap on the shard size; the pool may need to be larger than
        /// `clients * shard_size` for every class to cover its demand.
        shard_size: Option<usize>,
    },
    Dirichlet { alpha: f64 },
}

impl Partition {
    pub fn name(&self) -> String {
        match self {
            Partition::Iid => "iid".into(),
            Partition::LabelSkew { .. } => "label_skew".into(),
            Partition::Dirichlet { alpha } => format!("dirichlet({alpha})"),
        }
    }
}

/// Smallest shard the dirichlet scheme accepts before redrawing.
pub const MIN_SHARD: usize = 10;
const DIRICHLET_ATTEMPTS: u64 = 200;

/// Splits `pool` across `clients` nodes; shard `i` is owned by `owners[i]`.
pub fn make_partitions(
    pool: &Dataset,
    owners: &[NodeId],
    scheme: Partition,
    seed: u64,
) -> Result<Vec<Dataset>> {
    let clients = owners.len();
    if clients == 0 || pool.len() < clients {
        return Err(Error::InsufficientData(format!(
            "{} examples cannot cover {clients} shards",
            pool.len()
        )));
    }
    let seed = rng::stream_seed(seed, Stream::Partition, &[]);
    let groups = match scheme {
        Partition::Iid => iid_indices(pool.len(), clients, seed),
        Partition::LabelSkew {
            primary_fraction,
            shard_size,
        } => label_skew_indices(pool, clients, primary_fraction, shard_size, seed)?,
        Partition::Dirichlet { alpha } => dirichlet_indices(pool, clients, alpha, seed)?,
    };
    Ok(groups
        .iter()
        .zip(owners)
        .map(|(idx, &owner)| pool.subset(idx, owner))
        .collect())
}

fn iid_indices(n: usize, clients: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut out = vec![Vec::new(); clients];
    for (k, i) in order.into_iter().enumerate() {
        out[k % clients].push(i);
    }
    out
}

/// The two primary classes of client `client` under label skew.
pub fn primary_classes(classes: usize, client: usize, seed: u64) -> (u8, u8) {
    let mut all: Vec<u8> = (0..classes as u8).collect();
    all.shuffle(&mut rng::rng(rng::derive(seed, client as u64)));
    (all[0], all[1])
}

fn label_skew_indices(
    pool: &Dataset,
    clients: usize,
    frac: f64,
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let classes = pool.classes();
    if classes < 3 || !(0.0..=1.0).contains(&frac) {
        return Err(Error::InvalidArgument(
            "label skew needs at least 3 classes and a fraction in [0, 1]".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..pool.len() {
        by_class[pool.label(i) as usize].push(i);
    }
    let mut rng = rng::rng(seed);
    by_class.iter_mut().for_each(|c| c.shuffle(&mut rng));

    let primaries: Vec<(u8, u8)> = (0..clients).map(|c| primary_classes(classes, c, seed)).collect();
    // Exact per-class counts for every client at a given shard size. The
    // remainder over the non-primary classes rotates with the client index.
    let quotas = |size: usize| -> Vec<Vec<usize>> {
        let primary = (frac * size as f64).round() as usize;
        primaries
            .iter()
            .enumerate()
            .map(|(client, &(a, b))| {
                let mut q = vec![0usize; classes];
                q[a as usize] = primary - primary / 2;
                q[b as usize] = primary / 2;
                let others: Vec<usize> = (0..classes).filter(|&c| c != a as usize && c != b as usize).collect();
                let rest = size - primary;
                for (k, &c) in others.iter().enumerate() {
                    let slot = (k + others.len() - client % others.len()) % others.len();
                    q[c] = rest / others.len() + usize::from(slot < rest % others.len());
                }
                q
            })
            .collect()
    };
    let fits = |size: usize| {
        let q = quotas(size);
        (0..classes).all(|c| q.iter().map(|row| row[c]).sum::<usize>() <= by_class[c].len())
    };
    let mut size = cap.unwrap_or(usize::MAX).min(pool.len() / clients);
    while size > 0 && !fits(size) {
        size -= 1;
    }
    if size < 2 {
        return Err(Error::InsufficientData("class pools too small for label skew".into()));
    }

    let mut cursor = vec![0usize; classes];
    Ok(quotas(size)
        .into_iter()
        .map(|q| {
            let mut idx = Vec::with_capacity(size);
            for (c, n) in q.into_iter().enumerate() {
                idx.extend_from_slice(&by_class[c][cursor[c]..cursor[c] + n]);
                cursor[c] += n;
            }
            idx
        })
        .collect())
}

/// Per-class client proportions, `proportions[class][client]`, each row a
/// `Dir(alpha)` draw.
pub fn dirichlet_proportions(classes: usize, clients: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet alpha {alpha}: {e}")))?;
    let mut rng = rng::rng(seed);
    Ok((0..classes)
        .map(|_| loop {
            let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 {
                break draws.iter().map(|g| g / total).collect();
            }
        })
        .collect())
}

/// Integer counts summing to `n` that follow `props` (largest remainder).
fn apportion(n: usize, props: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn dirichlet_indices(pool: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let classes = pool.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..pool.len() {
        by_class[pool.label(i) as usize].push(i);
    }
    let min = MIN_SHARD.min(pool.len() / clients);
    for attempt in 0..DIRICHLET_ATTEMPTS {
        let s = rng::derive(seed, attempt);
        let props = dirichlet_proportions(classes, clients, alpha, s)?;
        let mut rng = rng::rng(rng::derive(s, u64::MAX));
        let mut out = vec![Vec::new(); clients];
        for (c, members) in by_class.iter().enumerate() {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let mut at = 0;
            for (client, k) in apportion(members.len(), &props[c]).into_iter().enumerate() {
                out[client].extend_from_slice(&members[at..at + k]);
                at += k;
            }
        }
        if out.iter().all(|s| s.len() >= min) {
            return Ok(out);
        }
    }
    Err(Error::InsufficientData(format!(
        "no dirichlet({alpha}) draw gave every shard {min} examples"
    )))
}
