//! Flat `key = value` experiment configuration.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fixed::{FixedParams, DEFAULT_MODULUS, DEFAULT_SCALE};
use crate::learner::{AttackKind, AttackSpec, Partition, SyntheticSpec, TrainParams};
use crate::tensor::ModelShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Defense {
    #[default]
    Lshfed,
    /// Plain size-weighted averaging of every group, no verification.
    Fedavg,
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lshfed" => Ok(Defense::Lshfed),
            "fedavg" => Ok(Defense::Fedavg),
            other => Err(Error::InvalidArgument(format!(
                "unknown defense '{other}' (lshfed, fedavg)"
            ))),
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Defense::Lshfed => "lshfed",
            Defense::Fedavg => "fedavg",
        })
    }
}

/// Which data nodes the attackers occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// A seeded random subset.
    Random,
    /// Every other id, starting from the highest.
    #[default]
    Interleaved,
    /// The highest ids.
    Contiguous,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Placement::Random),
            "interleaved" => Ok(Placement::Interleaved),
            "contiguous" => Ok(Placement::Contiguous),
            other => Err(Error::InvalidArgument(format!(
                "unknown placement '{other}' (random, interleaved, contiguous)"
            ))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Random => "random",
            Placement::Interleaved => "interleaved",
            Placement::Contiguous => "contiguous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartitionKind {
    #[default]
    Iid,
    LabelSkew,
    Dirichlet,
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionKind::Iid),
            "label_skew" => Ok(PartitionKind::LabelSkew),
            "dirichlet" => Ok(PartitionKind::Dirichlet),
            other => Err(Error::InvalidArgument(format!(
                "unknown partition '{other}' (iid, label_skew, dirichlet)"
            ))),
        }
    }
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionKind::Iid => "iid",
            PartitionKind::LabelSkew => "label_skew",
            PartitionKind::Dirichlet => "dirichlet",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dn_count: usize,
    /// Includes the verifier.
    pub non_dn_count: usize,
    /// Q
    pub lt_count: usize,
    /// P
    pub ag_count: usize,
    pub rounds: usize,
    pub seed: u64,
    pub defense: Defense,
    pub r: usize,
    pub filter_rank: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub scale: u64,
    pub modulus: u64,
    pub r_sum: u64,
    pub attack: AttackKind,
    pub malicious_fraction: f64,
    pub collusion: bool,
    pub noise_std: f64,
    pub placement: Placement,
    pub partition: PartitionKind,
    pub dirichlet_alpha: f64,
    pub primary_fraction: f64,
    /// `None` for the built-in generator.
    pub dataset: Option<PathBuf>,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub samples_per_node: usize,
    pub vr_samples: usize,
    pub test_samples: usize,
    pub separation: f64,
    pub data_noise: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub time_mu: f64,
    pub time_sigma: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dn_count: 10,
            non_dn_count: 10,
            lt_count: 5,
            ag_count: 2,
            rounds: 50,
            seed: 1,
            defense: Defense::Lshfed,
            r: 8,
            filter_rank: 1,
            alpha1: 0.5,
            alpha2: 0.5,
            scale: DEFAULT_SCALE,
            modulus: DEFAULT_MODULUS,
            r_sum: DEFAULT_MODULUS / 2,
            attack: AttackKind::None,
            malicious_fraction: 0.0,
            collusion: true,
            noise_std: 1.0,
            placement: Placement::Interleaved,
            partition: PartitionKind::Iid,
            dirichlet_alpha: 0.5,
            primary_fraction: 0.7,
            dataset: None,
            input_dim: 128,
            hidden: 64,
            classes: 10,
            samples_per_node: 300,
            vr_samples: 300,
            test_samples: 1000,
            separation: 6.0,
            data_noise: 1.0,
            epochs: 1,
            lr: 0.1,
            batch_size: 32,
            time_mu: 0.0,
            time_sigma: 0.25,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dn_count",
    "non_dn_count",
    "lt_count",
    "ag_count",
    "rounds",
    "seed",
    "defense",
    "r",
    "filter_rank",
    "threshold",
    "alpha1",
    "alpha2",
    "scale",
    "modulus",
    "r_sum",
    "attack",
    "malicious_fraction",
    "collusion",
    "noise_std",
    "malicious_placement",
    "partition",
    "dirichlet_alpha",
    "primary_fraction",
    "dataset",
    "input_dim",
    "hidden",
    "classes",
    "samples_per_node",
    "vr_samples",
    "test_samples",
    "separation",
    "data_noise",
    "epochs",
    "lr",
    "batch_size",
    "time_mu",
    "time_sigma",
];

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::config(line, format!("{key}: cannot parse '{v}': {e}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(line, format!("{key}: expected true or false, got '{v}'"))),
    }
}

impl ExperimentConfig {
    /// Parses and validates. Keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut lines: HashMap<&'static str, usize> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("expected key = value, got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| Error::config(line, format!("unknown key '{key}'")))?;
            if lines.insert(known, line).is_some() {
                return Err(Error::config(line, format!("duplicate key '{key}'")));
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate_with(&lines)?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let wrap = |e: Error| Error::config(line, format!("{key}: {e}"));
        match key {
            "dn_count" => self.dn_count = parse_value(line, key, v)?,
            "non_dn_count" => self.non_dn_count = parse_value(line, key, v)?,
            "lt_count" => self.lt_count = parse_value(line, key, v)?,
            "ag_count" => self.ag_count = parse_value(line, key, v)?,
            "rounds" => self.rounds = parse_value(line, key, v)?,
            "seed" => self.seed = parse_value(line, key, v)?,
            "defense" => self.defense = v.parse().map_err(wrap)?,
            "r" => self.r = parse_value(line, key, v)?,
            "filter_rank" => self.filter_rank = parse_value(line, key, v)?,
            "threshold" => {
                if v != "none" {
                    return Err(Error::config(
                        line,
                        "threshold: only 'none' is supported; candidates are accepted by filter_rank",
                    ));
                }
            }
            "alpha1" => self.alpha1 = parse_value(line, key, v)?,
            "alpha2" => self.alpha2 = parse_value(line, key, v)?,
            "scale" => self.scale = parse_value(line, key, v)?,
            "modulus" => self.modulus = parse_value(line, key, v)?,
            "r_sum" => self.r_sum = parse_value(line, key, v)?,
            "attack" => self.attack = v.parse().map_err(wrap)?,
            "malicious_fraction" => self.malicious_fraction = parse_value(line, key, v)?,
            "collusion" => self.collusion = parse_bool(line, key, v)?,
            "noise_std" => self.noise_std = parse_value(line, key, v)?,
            "malicious_placement" => self.placement = v.parse().map_err(wrap)?,
            "partition" => self.partition = v.parse().map_err(wrap)?,
            "dirichlet_alpha" => self.dirichlet_alpha = parse_value(line, key, v)?,
            "primary_fraction" => self.primary_fraction = parse_value(line, key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => None,
                    path => Some(PathBuf::from(path)),
                }
            }
            "input_dim" => self.input_dim = parse_value(line, key, v)?,
            "hidden" => self.hidden = parse_value(line, key, v)?,
            "classes" => self.classes = parse_value(line, key, v)?,
            "samples_per_node" => self.samples_per_node = parse_value(line, key, v)?,
            "vr_samples" => self.vr_samples = parse_value(line, key, v)?,
            "test_samples" => self.test_samples = parse_value(line, key, v)?,
            "separation" => self.separation = parse_value(line, key, v)?,
            "data_noise" => self.data_noise = parse_value(line, key, v)?,
            "epochs" => self.epochs = parse_value(line, key, v)?,
            "lr" => self.lr = parse_value(line, key, v)?,
            "batch_size" => self.batch_size = parse_value(line, key, v)?,
            "time_mu" => self.time_mu = parse_value(line, key, v)?,
            "time_sigma" => self.time_sigma = parse_value(line, key, v)?,
            _ => unreachable!("key checked against KEYS"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&HashMap::new())
    }

    fn validate_with(&self, lines: &HashMap<&'static str, usize>) -> Result<()> {
        let at = |key: &str| lines.get(key).copied().unwrap_or(0);
        let fail = |key: &str, msg: String| Err(Error::config(at(key), msg));
        if self.dn_count < 2 {
            return fail("dn_count", format!("dn_count must be at least 2 (got {})", self.dn_count));
        }
        if self.non_dn_count < 2 {
            return fail(
                "non_dn_count",
                format!("non_dn_count must be at least 2: one verifier plus aggregators (got {})", self.non_dn_count),
            );
        }
        if self.ag_count == 0 {
            return fail("ag_count", "ag_count must be at least 1".into());
        }
        if self.lt_count > self.dn_count {
            return fail(
                "lt_count",
                format!("constraint Q <= DN count violated: lt_count {} > dn_count {}", self.lt_count, self.dn_count),
            );
        }
        if self.ag_count > self.non_dn_count - 1 {
            return fail(
                "ag_count",
                format!(
                    "constraint P <= non-DN count violated: ag_count {} > {} non-data nodes besides the verifier",
                    self.ag_count,
                    self.non_dn_count - 1
                ),
            );
        }
        if self.lt_count < 2 * self.ag_count {
            return fail(
                "lt_count",
                format!(
                    "every group needs two trainers for its mask chain: lt_count {} < 2 * ag_count {}",
                    self.lt_count, self.ag_count
                ),
            );
        }
        if !(0.0..=0.5).contains(&self.malicious_fraction) {
            return fail(
                "malicious_fraction",
                format!("malicious_fraction must lie in [0, 0.5] (got {})", self.malicious_fraction),
            );
        }
        if self.rounds == 0 {
            return fail("rounds", "rounds must be at least 1".into());
        }
        if self.r == 0 {
            return fail("r", "r must be at least 1".into());
        }
        if self.filter_rank == 0 || self.filter_rank > self.ag_count {
            return fail(
                "filter_rank",
                format!("filter_rank must lie in 1..={} (got {})", self.ag_count, self.filter_rank),
            );
        }
        if !(0.0..=1.0).contains(&self.alpha1) || (self.alpha1 + self.alpha2 - 1.0).abs() > 1e-9 {
            return fail(
                "alpha2",
                format!("alpha1 + alpha2 must equal 1 with both in [0, 1] (got {} + {})", self.alpha1, self.alpha2),
            );
        }
        if let Err(e) = FixedParams::new(self.scale, self.modulus) {
            return fail("modulus", e.to_string());
        }
        if self.r_sum >= self.modulus {
            return fail("r_sum", format!("r_sum must be below modulus {}", self.modulus));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return fail("noise_std", "noise_std must be non-negative".into());
        }
        if self.dirichlet_alpha.is_nan() || self.dirichlet_alpha <= 0.0 {
            return fail("dirichlet_alpha", "dirichlet_alpha must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.primary_fraction) {
            return fail("primary_fraction", "primary_fraction must lie in [0, 1]".into());
        }
        if self.partition == PartitionKind::LabelSkew && self.classes < 3 {
            return fail("partition", "label_skew needs at least 3 classes".into());
        }
        if self.input_dim == 0 || self.hidden == 0 || self.classes < 2 || self.classes > 256 {
            return fail("classes", "model needs input_dim >= 1, hidden >= 1 and 2..=256 classes".into());
        }
        if self.samples_per_node == 0 || self.vr_samples == 0 || self.test_samples == 0 {
            return fail("samples_per_node", "sample counts must be positive".into());
        }
        if self.epochs == 0 || self.lr.is_nan() || self.lr < 0.0 {
            return fail("lr", "need epochs >= 1 and lr >= 0".into());
        }
        if self.time_sigma.is_nan() || self.time_sigma < 0.0 || !self.time_mu.is_finite() {
            return fail("time_sigma", "time_sigma must be non-negative and time_mu finite".into());
        }
        Ok(())
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape::mlp(self.input_dim, self.hidden, self.classes)
    }

    pub fn fixed_params(&self) -> FixedParams {
        FixedParams::new(self.scale, self.modulus).expect("validated")
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            dim: self.input_dim,
            classes: self.classes,
            separation: self.separation,
            noise: self.data_noise,
        }
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.attack,
            collusion: self.collusion,
            noise_std: self.noise_std,
        }
    }

    pub fn partition_scheme(&self) -> Partition {
        match self.partition {
            PartitionKind::Iid => Partition::Iid,
            PartitionKind::LabelSkew => Partition::LabelSkew {
                primary_fraction: self.primary_fraction,
                shard_size: Some(self.samples_per_node),
            },
            PartitionKind::Dirichlet => Partition::Dirichlet {
                alpha: self.dirichlet_alpha,
            },
        }
    }

    pub fn malicious_count(&self) -> usize {
        if self.attack == AttackKind::None {
            0
        } else {
            (self.malicious_fraction * self.dn_count as f64).round() as usize
        }
    }

    /// Every key with its resolved value; parses back to `self`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dn_count", self.dn_count.to_string());
        put("non_dn_count", self.non_dn_count.to_string());
        put("lt_count", self.lt_count.to_string());
        put("ag_count", self.ag_count.to_string());
        put("rounds", self.rounds.to_string());
        put("seed", self.seed.to_string());
        put("defense", self.defense.to_string());
        put("r", self.r.to_string());
        put("filter_rank", self.filter_rank.to_string());
        put("threshold", "none".into());
        put("alpha1", self.alpha1.to_string());
        put("alpha2", self.alpha2.to_string());
        put("scale", self.scale.to_string());
        put("modulus", self.modulus.to_string());
        put("r_sum", self.r_sum.to_string());
        put("attack", self.attack.to_string());
        put("malicious_fraction", self.malicious_fraction.to_string());
        put("collusion", self.collusion.to_string());
        put("noise_std", self.noise_std.to_string());
        put("malicious_placement", self.placement.to_string());
        put("partition", self.partition.to_string());
        put("dirichlet_alpha", self.dirichlet_alpha.to_string());
        put("primary_fraction", self.primary_fraction.to_string());
        put(
            "dataset",
            self.dataset
                .as_ref()
                .map_or("synthetic".into(), |p| p.display().to_string()),
        );
        put("input_dim", self.input_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("classes", self.classes.to_string());
        put("samples_per_node", self.samples_per_node.to_string());
        put("vr_samples", self.vr_samples.to_string());
        put("test_samples", self.test_samples.to_string());
        put("separation", self.separation.to_string());
        put("data_noise", self.data_noise.to_string());
        put("epochs", self.epochs.to_string());
        put("lr", self.lr.to_string());
        put("batch_size", self.batch_size.to_string());
        put("time_mu", self.time_mu.to_string());
        put("time_sigma", self.time_sigma.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_deployment() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!((c.dn_count, c.non_dn_count, c.lt_count, c.ag_count), (10, 10, 5, 2));
        assert_eq!((c.r, c.filter_rank, c.rounds), (8, 1, 50));
        assert_eq!(c.r_sum, 1 << 31);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = ExperimentConfig::parse("attack = label_flip\nmalicious_fraction = 0.3\nseed = 77\nlr=0.05").unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_kv()).unwrap(), c);
        let kv = c.to_kv();
        let mut keys: Vec<&str> = kv.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        keys.sort();
        let mut all = KEYS.to_vec();
        all.sort();
        assert_eq!(keys, all);
    }

    #[test]
    fn q_above_dn_count_names_the_constraint() {
        let err = ExperimentConfig::parse("# deployment\ndn_count = 10\nlt_count = 12\n").unwrap_err();
        match err {
            Error::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("Q <= DN count"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn line_numbers_on_parse_errors() {
        assert!(matches!(
            ExperimentConfig::parse("rounds = 5\nbogus = 1"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("rounds = five"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("\n\nrounds 5"),
            Err(Error::Config { line: 3, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("seed = 1\nseed = 2"),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_values() {
        for bad in [
            "malicious_fraction = 0.6",
            "ag_count = 10",
            "lt_count = 3",
            "alpha1 = 0.7\nalpha2 = 0.7",
            "filter_rank = 3",
            "threshold = 0.2",
            "attack = sybil",
            "r_sum = 4294967296",
        ] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config { .. })), "{bad}");
        }
    }
}
