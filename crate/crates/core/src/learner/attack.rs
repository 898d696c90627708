use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::learner::data::Dataset;
use crate::rng::{self, Stream};
use crate::tensor::GradientUpdate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    GaussianNoise,
    /// Honest gradient, corrupted mask share.
    MaskTamper,
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "label_flip" => Ok(AttackKind::LabelFlip),
            "gaussian_noise" => Ok(AttackKind::GaussianNoise),
            "mask_tamper" => Ok(AttackKind::MaskTamper),
            other => Err(Error::InvalidArgument(format!(
                "unknown attack kind '{other}' (none, label_flip, gaussian_noise, mask_tamper)"
            ))),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::GaussianNoise => "gaussian_noise",
            AttackKind::MaskTamper => "mask_tamper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Colluding noise attackers submit the same draw.
    pub collusion: bool,
    pub noise_std: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            collusion: false,
            noise_std: 1.0,
        }
    }
}

pub fn flip_label(label: u8, classes: usize) -> u8 {
    (classes - 1 - label as usize) as u8
}

impl AttackSpec {
    /// The shard an attacker trains on.
    pub fn poison_shard(&self, shard: &Dataset) -> Dataset {
        let mut out = shard.clone();
        if self.kind == AttackKind::LabelFlip {
            let classes = out.classes();
            out.labels_mut().iter_mut().for_each(|l| *l = flip_label(*l, classes));
        }
        out
    }

    /// Noise attackers replace their update with `N(0, noise_std^2)` entries.
    /// Colluders share `round_seed`; others mix in their node id.
    pub fn corrupt_update(&self, update: GradientUpdate, round_seed: u64, node: u32) -> Result<GradientUpdate> {
        if self.kind != AttackKind::GaussianNoise {
            return Ok(update);
        }
        let seed = if self.collusion {
            rng::stream_seed(round_seed, Stream::AttackNoise, &[])
        } else {
            rng::stream_seed(round_seed, Stream::AttackNoise, &[node as u64 + 1])
        };
        let noise = rng::normal_vec(update.num_params(), seed);
        let mut out = update;
        for (w, z) in out.values_mut().zip(noise) {
            *w = self.noise_std * z;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::data::{generate_synthetic, SyntheticSpec};
    use crate::tensor::ModelShape;

    #[test]
    fn flip_is_an_involution() {
        assert_eq!(flip_label(0, 10), 9);
        assert_eq!(flip_label(3, 10), 6);
        for l in 0..10 {
            assert_eq!(flip_label(flip_label(l, 10), 10), l);
        }
    }

    #[test]
    fn label_flip_touches_only_labels() {
        let d = generate_synthetic(&SyntheticSpec { dim: 3, classes: 10, separation: 1.0, noise: 1.0 }, 20, 0);
        let spec = AttackSpec { kind: AttackKind::LabelFlip, ..Default::default() };
        let p = spec.poison_shard(&d);
        for i in 0..d.len() {
            assert_eq!(p.label(i), 9 - d.label(i));
            assert_eq!(p.features(i), d.features(i));
        }
    }

    #[test]
    fn collusion_shares_noise() {
        let shape = ModelShape::mlp(3, 2, 2);
        let g = GradientUpdate::zeros(&shape);
        let c = AttackSpec { kind: AttackKind::GaussianNoise, collusion: true, noise_std: 1.0 };
        assert_eq!(c.corrupt_update(g.clone(), 5, 1).unwrap(), c.corrupt_update(g.clone(), 5, 2).unwrap());
        let solo = AttackSpec { collusion: false, ..c };
        assert_ne!(solo.corrupt_update(g.clone(), 5, 1).unwrap(), solo.corrupt_update(g.clone(), 5, 2).unwrap());
        let honest = AttackSpec::default();
        assert_eq!(honest.corrupt_update(g.clone(), 5, 1).unwrap(), g);
    }

    #[test]
    fn parses_kinds() {
        for k in ["none", "label_flip", "gaussian_noise", "mask_tamper"] {
            assert_eq!(k.parse::<AttackKind>().unwrap().to_string(), k);
        }
        assert!("flip".parse::<AttackKind>().is_err());
    }
}
