//! Chained additive masks that cancel to a public constant modulo `d`.
//!
//! Node `i` of a group receives the residual `r_i = R_sum - Σ_{k<i} M_k`,
//! draws its own mask and forwards `r_i - M_i`. The last node adopts the
//! residual it receives as its mask, which closes the sum to `R_sum`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fixed::{decode_fixed, encode_fixed, FixedParams, FixedPointGradient};
use crate::rng::{self, Stream};
use crate::tensor::{GradientUpdate, ModelShape};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskConfig {
    r_sum: FixedPointGradient,
    params: FixedParams,
    chain_order: Vec<NodeId>,
}

impl MaskConfig {
    /// `R_sum` is the constant `r_sum_value mod d` broadcast to every entry.
    pub fn new(
        shape: &ModelShape,
        params: FixedParams,
        r_sum_value: u64,
        chain_order: Vec<NodeId>,
    ) -> Self {
        MaskConfig {
            r_sum: FixedPointGradient::constant(shape, params, r_sum_value),
            params,
            chain_order,
        }
    }

    pub fn r_sum(&self) -> &FixedPointGradient {
        &self.r_sum
    }

    pub fn params(&self) -> FixedParams {
        self.params
    }

    pub fn chain_order(&self) -> &[NodeId] {
        &self.chain_order
    }

    pub fn group_size(&self) -> usize {
        self.chain_order.len()
    }
}

/// What one chain member saw and produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskShare {
    pub owner: NodeId,
    pub mask: FixedPointGradient,
    pub residual_in: FixedPointGradient,
    pub residual_out: FixedPointGradient,
}

/// A mask drawn uniformly from `[0, d)` per entry.
pub fn uniform_mask(template: &FixedPointGradient, seed: u64) -> FixedPointGradient {
    let mut rng = rng::rng(seed);
    let d = template.params.modulus();
    let mut out = template.clone();
    out.entries_mut().for_each(|e| *e = rng.gen_range(0..d));
    out
}

pub fn run_mask_chain(cfg: &MaskConfig, round_seed: u64) -> Result<Vec<MaskShare>> {
    let n = cfg.chain_order.len();
    if n < 2 {
        return Err(Error::GroupTooSmall(n));
    }
    let mut shares = Vec::with_capacity(n);
    let mut residual = cfg.r_sum.clone();
    for (pos, &owner) in cfg.chain_order.iter().enumerate() {
        let mask = if pos + 1 == n {
            residual.clone()
        } else {
            uniform_mask(
                &cfg.r_sum,
                rng::stream_seed(round_seed, Stream::Mask, &[owner as u64]),
            )
        };
        let residual_out = residual.sub_mod(&mask)?;
        shares.push(MaskShare {
            owner,
            mask,
            residual_in: residual,
            residual_out: residual_out.clone(),
        });
        residual = residual_out;
    }
    Ok(shares)
}

/// True iff the masks sum to `R_sum` modulo `d` in every entry.
pub fn verify_mask_sum(masks: &[FixedPointGradient], cfg: &MaskConfig) -> Result<bool> {
    let mut acc = cfg.r_sum.sub_mod(&cfg.r_sum)?;
    for m in masks {
        acc = acc.add_mod(m)?;
    }
    Ok(acc == cfg.r_sum)
}

pub fn apply_mask(
    g: &GradientUpdate,
    mask: &FixedPointGradient,
    params: FixedParams,
) -> Result<FixedPointGradient> {
    encode_fixed(g, params)?.add_mod(mask)
}

/// `decode(Σ masked - R_sum)`: the plain sum of the group's gradients.
pub fn unmask_sum(
    masked: &[FixedPointGradient],
    cfg: &MaskConfig,
    shape: &ModelShape,
) -> Result<GradientUpdate> {
    if masked.len() != cfg.group_size() {
        return Err(Error::IncompleteGroup {
            expected: cfg.group_size(),
            got: masked.len(),
        });
    }
    let mut acc = cfg.r_sum.sub_mod(&cfg.r_sum)?;
    for m in masked {
        acc = acc.add_mod(m)?;
    }
    decode_fixed(&acc.sub_mod(&cfg.r_sum)?, shape)
}

/// Group mean update recovered from the masked shares.
pub fn unmask_aggregate(
    masked: &[FixedPointGradient],
    cfg: &MaskConfig,
    shape: &ModelShape,
) -> Result<GradientUpdate> {
    Ok(unmask_sum(masked, cfg, shape)?.scaled(1.0 / cfg.group_size() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::IntMatrix;
    use crate::tensor::ShapeId;

    fn single(v: u64, p: FixedParams) -> FixedPointGradient {
        FixedPointGradient {
            matrices: vec![IntMatrix::filled(1, 1, v)],
            params: p,
            shape_id: ShapeId(0),
        }
    }

    #[test]
    fn hand_computed_two_node_chain() {
        // R_sum = 10, d = 97, node 1 draws 30 -> node 2 must hold 77.
        let p = FixedParams::new(1, 97).unwrap();
        let shape = ModelShape::new("s", vec![(1, 1)]);
        let cfg = MaskConfig::new(&shape, p, 10, vec![1, 2]);
        let residual_2 = cfg.r_sum().sub_mod(&FixedPointGradient { shape_id: shape.id(), ..single(30, p) }).unwrap();
        assert_eq!(residual_2.matrices[0].data, vec![77]);
        let shares = run_mask_chain(&cfg, 5).unwrap();
        let m1 = shares[0].mask.matrices[0].data[0];
        assert_eq!(shares[1].mask.matrices[0].data[0], (10 + 97 - m1) % 97);
        assert_eq!(shares[1].residual_out.matrices[0].data, vec![0]);
        for s in &shares {
            assert_eq!(s.residual_out, s.residual_in.sub_mod(&s.mask).unwrap());
        }
    }

    #[test]
    fn verify_accepts_honest_and_rejects_tamper() {
        let shape = ModelShape::mlp(3, 2, 2);
        let cfg = MaskConfig::new(&shape, FixedParams::default(), 1 << 31, vec![4, 1, 9]);
        let shares = run_mask_chain(&cfg, 1).unwrap();
        let mut masks: Vec<_> = shares.iter().map(|s| s.mask.clone()).collect();
        assert!(verify_mask_sum(&masks, &cfg).unwrap());
        let e = &mut masks[1].matrices[2].data[3];
        *e = (*e + 1) % (1 << 32);
        assert!(!verify_mask_sum(&masks, &cfg).unwrap());
    }

    #[test]
    fn sum_wrapping_past_d_still_verifies() {
        // masks 60 + 47 = 107 = R_sum(10) + d(97)
        let p = FixedParams::new(1, 97).unwrap();
        let shape = ModelShape::new("s", vec![(1, 1)]);
        let cfg = MaskConfig::new(&shape, p, 10, vec![1, 2]);
        let m = |v| FixedPointGradient { shape_id: shape.id(), ..single(v, p) };
        assert!(verify_mask_sum(&[m(60), m(47)], &cfg).unwrap());
        assert!(!verify_mask_sum(&[m(60), m(48)], &cfg).unwrap());
    }

    #[test]
    fn singleton_group_rejected() {
        let shape = ModelShape::mlp(3, 2, 2);
        let cfg = MaskConfig::new(&shape, FixedParams::default(), 7, vec![3]);
        assert_eq!(run_mask_chain(&cfg, 0), Err(Error::GroupTooSmall(1)));
    }

    #[test]
    fn fresh_masks_each_round() {
        let shape = ModelShape::mlp(3, 2, 2);
        let cfg = MaskConfig::new(&shape, FixedParams::default(), 7, vec![3, 4]);
        let a = run_mask_chain(&cfg, 100).unwrap();
        let b = run_mask_chain(&cfg, 101).unwrap();
        assert_ne!(a[0].mask, b[0].mask);
    }

    #[test]
    fn zero_mask_round_trip_and_range() {
        let shape = ModelShape::mlp(3, 2, 2);
        let p = FixedParams::default();
        let g = GradientUpdate::from_flat(&shape, &rng::normal_vec(shape.num_params(), 2)).unwrap();
        let masked = apply_mask(&g, &FixedPointGradient::zeros(&shape, p), p).unwrap();
        let back = decode_fixed(&masked, &shape).unwrap();
        for (a, b) in g.values().zip(back.values()) {
            assert!((a - b).abs() <= 1.0 / p.scale() as f64);
        }
        let mask = uniform_mask(&masked, 8);
        assert!(apply_mask(&g, &mask, p).unwrap().entries().all(|e| e < p.modulus()));
    }

    #[test]
    fn missing_share_is_incomplete() {
        let shape = ModelShape::mlp(3, 2, 2);
        let cfg = MaskConfig::new(&shape, FixedParams::default(), 7, vec![3, 4, 5]);
        let shares = run_mask_chain(&cfg, 0).unwrap();
        let masked: Vec<_> = shares[..2].iter().map(|s| s.mask.clone()).collect();
        assert_eq!(
            unmask_sum(&masked, &cfg, &shape),
            Err(Error::IncompleteGroup { expected: 3, got: 2 })
        );
    }

    #[test]
    fn zero_gradients_unmask_to_zero() {
        let shape = ModelShape::mlp(3, 2, 2);
        let p = FixedParams::default();
        let cfg = MaskConfig::new(&shape, p, 1 << 31, vec![0, 1, 2]);
        let shares = run_mask_chain(&cfg, 3).unwrap();
        let masked: Vec<_> = shares
            .iter()
            .map(|s| apply_mask(&GradientUpdate::zeros(&shape), &s.mask, p).unwrap())
            .collect();
        let agg = unmask_aggregate(&masked, &cfg, &shape).unwrap();
        assert!(agg.values().all(|x| x == 0.0));
    }

    #[test]
    fn tamper_shifts_exactly_one_entry() {
        let shape = ModelShape::mlp(3, 2, 2);
        let p = FixedParams::default();
        let cfg = MaskConfig::new(&shape, p, 1 << 31, vec![0, 1, 2]);
        let shares = run_mask_chain(&cfg, 4).unwrap();
        let grads: Vec<GradientUpdate> = (0..3)
            .map(|i| GradientUpdate::from_flat(&shape, &rng::normal_vec(shape.num_params(), i)).unwrap())
            .collect();
        let honest: Vec<_> = shares
            .iter()
            .zip(&grads)
            .map(|(s, g)| apply_mask(g, &s.mask, p).unwrap())
            .collect();
        let mut tampered_mask = shares[1].mask.clone();
        let delta = 3 * p.scale(); // +3.0 after decoding
        tampered_mask.matrices[0].data[5] = p.add(tampered_mask.matrices[0].data[5], delta);
        let mut tampered = honest.clone();
        tampered[1] = apply_mask(&grads[1], &tampered_mask, p).unwrap();
        let a = unmask_sum(&honest, &cfg, &shape).unwrap().to_flat();
        let b = unmask_sum(&tampered, &cfg, &shape).unwrap().to_flat();
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if i == 5 {
                assert!((y - x - 3.0).abs() < 1e-9);
            } else {
                assert_eq!(x, y);
            }
        }
    }
}
