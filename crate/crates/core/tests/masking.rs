use lshfed::fixed::{FixedParams, DEFAULT_MODULUS};
use lshfed::masking::{apply_mask, run_mask_chain, unmask_aggregate, unmask_sum, verify_mask_sum, MaskConfig};
use lshfed::rng::{self, normal_vec};
use lshfed::{GradientUpdate, ModelShape};
use rand::Rng;

fn random_group(shape: &ModelShape, k: usize, seed: u64) -> Vec<GradientUpdate> {
    (0..k)
        .map(|i| {
            let v: Vec<f64> = normal_vec(shape.num_params(), seed.wrapping_mul(31).wrapping_add(i as u64))
                .into_iter()
                .map(|x| 0.5 * x)
                .collect();
            GradientUpdate::from_flat(shape, &v).unwrap()
        })
        .collect()
}

#[test]
fn thousand_random_groups_cancel_and_audit() {
    let shape = ModelShape::mlp(6, 4, 3);
    let params = FixedParams::default();
    let tol_unit = 1.0 / params.scale() as f64;
    let mut rng = rng::rng(77);
    for trial in 0..1000u64 {
        let k = rng.gen_range(2..=5);
        let order: Vec<u32> = (0..k as u32).map(|i| i * 3 + 1).collect();
        let cfg = MaskConfig::new(&shape, params, rng.gen_range(0..DEFAULT_MODULUS), order);
        let grads = random_group(&shape, k, trial);
        let shares = run_mask_chain(&cfg, trial).unwrap();
        let masks: Vec<_> = shares.iter().map(|s| s.mask.clone()).collect();
        assert!(verify_mask_sum(&masks, &cfg).unwrap(), "honest chain rejected, trial {trial}");

        let masked: Vec<_> = grads
            .iter()
            .zip(&masks)
            .map(|(g, m)| apply_mask(g, m, params).unwrap())
            .collect();
        let recovered = unmask_sum(&masked, &cfg, &shape).unwrap().to_flat();
        let mut plain = GradientUpdate::zeros(&shape);
        for g in &grads {
            plain.add_scaled(g, 1.0).unwrap();
        }
        for (a, b) in recovered.iter().zip(plain.to_flat()) {
            assert!((a - b).abs() <= k as f64 * tol_unit, "trial {trial}: {a} vs {b}");
        }
        let mean = unmask_aggregate(&masked, &cfg, &shape).unwrap().to_flat();
        for (m, s) in mean.iter().zip(&recovered) {
            assert!((m - s / k as f64).abs() < 1e-12);
        }

        // any single-entry change breaks the audit
        let mut tampered = masks.clone();
        let who = rng.gen_range(0..k);
        let which = rng.gen_range(0..shape.num_params());
        let delta = rng.gen_range(1..DEFAULT_MODULUS);
        let e = tampered[who].entries_mut().nth(which).unwrap();
        *e = (*e + delta) % DEFAULT_MODULUS;
        assert!(!verify_mask_sum(&tampered, &cfg).unwrap(), "tamper missed, trial {trial}");
    }
}

#[test]
fn missing_share_is_an_incomplete_group() {
    let shape = ModelShape::mlp(3, 2, 2);
    let params = FixedParams::default();
    let cfg = MaskConfig::new(&shape, params, DEFAULT_MODULUS / 2, vec![1, 2, 3]);
    let shares = run_mask_chain(&cfg, 4).unwrap();
    let grads = random_group(&shape, 3, 4);
    let masked: Vec<_> = grads
        .iter()
        .zip(&shares)
        .map(|(g, s)| apply_mask(g, &s.mask, params).unwrap())
        .collect();
    assert!(matches!(
        unmask_sum(&masked[..2], &cfg, &shape),
        Err(lshfed::Error::IncompleteGroup { expected: 3, got: 2 })
    ));
}
