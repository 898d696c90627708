//! Fixed-point codec between real gradients and integers modulo `d`.

use crate::error::{Error, Result};
use crate::tensor::{GradientUpdate, Matrix, ModelShape, ShapeId};

pub const DEFAULT_SCALE: u64 = 1 << 16;
pub const DEFAULT_MODULUS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedParams {
    scale: u64,
    modulus: u64,
}

impl Default for FixedParams {
    fn default() -> Self {
        FixedParams {
            scale: DEFAULT_SCALE,
            modulus: DEFAULT_MODULUS,
        }
    }
}

impl FixedParams {
    pub fn new(scale: u64, modulus: u64) -> Result<Self> {
        if scale == 0 || modulus < 2 {
            return Err(Error::InvalidArgument(format!(
                "fixed-point needs scale >= 1 and modulus >= 2 (scale={scale}, modulus={modulus})"
            )));
        }
        Ok(FixedParams { scale, modulus })
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.modulus as u128) as u64
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = self.modulus as u128;
        ((a as u128 + d - (b as u128 % d)) % d) as u64
    }

    pub fn encode_value(&self, x: f64) -> Result<u64> {
        let half = self.modulus / 2;
        let scaled = x.abs() * self.scale as f64;
        if scaled.is_nan() || scaled >= half as f64 {
            return Err(Error::Overflow {
                value: x,
                scale: self.scale,
                half,
            });
        }
        let v = (x * self.scale as f64).round() as i64;
        Ok(if v >= 0 {
            v as u64
        } else {
            self.modulus - v.unsigned_abs()
        })
    }

    pub fn decode_value(&self, e: u64) -> f64 {
        let e = e % self.modulus;
        if e < self.modulus.div_ceil(2) {
            e as f64 / self.scale as f64
        } else {
            (e as i128 - self.modulus as i128) as f64 / self.scale as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl IntMatrix {
    pub fn filled(rows: usize, cols: usize, v: u64) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// A gradient update encoded entrywise into `[0, d)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointGradient {
    pub matrices: Vec<IntMatrix>,
    pub params: FixedParams,
    pub shape_id: ShapeId,
}

impl FixedPointGradient {
    /// Every entry set to `v mod d`.
    pub fn constant(shape: &ModelShape, params: FixedParams, v: u64) -> Self {
        FixedPointGradient {
            matrices: shape
                .dims
                .iter()
                .map(|&(r, c)| IntMatrix::filled(r, c, v % params.modulus))
                .collect(),
            params,
            shape_id: shape.id(),
        }
    }

    pub fn zeros(shape: &ModelShape, params: FixedParams) -> Self {
        Self::constant(shape, params, 0)
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.matrices.iter().map(IntMatrix::dims).collect()
    }

    pub fn num_entries(&self) -> usize {
        self.matrices.iter().map(|m| m.data.len()).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = u64> + '_ {
        self.matrices.iter().flat_map(|m| m.data.iter().copied())
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut u64> + '_ {
        self.matrices.iter_mut().flat_map(|m| m.data.iter_mut())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.params != other.params {
            return Err(Error::ShapeMismatch("fixed-point parameters differ".into()));
        }
        if self.shape_id != other.shape_id || self.dims() != other.dims() {
            return Err(Error::ShapeMismatch("fixed-point gradients differ in shape".into()));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.entries_mut().zip(other.entries()) {
            *a = f(*a, b);
        }
        Ok(out)
    }

    pub fn add_mod(&self, other: &Self) -> Result<Self> {
        let p = self.params;
        self.zip_with(other, |a, b| p.add(a, b))
    }

    pub fn sub_mod(&self, other: &Self) -> Result<Self> {
        let p = self.params;
        self.zip_with(other, |a, b| p.sub(a, b))
    }
}

pub fn encode_fixed(g: &GradientUpdate, params: FixedParams) -> Result<FixedPointGradient> {
    let matrices = g
        .matrices()
        .iter()
        .map(|m| {
            let data = m
                .data()
                .iter()
                .map(|&x| params.encode_value(x))
                .collect::<Result<Vec<_>>>()?;
            Ok(IntMatrix {
                rows: m.rows(),
                cols: m.cols(),
                data,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedPointGradient {
        matrices,
        params,
        shape_id: g.shape_id(),
    })
}

pub fn decode_fixed(fg: &FixedPointGradient, shape: &ModelShape) -> Result<GradientUpdate> {
    let matrices = fg
        .matrices
        .iter()
        .map(|m| {
            Matrix::from_vec(
                m.rows,
                m.cols,
                m.data.iter().map(|&e| fg.params.decode_value(e)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GradientUpdate::new(shape, matrices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_entry(x: f64) -> (ModelShape, GradientUpdate) {
        let shape = ModelShape::new("scalar", vec![(1, 1)]);
        let g = GradientUpdate::from_flat(&shape, &[x]).unwrap();
        (shape, g)
    }

    #[test]
    fn zero_and_minus_one() {
        let p = FixedParams::default();
        assert_eq!(p.encode_value(0.0).unwrap(), 0);
        assert_eq!(p.encode_value(-1.0).unwrap(), (1u64 << 32) - (1 << 16));
        assert_eq!(p.decode_value((1u64 << 32) - (1 << 16)), -1.0);
        let (shape, _) = one_entry(0.0);
        let zeros = FixedPointGradient::zeros(&shape, p);
        assert_eq!(decode_fixed(&zeros, &shape).unwrap().to_flat(), vec![0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let p = FixedParams::new(1 << 16, 1 << 32).unwrap();
        // 2^15 * 2^16 = 2^31 = d/2 exactly: not strictly below.
        let (_, g) = one_entry(32768.0);
        assert!(matches!(encode_fixed(&g, p), Err(Error::Overflow { .. })));
        let (_, g) = one_entry(-32767.0);
        assert!(encode_fixed(&g, p).is_ok());
    }

    #[test]
    fn wraparound_addition() {
        let p = FixedParams::new(1, 97).unwrap();
        assert_eq!(p.add(3, 96), 2);
        assert_eq!(p.sub(2, 96), 3);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = FixedParams::default();
        let a = FixedPointGradient::zeros(&ModelShape::mlp(2, 2, 2), p);
        let b = FixedPointGradient::zeros(&ModelShape::mlp(3, 2, 2), p);
        assert!(matches!(a.add_mod(&b), Err(Error::ShapeMismatch(_))));
        let c = FixedPointGradient::zeros(&ModelShape::mlp(2, 2, 2), FixedParams::new(2, 97).unwrap());
        assert!(matches!(a.sub_mod(&c), Err(Error::ShapeMismatch(_))));
    }

    fn arb_fixed(len: usize, d: u64) -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0..d, len)
    }

    fn fg(vals: Vec<u64>, p: FixedParams) -> FixedPointGradient {
        FixedPointGradient {
            matrices: vec![IntMatrix {
                rows: vals.len(),
                cols: 1,
                data: vals,
            }],
            params: p,
            shape_id: ShapeId(0),
        }
    }

    proptest! {
        #[test]
        fn codec_round_trip(xs in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            let shape = ModelShape::new("v", vec![(xs.len(), 1)]);
            let g = GradientUpdate::from_flat(&shape, &xs).unwrap();
            let p = FixedParams::default();
            let back = decode_fixed(&encode_fixed(&g, p).unwrap(), &shape).unwrap();
            for (a, b) in g.values().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1.0 / p.scale() as f64);
            }
            for e in encode_fixed(&g, p).unwrap().entries() {
                prop_assert!(e < p.modulus());
            }
        }

        #[test]
        fn group_laws(a in arb_fixed(16, 1 << 32), b in arb_fixed(16, 1 << 32), c in arb_fixed(16, 1 << 32)) {
            let p = FixedParams::default();
            let (a, b, c) = (fg(a, p), fg(b, p), fg(c, p));
            prop_assert_eq!(a.add_mod(&b).unwrap(), b.add_mod(&a).unwrap());
            prop_assert_eq!(
                a.add_mod(&b).unwrap().add_mod(&c).unwrap(),
                a.add_mod(&b.add_mod(&c).unwrap()).unwrap()
            );
            prop_assert_eq!(a.add_mod(&b).unwrap().sub_mod(&b).unwrap(), a.clone());
            let zero = fg(vec![0; 16], p);
            prop_assert_eq!(a.add_mod(&zero).unwrap(), a);
        }
    }
}
