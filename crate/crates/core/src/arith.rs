//! Decompression-free integer matmul over compressed operands.
//!
//! Two aligned groups are multiplied magnitude by magnitude at the
//! compressed width, signs combine by XOR, and the partial sum is shifted
//! left once by the sum of both group flags. Because every element of a
//! group shares the same shift, this equals decompressing both groups and
//! taking the full-precision dot product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantizer::{Granularity, ScaleSet};
use crate::sdr::{ceil_log2, CompressedGroup, CompressedTensor, SdrConfig};
use crate::tensor::TensorF;

/// Accumulator headroom: results stay below `2^ACC_BITS` in magnitude.
pub const ACC_BITS: u32 = 62;

/// Wide accumulator for a sequence of group-pair products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupProductAcc {
    acc: i64,
    max_shift: u32,
}

impl GroupProductAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pair(&mut self, a: &CompressedGroup, b: &CompressedGroup) -> Result<()> {
        let v = mac_group(a, b)?;
        self.max_shift = self.max_shift.max(a.flag() as u32 + b.flag() as u32);
        self.acc = self
            .acc
            .checked_add(v)
            .filter(|s| s.unsigned_abs() < 1u64 << ACC_BITS)
            .ok_or(Error::ShiftOverflow {
                shift: self.max_shift,
            })?;
        Ok(())
    }

    pub fn value(&self) -> i64 {
        self.acc
    }

    /// Largest flag-sum shift applied so far.
    pub fn max_shift(&self) -> u32 {
        self.max_shift
    }
}

fn bit_len(v: u16) -> u32 {
    u16::BITS - v.leading_zeros()
}

/// Bits needed for the unshifted partial sum of two groups.
fn product_bits(a: &CompressedGroup, b: &CompressedGroup) -> u32 {
    let wa = a
        .elements()
        .iter()
        .map(|e| bit_len(e.mag()))
        .max()
        .unwrap_or(0);
    let wb = b
        .elements()
        .iter()
        .map(|e| bit_len(e.mag()))
        .max()
        .unwrap_or(0);
    wa + wb + ceil_log2(a.len().max(1) as u64)
}

/// Dot product of two aligned compressed groups, shifted by the flag sum.
pub fn mac_group(a: &CompressedGroup, b: &CompressedGroup) -> Result<i64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            lhs: a.len(),
            rhs: b.len(),
        });
    }
    let shift = a.flag() as u32 + b.flag() as u32;
    if shift + product_bits(a, b) > ACC_BITS {
        return Err(Error::ShiftOverflow { shift });
    }
    let sum: i64 = a
        .elements()
        .iter()
        .zip(b.elements())
        .map(|(x, y)| {
            let p = x.mag() as i64 * y.mag() as i64;
            if x.is_neg() ^ y.is_neg() {
                -p
            } else {
                p
            }
        })
        .sum();
    Ok(sum << shift)
}

/// Reference MAC: decompress both groups to base precision first, then
/// accumulate full-width products.
pub fn mac_group_decompress_oracle(a: &CompressedGroup, b: &CompressedGroup) -> Result<i64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            lhs: a.len(),
            rhs: b.len(),
        });
    }
    let shift = a.flag() as u32 + b.flag() as u32;
    if shift + product_bits(a, b) > ACC_BITS {
        return Err(Error::ShiftOverflow { shift });
    }
    let widen = |g: &CompressedGroup| -> Vec<i128> {
        g.elements()
            .iter()
            .map(|e| (e.signed() as i128) * (1i128 << g.flag()))
            .collect()
    };
    let total: i128 = widen(a).into_iter().zip(widen(b)).map(|(x, y)| x * y).sum();
    i64::try_from(total).map_err(|_| Error::ShiftOverflow { shift })
}

/// Largest flag-sum shift any group pair of the two configs can produce.
pub fn max_pair_shift(lhs: &SdrConfig, rhs: &SdrConfig) -> u32 {
    lhs.max_flag() + rhs.max_flag()
}

/// Compressed operands of `out = lhs · rhsᵀ`.
///
/// `lhs` is `[M, K]` and `rhs` is `[N, K]`, both grouped along `K`
/// (the layout of a `[out, in]` weight matrix or of the key cache).
#[derive(Debug, Clone)]
pub struct MatmulPlan {
    lhs: CompressedTensor,
    rhs: CompressedTensor,
    lhs_scales: ScaleSet,
    rhs_scales: ScaleSet,
}

impl MatmulPlan {
    pub fn new(
        lhs: CompressedTensor,
        rhs: CompressedTensor,
        lhs_scales: ScaleSet,
        rhs_scales: ScaleSet,
    ) -> Result<Self> {
        let (&[_, k_l], &[_, k_r]) = (lhs.shape(), rhs.shape()) else {
            return Err(Error::PlanInvalid(format!(
                "operands must be 2-D, got {:?} and {:?}",
                lhs.shape(),
                rhs.shape()
            )));
        };
        if k_l != k_r {
            return Err(Error::PlanInvalid(format!(
                "inner dimensions differ: {k_l} vs {k_r}"
            )));
        }
        if lhs.config().group_size() != rhs.config().group_size() {
            return Err(Error::PlanInvalid(format!(
                "group sizes differ: {} vs {}",
                lhs.config().group_size(),
                rhs.config().group_size()
            )));
        }
        for (t, s, side) in [(&lhs, &lhs_scales, "lhs"), (&rhs, &rhs_scales, "rhs")] {
            match s.granularity() {
                Granularity::PerTensor | Granularity::PerChannel { axis: 0 } => {}
                g => {
                    return Err(Error::PlanInvalid(format!(
                        "{side} granularity {g:?} cannot be factored out of the inner product"
                    )))
                }
            }
            s.check_shape(t.shape())
                .map_err(|e| Error::PlanInvalid(format!("{side} scales: {e}")))?;
            if s.base_bits() != t.config().base_bits() {
                return Err(Error::PlanInvalid(format!(
                    "{side} scales are for base {} but the tensor is base {}",
                    s.base_bits(),
                    t.config().base_bits()
                )));
            }
        }
        Ok(Self {
            lhs,
            rhs,
            lhs_scales,
            rhs_scales,
        })
    }

    pub fn lhs(&self) -> &CompressedTensor {
        &self.lhs
    }

    pub fn rhs(&self) -> &CompressedTensor {
        &self.rhs
    }

    pub fn lhs_scales(&self) -> &ScaleSet {
        &self.lhs_scales
    }

    pub fn rhs_scales(&self) -> &ScaleSet {
        &self.rhs_scales
    }

    /// `(M, N, K)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.lhs.shape()[0],
            self.rhs.shape()[0],
            self.lhs.shape()[1],
        )
    }
}

fn scale_at(s: &ScaleSet, row: usize) -> f64 {
    match s.granularity() {
        Granularity::PerTensor => s.scales()[0] as f64,
        Granularity::PerChannel { .. } => s.scales()[row] as f64,
    }
}

/// Integer part of the product, `[M, N]` row-major, bit-exact.
pub fn matmul_integer(plan: &MatmulPlan) -> Result<Vec<i64>> {
    let (m, n, _) = plan.dims();
    let per_row = plan.lhs.groups_per_row();
    let lhs_rows: Vec<&[CompressedGroup]> = if per_row == 0 {
        vec![&[]; m]
    } else {
        plan.lhs.groups().chunks(per_row).collect()
    };
    let rhs_rows: Vec<&[CompressedGroup]> = if per_row == 0 {
        vec![&[]; n]
    } else {
        plan.rhs.groups().chunks(per_row).collect()
    };
    let rows = lhs_rows
        .par_iter()
        .map(|a_row| {
            rhs_rows
                .iter()
                .map(|b_row| {
                    let mut acc = GroupProductAcc::new();
                    for (a, b) in a_row.iter().zip(b_row.iter()) {
                        acc.add_pair(a, b)?;
                    }
                    Ok(acc.value())
                })
                .collect::<Result<Vec<i64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Full product with the stage-one scales applied per output cell.
pub fn matmul_compressed(plan: &MatmulPlan) -> Result<TensorF> {
    let (m, n, _) = plan.dims();
    let ints = matmul_integer(plan)?;
    let data = ints
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let (i, j) = (idx / n.max(1), idx % n.max(1));
            (v as f64 * scale_at(&plan.lhs_scales, i) * scale_at(&plan.rhs_scales, j)) as f32
        })
        .collect();
    TensorF::new(vec![m, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::Role;
    use crate::sdr::compress_tensor;
    use crate::tensor::{BaseTensor, SignMag};

    fn sm(v: &[i32]) -> Vec<SignMag> {
        v.iter().map(|&x| SignMag::from_signed(x)).collect()
    }

    fn group(flag: u8, v: &[i32], cfg: &SdrConfig) -> CompressedGroup {
        CompressedGroup::new(flag, sm(v), cfg).unwrap()
    }

    #[test]
    fn single_product_example() {
        let c16 = SdrConfig::new(16, 4, 1).unwrap();
        let a = group(4, &[0b110], &c16);
        let b = group(2, &[-0b011], &c16);
        assert_eq!(mac_group(&a, &b).unwrap(), -1152);
        assert_eq!(mac_group_decompress_oracle(&a, &b).unwrap(), -1152);
        assert_eq!(-1152, 96 * -12);
    }

    #[test]
    fn zero_group_annihilates() {
        let cfg = SdrConfig::new(8, 4, 4).unwrap();
        let a = group(4, &[7, -3, 1, 5], &cfg);
        let z = group(0, &[0, 0, 0, 0], &cfg);
        assert_eq!(mac_group(&a, &z).unwrap(), 0);
        assert_eq!(mac_group_decompress_oracle(&z, &z).unwrap(), 0);
    }

    #[test]
    fn worked_group_self_dot() {
        let cfg = SdrConfig::new(8, 4, 4).unwrap();
        let a = group(4, &[0b110, -0b001, 0b010, 0], &cfg);
        assert_eq!(mac_group(&a, &a).unwrap(), 10496);
        assert_eq!(96 * 96 + 16 * 16 + 32 * 32, 10496);
        assert_eq!(mac_group_decompress_oracle(&a, &a).unwrap(), 10496);
    }

    #[test]
    fn length_mismatch() {
        let cfg = SdrConfig::new(8, 4, 4).unwrap();
        let a = group(0, &[1, 2], &cfg);
        let b = group(0, &[1], &cfg);
        assert_eq!(
            mac_group(&a, &b),
            Err(Error::LengthMismatch { lhs: 2, rhs: 1 })
        );
    }

    #[test]
    fn w4a4_shift_width() {
        let act = SdrConfig::new(16, 4, 16).unwrap();
        let wt = SdrConfig::new(8, 4, 16).unwrap();
        assert_eq!(max_pair_shift(&act, &wt), 16);
    }

    #[test]
    fn worked_matmul() {
        let cfg = SdrConfig::new(8, 4, 4).unwrap();
        let bt = BaseTensor::new(vec![1, 4], 8, sm(&[90, -12, 39, 1])).unwrap();
        let ct = compress_tensor(&bt, &cfg).unwrap();
        let ls = ScaleSet::new(Role::Query, Granularity::PerTensor, 8, vec![0.5]).unwrap();
        let rs = ScaleSet::new(Role::Key, Granularity::PerTensor, 8, vec![0.25]).unwrap();
        let plan = MatmulPlan::new(ct.clone(), ct, ls, rs).unwrap();
        assert_eq!(matmul_integer(&plan).unwrap(), vec![10496]);
        assert_eq!(matmul_compressed(&plan).unwrap().data(), &[10496.0 * 0.125]);
    }

    #[test]
    fn per_channel_rhs_scales_columns() {
        let cfg = SdrConfig::new(8, 4, 2).unwrap();
        let lhs =
            compress_tensor(&BaseTensor::new(vec![1, 2], 8, sm(&[1, 2])).unwrap(), &cfg).unwrap();
        let rhs = compress_tensor(
            &BaseTensor::new(vec![2, 2], 8, sm(&[1, 1, 2, -3])).unwrap(),
            &cfg,
        )
        .unwrap();
        let ls = ScaleSet::new(Role::Activation, Granularity::PerTensor, 8, vec![1.0]).unwrap();
        let rs = ScaleSet::new(
            Role::Weight,
            Granularity::PerChannel { axis: 0 },
            8,
            vec![2.0, 10.0],
        )
        .unwrap();
        let plan = MatmulPlan::new(lhs, rhs, ls, rs).unwrap();
        assert_eq!(matmul_integer(&plan).unwrap(), vec![3, -4]);
        assert_eq!(matmul_compressed(&plan).unwrap().data(), &[6.0, -40.0]);
    }

    #[test]
    fn invalid_plans() {
        let c4 = SdrConfig::new(8, 4, 4).unwrap();
        let c2 = SdrConfig::new(8, 4, 2).unwrap();
        let a =
            compress_tensor(&BaseTensor::new(vec![1, 4], 8, sm(&[1; 4])).unwrap(), &c4).unwrap();
        let b =
            compress_tensor(&BaseTensor::new(vec![1, 4], 8, sm(&[1; 4])).unwrap(), &c2).unwrap();
        let c =
            compress_tensor(&BaseTensor::new(vec![1, 3], 8, sm(&[1; 3])).unwrap(), &c4).unwrap();
        let s = ScaleSet::new(Role::Query, Granularity::PerTensor, 8, vec![1.0]).unwrap();
        assert!(matches!(
            MatmulPlan::new(a.clone(), b, s.clone(), s.clone()),
            Err(Error::PlanInvalid(_))
        ));
        assert!(matches!(
            MatmulPlan::new(a.clone(), c, s.clone(), s.clone()),
            Err(Error::PlanInvalid(_))
        ));
        let inner = ScaleSet::new(
            Role::Weight,
            Granularity::PerChannel { axis: 1 },
            8,
            vec![1.0; 4],
        )
        .unwrap();
        assert!(matches!(
            MatmulPlan::new(a.clone(), a, s, inner),
            Err(Error::PlanInvalid(_))
        ));
    }
}
