//! Significant data razoring.
//!
//! Each group of sign-magnitude integers shares one razoring point: the
//! leading one of the bitwise OR of its magnitudes. Only the `s` salient
//! magnitude bits directly below (and including) that point are kept, with
//! the truncated tail rounded to nearest. The group flag records how many
//! low bits were dropped, so decompression is a plain left shift.
//!
//! An element whose retained bits are all ones is floored instead of
//! rounded, so a carry can never spill past the salient width.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{max_magnitude, numel, rows_of, BaseTensor, SignMag};

/// Group sizes used by the reference configurations.
pub const STANDARD_GROUP_SIZES: [usize; 5] = [8, 16, 32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SdrConfig {
    base_bits: u8,
    target_bits: u8,
    group_size: usize,
    flag_bits: u8,
}

impl SdrConfig {
    /// Config with the default flag width, `ceil(log2(base - target + 1))`.
    pub fn new(base_bits: u8, target_bits: u8, group_size: usize) -> Result<Self> {
        let flag_bits = if target_bits < base_bits {
            ceil_log2((base_bits - target_bits) as u64 + 1) as u8
        } else {
            0
        };
        Self::with_flag_bits(base_bits, target_bits, group_size, flag_bits)
    }

    pub fn with_flag_bits(
        base_bits: u8,
        target_bits: u8,
        group_size: usize,
        flag_bits: u8,
    ) -> Result<Self> {
        if !(2..=16).contains(&base_bits) {
            return Err(Error::ConfigViolation(format!(
                "base precision {base_bits} outside 2..=16"
            )));
        }
        if target_bits < 2 {
            return Err(Error::ConfigViolation(format!(
                "target width {target_bits} leaves no salient bits"
            )));
        }
        if target_bits >= base_bits {
            return Err(Error::ConfigViolation(format!(
                "target width {target_bits} leaves nothing to razor from base {base_bits}"
            )));
        }
        if group_size == 0 {
            return Err(Error::ConfigViolation("group size must be positive".into()));
        }
        if group_size > u32::MAX as usize {
            return Err(Error::ConfigViolation(format!(
                "group size {group_size} exceeds 32 bits"
            )));
        }
        let max_flag = (base_bits - target_bits) as u32;
        if flag_bits > 8 || (max_flag >> flag_bits) != 0 {
            return Err(Error::ConfigViolation(format!(
                "{flag_bits} flag bits cannot hold the maximum flag {max_flag}"
            )));
        }
        Ok(Self {
            base_bits,
            target_bits,
            group_size,
            flag_bits,
        })
    }

    pub fn base_bits(&self) -> u8 {
        self.base_bits
    }

    pub fn target_bits(&self) -> u8 {
        self.target_bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn flag_bits(&self) -> u8 {
        self.flag_bits
    }

    /// Magnitude bits kept per element (the sign takes the remaining bit).
    pub fn salient_width(&self) -> u32 {
        self.target_bits as u32 - 1
    }

    /// Largest legal flag, `(base - 1) - s`.
    pub fn max_flag(&self) -> u32 {
        (self.base_bits as u32 - 1) - self.salient_width()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompressedGroup {
    flag: u8,
    elements: Vec<SignMag>,
}

impl CompressedGroup {
    /// Validates `elements` against `cfg` and wraps them with `flag`.
    pub fn new(flag: u8, elements: Vec<SignMag>, cfg: &SdrConfig) -> Result<Self> {
        if flag as u32 > cfg.max_flag() {
            return Err(Error::CorruptFlag {
                flag: flag as u32,
                max: cfg.max_flag(),
            });
        }
        if elements.is_empty() || elements.len() > cfg.group_size {
            return Err(Error::ConfigViolation(format!(
                "group of {} elements outside 1..={}",
                elements.len(),
                cfg.group_size
            )));
        }
        let limit = 1u32 << cfg.salient_width();
        if let Some(e) = elements.iter().find(|e| e.mag() as u32 >= limit) {
            return Err(Error::InvariantViolation(format!(
                "compressed magnitude {} does not fit {} bits",
                e.mag(),
                cfg.salient_width()
            )));
        }
        Ok(Self { flag, elements })
    }

    /// Number of truncated low bits, i.e. the decompression shift.
    pub fn flag(&self) -> u8 {
        self.flag
    }

    pub fn elements(&self) -> &[SignMag] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Index (0 = LSB) of the highest set bit of the OR of all magnitudes.
#[inline]
pub fn detect_razoring_point(mags: impl IntoIterator<Item = u16>) -> Option<u32> {
    let or = mags.into_iter().fold(0u16, |acc, m| acc | m);
    or.checked_ilog2()
}

fn check_group(group: &[SignMag], cfg: &SdrConfig) -> Result<()> {
    if group.is_empty() || group.len() > cfg.group_size {
        return Err(Error::ConfigViolation(format!(
            "group of {} elements outside 1..={}",
            group.len(),
            cfg.group_size
        )));
    }
    let max = max_magnitude(cfg.base_bits);
    if let Some(e) = group.iter().find(|e| e.mag() > max) {
        return Err(Error::InvalidTensor(format!(
            "magnitude {} exceeds base precision {}",
            e.mag(),
            cfg.base_bits
        )));
    }
    Ok(())
}

/// Truncates one magnitude by `shift` bits, rounding to nearest unless the
/// retained bits are all ones.
#[inline]
fn razor(mag: u16, shift: u32, all_ones: u16) -> u16 {
    if shift == 0 {
        return mag;
    }
    let q = mag >> shift;
    if q == all_ones || (mag >> (shift - 1)) & 1 == 0 {
        q
    } else {
        q + 1
    }
}

pub fn compress_group(group: &[SignMag], cfg: &SdrConfig) -> Result<CompressedGroup> {
    check_group(group, cfg)?;
    let s = cfg.salient_width();
    let shift = match detect_razoring_point(group.iter().map(|e| e.mag())) {
        Some(p) => (p + 1).saturating_sub(s),
        None => 0,
    };
    let all_ones = ((1u32 << s) - 1) as u16;
    let elements = group
        .iter()
        .map(|e| SignMag::new(e.is_neg(), razor(e.mag(), shift, all_ones)))
        .collect();
    Ok(CompressedGroup {
        flag: shift as u8,
        elements,
    })
}

/// Straightforward restatement of [`compress_group`]: finds the largest
/// magnitude, locates its top bit by repeated halving and rounds each
/// element with explicit arithmetic. Used to cross-check the fast path.
pub fn compress_group_reference(group: &[SignMag], cfg: &SdrConfig) -> Result<CompressedGroup> {
    check_group(group, cfg)?;
    let s = cfg.salient_width() as i64;
    let largest = group.iter().map(|e| e.mag() as i64).max().unwrap_or(0);

    let mut top: i64 = -1;
    let mut v = largest;
    while v > 0 {
        v /= 2;
        top += 1;
    }
    let dropped = if top < 0 { 0 } else { (top + 1 - s).max(0) };

    let divisor = 2i64.pow(dropped as u32);
    let saturated = 2i64.pow(s as u32) - 1;
    let mut elements = Vec::with_capacity(group.len());
    for e in group {
        let m = e.mag() as i64;
        let kept = m / divisor;
        let remainder = m - kept * divisor;
        let r = if dropped == 0 || kept == saturated || 2 * remainder < divisor {
            kept
        } else {
            kept + 1
        };
        elements.push(SignMag::new(e.is_neg(), r as u16));
    }
    Ok(CompressedGroup {
        flag: dropped as u8,
        elements,
    })
}

pub fn decompress_group(cg: &CompressedGroup, cfg: &SdrConfig) -> Result<Vec<SignMag>> {
    let flag = cg.flag as u32;
    if flag > cfg.max_flag() {
        return Err(Error::CorruptFlag {
            flag,
            max: cfg.max_flag(),
        });
    }
    let limit = 1u32 << cfg.salient_width();
    cg.elements
        .iter()
        .map(|e| {
            if e.mag() as u32 >= limit {
                return Err(Error::InvariantViolation(format!(
                    "compressed magnitude {} does not fit {} bits",
                    e.mag(),
                    cfg.salient_width()
                )));
            }
            Ok(SignMag::new(e.is_neg(), e.mag() << flag))
        })
        .collect()
}

/// A tensor split into groups along its last axis, row by row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedTensor {
    shape: Vec<usize>,
    config: SdrConfig,
    groups: Vec<CompressedGroup>,
}

impl CompressedTensor {
    /// Assembles a tensor from already-compressed groups, checking layout.
    pub fn from_groups(
        shape: Vec<usize>,
        config: SdrConfig,
        groups: Vec<CompressedGroup>,
    ) -> Result<Self> {
        let lengths = group_lengths(&shape, config.group_size)?;
        if lengths.len() != groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {} groups, got {}",
                lengths.len(),
                groups.len()
            )));
        }
        for (i, (g, len)) in groups.iter().zip(&lengths).enumerate() {
            if g.len() != *len {
                return Err(Error::ShapeMismatch(format!(
                    "group {i} has {} elements, layout expects {len}",
                    g.len()
                )));
            }
        }
        Ok(Self {
            shape,
            config,
            groups,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn config(&self) -> &SdrConfig {
        &self.config
    }

    pub fn groups(&self) -> &[CompressedGroup] {
        &self.groups
    }

    pub fn numel(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    /// Groups per row along the last axis.
    pub fn groups_per_row(&self) -> usize {
        let (_, row_len) = rows_of(&self.shape);
        row_len.div_ceil(self.config.group_size)
    }

    pub fn max_flag_used(&self) -> u32 {
        self.groups.iter().map(|g| g.flag as u32).max().unwrap_or(0)
    }
}

/// Lengths of the groups that cover `shape`, in layout order.
pub fn group_lengths(shape: &[usize], group_size: usize) -> Result<Vec<usize>> {
    numel(shape)?;
    let (rows, row_len) = rows_of(shape);
    let full = row_len / group_size;
    let tail = row_len % group_size;
    let mut per_row = vec![group_size; full];
    if tail > 0 {
        per_row.push(tail);
    }
    Ok(std::iter::repeat_n(per_row, rows).flatten().collect())
}

/// Slices of `values` forming the groups, in layout order.
pub fn group_slices<'a, T>(
    values: &'a [T],
    shape: &[usize],
    group_size: usize,
) -> impl Iterator<Item = &'a [T]> + 'a {
    let (_, row_len) = rows_of(shape);
    let row_len = row_len.max(1);
    values
        .chunks(row_len)
        .flat_map(move |row| row.chunks(group_size))
}

pub fn compress_tensor(bt: &BaseTensor, cfg: &SdrConfig) -> Result<CompressedTensor> {
    if bt.base_bits() != cfg.base_bits {
        return Err(Error::ConfigViolation(format!(
            "tensor base precision {} does not match config base {}",
            bt.base_bits(),
            cfg.base_bits
        )));
    }
    let slices: Vec<&[SignMag]> = group_slices(bt.values(), bt.shape(), cfg.group_size).collect();
    let groups = slices
        .par_iter()
        .map(|g| compress_group(g, cfg))
        .collect::<Result<Vec<_>>>()?;
    CompressedTensor::from_groups(bt.shape().to_vec(), *cfg, groups)
}

pub fn decompress_tensor(ct: &CompressedTensor) -> Result<BaseTensor> {
    let lengths = group_lengths(&ct.shape, ct.config.group_size)?;
    if lengths.len() != ct.groups.len()
        || lengths.iter().zip(&ct.groups).any(|(l, g)| *l != g.len())
    {
        return Err(Error::ShapeMismatch(format!(
            "groups do not cover shape {:?}",
            ct.shape
        )));
    }
    let parts = ct
        .groups
        .par_iter()
        .map(|g| decompress_group(g, &ct.config))
        .collect::<Result<Vec<_>>>()?;
    BaseTensor::new(
        ct.shape.clone(),
        ct.config.base_bits,
        parts.into_iter().flatten().collect(),
    )
}

/// `ceil(log2(n))` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        (n - 1).ilog2() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(v: &[i32]) -> Vec<SignMag> {
        v.iter().map(|&x| SignMag::from_signed(x)).collect()
    }

    fn cfg8() -> SdrConfig {
        SdrConfig::new(8, 4, 4).unwrap()
    }

    #[test]
    fn razoring_point_examples() {
        assert_eq!(
            detect_razoring_point([0b1011010, 0b0001100, 0b0100111, 0b0000001]),
            Some(6)
        );
        assert_eq!(detect_razoring_point([0, 0, 0, 0]), None);
        assert_eq!(detect_razoring_point([1]), Some(0));
    }

    #[test]
    fn default_flag_widths() {
        assert_eq!(SdrConfig::new(16, 4, 16).unwrap().flag_bits(), 4);
        assert_eq!(SdrConfig::new(8, 4, 16).unwrap().flag_bits(), 3);
        assert_eq!(SdrConfig::new(16, 4, 16).unwrap().max_flag(), 12);
        assert_eq!(SdrConfig::new(8, 4, 16).unwrap().max_flag(), 4);
    }

    #[test]
    fn config_violations() {
        assert!(SdrConfig::new(8, 8, 16).is_err());
        assert!(SdrConfig::new(8, 1, 16).is_err());
        assert!(SdrConfig::new(8, 4, 0).is_err());
        assert!(SdrConfig::with_flag_bits(16, 4, 16, 3).is_err());
        assert!(SdrConfig::with_flag_bits(8, 4, 16, 4).is_ok());
    }

    #[test]
    fn worked_group() {
        let g = sm(&[0b1011010, -0b0001100, 0b0100111, 0b0000001]);
        let c = compress_group(&g, &cfg8()).unwrap();
        assert_eq!(c.flag(), 4);
        assert_eq!(c.elements(), &sm(&[0b110, -0b001, 0b010, 0b000])[..]);
        assert_eq!(compress_group_reference(&g, &cfg8()).unwrap(), c);

        let back = decompress_group(&c, &cfg8()).unwrap();
        assert_eq!(back, sm(&[96, -16, 32, 0]));
    }

    #[test]
    fn all_ones_floor() {
        let g = sm(&[0b1111010]);
        let c = compress_group(&g, &cfg8()).unwrap();
        assert_eq!(c.flag(), 4);
        assert_eq!(c.elements(), &sm(&[0b111])[..]);
        assert_eq!(compress_group_reference(&g, &cfg8()).unwrap(), c);
    }

    #[test]
    fn zero_and_small_groups() {
        let z = compress_group(&sm(&[0, 0, 0]), &cfg8()).unwrap();
        assert_eq!(z.flag(), 0);
        assert!(z.elements().iter().all(|e| *e == SignMag::ZERO));

        let small = compress_group(&sm(&[-0b100]), &cfg8()).unwrap();
        assert_eq!(small.flag(), 0);
        assert_eq!(small.elements(), &sm(&[-4])[..]);
        assert_eq!(
            compress_group_reference(&sm(&[-0b100]), &cfg8()).unwrap(),
            small
        );
    }

    #[test]
    fn rounded_to_zero_loses_sign() {
        let c = compress_group(&sm(&[100, -3]), &cfg8()).unwrap();
        assert_eq!(c.elements()[1], SignMag::ZERO);
    }

    #[test]
    fn decompress_examples() {
        let cfg = cfg8();
        let g = CompressedGroup::new(4, sm(&[0b110, -0b001]), &cfg).unwrap();
        assert_eq!(decompress_group(&g, &cfg).unwrap(), sm(&[96, -16]));
        let g0 = CompressedGroup::new(0, sm(&[5, -7]), &cfg).unwrap();
        assert_eq!(decompress_group(&g0, &cfg).unwrap(), sm(&[5, -7]));
    }

    #[test]
    fn corrupt_flag_rejected() {
        let cfg = cfg8();
        assert_eq!(
            CompressedGroup::new(5, sm(&[1]), &cfg),
            Err(Error::CorruptFlag { flag: 5, max: 4 })
        );
        let forged = CompressedGroup {
            flag: 5,
            elements: sm(&[1]),
        };
        assert_eq!(
            decompress_group(&forged, &cfg),
            Err(Error::CorruptFlag { flag: 5, max: 4 })
        );
    }

    #[test]
    fn invalid_groups() {
        let cfg = cfg8();
        assert!(compress_group(&[], &cfg).is_err());
        assert!(compress_group(&sm(&[1, 2, 3, 4, 5]), &cfg).is_err());
        assert!(compress_group(&sm(&[128]), &cfg).is_err());
    }

    #[test]
    fn tensor_layout() {
        let cfg = SdrConfig::new(8, 4, 8).unwrap();
        let bt = BaseTensor::new(vec![2, 8], 8, sm(&(0..16).collect::<Vec<_>>())).unwrap();
        let ct = compress_tensor(&bt, &cfg).unwrap();
        assert_eq!(ct.groups().len(), 2);

        let bt = BaseTensor::new(vec![1, 10], 8, sm(&(0..10).collect::<Vec<_>>())).unwrap();
        let ct = compress_tensor(&bt, &cfg).unwrap();
        assert_eq!(
            ct.groups().iter().map(|g| g.len()).collect::<Vec<_>>(),
            vec![8, 2]
        );

        let z = BaseTensor::new(vec![3, 5], 8, vec![SignMag::ZERO; 15]).unwrap();
        let ct = compress_tensor(&z, &cfg).unwrap();
        assert!(ct.groups().iter().all(|g| g.flag() == 0));
        assert_eq!(decompress_tensor(&ct).unwrap(), z);
    }

    #[test]
    fn tensor_base_mismatch() {
        let bt = BaseTensor::new(vec![1], 16, vec![SignMag::ZERO]).unwrap();
        assert!(matches!(
            compress_tensor(&bt, &cfg8()),
            Err(Error::ConfigViolation(_))
        ));
    }

    #[test]
    fn worked_tensor_round_trip() {
        let bt = BaseTensor::new(vec![1, 4], 8, sm(&[90, -12, 39, 1])).unwrap();
        let back = decompress_tensor(&compress_tensor(&bt, &cfg8()).unwrap()).unwrap();
        assert_eq!(back.values(), &sm(&[96, -16, 32, 0])[..]);
    }

    #[test]
    fn empty_tensor() {
        let bt = BaseTensor::new(vec![0], 8, vec![]).unwrap();
        let ct = compress_tensor(&bt, &cfg8()).unwrap();
        assert!(ct.groups().is_empty());
        assert_eq!(decompress_tensor(&ct).unwrap(), bt);
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(
            [1, 2, 3, 4, 5, 8, 9, 13, 16, 128].map(ceil_log2),
            [0, 1, 2, 2, 3, 3, 4, 4, 4, 7]
        );
    }
}
