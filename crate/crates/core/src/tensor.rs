//! Dense float tensors and sign-magnitude integer tensors.

use crate::error::{Error, Result};

/// Row-major `f32` tensor with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = numel(&shape)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::UnsupportedValue(format!(
                "non-finite value {} at index {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = numel(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.shape, self.data)
    }
}

/// A sign-magnitude integer. Zero magnitude always carries sign 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SignMag {
    neg: bool,
    mag: u16,
}

impl SignMag {
    pub const ZERO: SignMag = SignMag { neg: false, mag: 0 };

    #[inline]
    pub fn new(neg: bool, mag: u16) -> Self {
        Self {
            neg: neg && mag != 0,
            mag,
        }
    }

    #[inline]
    pub fn pos(mag: u16) -> Self {
        Self::new(false, mag)
    }

    #[inline]
    pub fn neg(mag: u16) -> Self {
        Self::new(true, mag)
    }

    /// Panics if `|v|` does not fit in 16 bits.
    pub fn from_signed(v: i32) -> Self {
        let mag = u16::try_from(v.unsigned_abs()).expect("magnitude exceeds 16 bits");
        Self::new(v < 0, mag)
    }

    #[inline]
    pub fn is_neg(self) -> bool {
        self.neg
    }

    #[inline]
    pub fn sign_bit(self) -> u8 {
        self.neg as u8
    }

    #[inline]
    pub fn mag(self) -> u16 {
        self.mag
    }

    #[inline]
    pub fn signed(self) -> i32 {
        if self.neg {
            -(self.mag as i32)
        } else {
            self.mag as i32
        }
    }
}

/// Sign-magnitude integers at a base precision of `base_bits` total bits
/// (one sign bit plus `base_bits - 1` magnitude bits).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseTensor {
    shape: Vec<usize>,
    base_bits: u8,
    values: Vec<SignMag>,
}

impl BaseTensor {
    pub fn new(shape: Vec<usize>, base_bits: u8, values: Vec<SignMag>) -> Result<Self> {
        if !(2..=16).contains(&base_bits) {
            return Err(Error::ConfigViolation(format!(
                "base precision {base_bits} outside 2..=16"
            )));
        }
        let n = numel(&shape)?;
        if n != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} elements, got {}",
                values.len()
            )));
        }
        let max = max_magnitude(base_bits);
        if let Some(i) = values.iter().position(|v| v.mag() > max) {
            return Err(Error::InvalidTensor(format!(
                "magnitude {} at index {i} exceeds {max}",
                values[i].mag()
            )));
        }
        Ok(Self {
            shape,
            base_bits,
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn base_bits(&self) -> u8 {
        self.base_bits
    }

    pub fn values(&self) -> &[SignMag] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Largest magnitude representable with `bits` total sign-magnitude bits.
#[inline]
pub fn max_magnitude(bits: u8) -> u16 {
    ((1u32 << (bits - 1)) - 1) as u16
}

/// Element count of `shape`, rejecting overflow.
pub fn numel(shape: &[usize]) -> Result<usize> {
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))
    })
}

/// Splits a row-major shape into `(rows, row_len)` along the last axis.
/// A scalar (empty shape) is one row of one element.
pub fn rows_of(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        None => (1, 1),
        Some((&last, lead)) => (lead.iter().product(), last),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_canonically_positive() {
        assert_eq!(SignMag::neg(0), SignMag::ZERO);
        assert!(!SignMag::from_signed(0).is_neg());
        assert_eq!(SignMag::from_signed(-5).signed(), -5);
    }

    #[test]
    fn tensor_rejects_nan_and_bad_shape() {
        assert!(matches!(
            TensorF::new(vec![2], vec![1.0, f32::NAN]),
            Err(Error::UnsupportedValue(_))
        ));
        assert!(matches!(
            TensorF::new(vec![3], vec![1.0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(TensorF::new(vec![0], vec![]).unwrap().is_empty());
    }

    #[test]
    fn base_tensor_checks_magnitudes() {
        assert!(BaseTensor::new(vec![1], 8, vec![SignMag::pos(127)]).is_ok());
        assert!(matches!(
            BaseTensor::new(vec![1], 8, vec![SignMag::pos(128)]),
            Err(Error::InvalidTensor(_))
        ));
    }

    #[test]
    fn row_split() {
        assert_eq!(rows_of(&[2, 3, 5]), (6, 5));
        assert_eq!(rows_of(&[7]), (1, 7));
        assert_eq!(rows_of(&[]), (1, 1));
        assert_eq!(rows_of(&[0]), (1, 0));
    }
}
