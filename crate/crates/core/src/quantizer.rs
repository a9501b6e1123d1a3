//! Static absolute-max quantization to sign-magnitude base precision.
//!
//! A scale maps the calibrated absolute maximum of a slot onto the largest
//! representable magnitude `2^(b-1) - 1`. Values are rounded half away from
//! zero and clamped to the symmetric range, so the two's-complement minimum
//! is never produced.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{max_magnitude, BaseTensor, SignMag, TensorF};

/// Which tensor of a transformer layer a scale set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Weight,
    Activation,
    Query,
    Key,
    Value,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Weight,
        Role::Activation,
        Role::Query,
        Role::Key,
        Role::Value,
    ];

    pub fn code(self) -> u8 {
        match self {
            Role::Weight => 0,
            Role::Activation => 1,
            Role::Query => 2,
            Role::Key => 3,
            Role::Value => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.get(code as usize).copied()
    }

    /// Weights are scaled per output channel, everything else per tensor.
    pub fn default_granularity(self) -> Granularity {
        match self {
            Role::Weight => Granularity::PerChannel { axis: 0 },
            _ => Granularity::PerTensor,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Weight => "weight",
            Role::Activation => "activation",
            Role::Query => "query",
            Role::Key => "key",
            Role::Value => "value",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::ConfigViolation(format!("unknown role {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    PerTensor,
    PerChannel { axis: usize },
}

impl Granularity {
    /// Number of scale slots this granularity needs for `shape`.
    pub fn slots(self, shape: &[usize]) -> Result<usize> {
        match self {
            Granularity::PerTensor => Ok(1),
            Granularity::PerChannel { axis } => shape.get(axis).copied().ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "channel axis {axis} out of range for shape {shape:?}"
                ))
            }),
        }
    }

    /// Maps a flat row-major index to its scale slot.
    fn slot_mapper(self, shape: &[usize]) -> impl Fn(usize) -> usize + Sync {
        let (stride, size) = match self {
            Granularity::PerTensor => (1, 1),
            Granularity::PerChannel { axis } => (
                shape[axis + 1..].iter().product::<usize>().max(1),
                shape[axis],
            ),
        };
        move |i| (i / stride) % size.max(1)
    }
}

/// Static scale factors for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet {
    role: Role,
    granularity: Granularity,
    base_bits: u8,
    scales: Vec<f32>,
}

impl ScaleSet {
    /// Builds a scale set from explicit scales (e.g. a calibration override).
    pub fn new(
        role: Role,
        granularity: Granularity,
        base_bits: u8,
        scales: Vec<f32>,
    ) -> Result<Self> {
        if base_bits != 8 && base_bits != 16 {
            return Err(Error::InvalidScales(format!(
                "base precision must be 8 or 16, got {base_bits}"
            )));
        }
        if scales.is_empty() {
            return Err(Error::InvalidScales("no scales".into()));
        }
        if granularity == Granularity::PerTensor && scales.len() != 1 {
            return Err(Error::InvalidScales(format!(
                "per-tensor scaling needs exactly one scale, got {}",
                scales.len()
            )));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidScales(format!(
                "scale {s} is not positive and finite"
            )));
        }
        Ok(Self {
            role,
            granularity,
            base_bits,
            scales,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn base_bits(&self) -> u8 {
        self.base_bits
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    /// Largest magnitude at this base precision, `2^(b-1) - 1`.
    pub fn qmax(&self) -> u16 {
        max_magnitude(self.base_bits)
    }

    /// Same scales rounded through IEEE half precision.
    pub fn to_f16_precision(&self) -> Result<Self> {
        let scales = self
            .scales
            .iter()
            .map(|&s| half::f16::from_f32(s).to_f32())
            .collect();
        Self::new(self.role, self.granularity, self.base_bits, scales)
    }

    /// Checks that this scale set can be applied to a tensor of `shape`.
    pub fn check_shape(&self, shape: &[usize]) -> Result<()> {
        let slots = self.granularity.slots(shape)?;
        if slots != self.scales.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scales for {slots} slots of shape {shape:?}",
                self.scales.len()
            )));
        }
        Ok(())
    }
}

/// Computes static absmax scales over a calibration set.
pub fn calibrate_absmax(
    samples: &[TensorF],
    role: Role,
    granularity: Granularity,
    base_bits: u8,
) -> Result<ScaleSet> {
    let first = samples.first().ok_or(Error::EmptyCalibration)?;
    let slots = granularity.slots(first.shape())?;
    let mut absmax = vec![0f32; slots];
    for sample in samples {
        if granularity.slots(sample.shape())? != slots {
            return Err(Error::ShapeMismatch(format!(
                "sample shape {:?} disagrees with {:?} on the channel axis",
                sample.shape(),
                first.shape()
            )));
        }
        let slot_of = granularity.slot_mapper(sample.shape());
        for (i, &x) in sample.data().iter().enumerate() {
            let m = &mut absmax[slot_of(i)];
            *m = m.max(x.abs());
        }
    }
    if let Some(slot) = absmax.iter().position(|&m| m == 0.0) {
        return Err(Error::AllZeroSlot { slot });
    }
    let qmax = max_magnitude(base_bits) as f64;
    let scales = absmax.iter().map(|&m| (m as f64 / qmax) as f32).collect();
    ScaleSet::new(role, granularity, base_bits, scales)
}

/// Quantizes one value; `qmax` is the largest representable magnitude.
#[inline]
pub fn quantize_value(x: f32, scale: f32, qmax: u16) -> SignMag {
    // Both operands have 24-bit mantissas, so the f64 quotient decides
    // every rounding tie correctly.
    let r = (x as f64 / scale as f64).round();
    let mag = r.abs().min(qmax as f64) as u16;
    SignMag::new(r < 0.0, mag)
}

pub fn quantize_base(x: &TensorF, s: &ScaleSet) -> Result<BaseTensor> {
    s.check_shape(x.shape())?;
    let slot_of = s.granularity.slot_mapper(x.shape());
    let qmax = s.qmax();
    let values = x
        .data()
        .par_iter()
        .enumerate()
        .map(|(i, &v)| quantize_value(v, s.scales[slot_of(i)], qmax))
        .collect();
    BaseTensor::new(x.shape().to_vec(), s.base_bits, values)
}

/// Dequantizes in double precision; each value is `signed(q) * scale`.
pub fn dequantize_base_f64(q: &BaseTensor, s: &ScaleSet) -> Result<Vec<f64>> {
    if q.base_bits() != s.base_bits {
        return Err(Error::ShapeMismatch(format!(
            "base precision {} does not match scale set precision {}",
            q.base_bits(),
            s.base_bits
        )));
    }
    s.check_shape(q.shape())?;
    let slot_of = s.granularity.slot_mapper(q.shape());
    Ok(q.values()
        .iter()
        .enumerate()
        .map(|(i, v)| v.signed() as f64 * s.scales[slot_of(i)] as f64)
        .collect())
}

pub fn dequantize_base(q: &BaseTensor, s: &ScaleSet) -> Result<TensorF> {
    let data = dequantize_base_f64(q, s)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    TensorF::new(q.shape().to_vec(), data)
}
