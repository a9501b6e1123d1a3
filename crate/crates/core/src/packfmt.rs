//! On-disk containers.
//!
//! Four little-endian formats share one header style:
//!
//! * `FTN1`: raw `f32` tensor.
//! * `QRZ1`: SDR-compressed tensor. After the header come the flag section
//!   (every group flag, `flag_bits` each) and the element section (every
//!   element as a sign bit followed by its magnitude bits, `target_bits`
//!   each). Both sections are packed MSB-first and zero-padded to a byte.
//! * `QBT1`: base-precision tensor with its scales, elements packed like
//!   the QRZ element section at `base_bits` each.
//! * `QRZM`: a standalone scale set produced by calibration.
//!
//! Decoders accept only canonical streams: padding bits must be zero, zero
//! magnitudes must carry sign 0 and nothing may follow the last section.

use crate::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::quantizer::{Granularity, Role, ScaleSet};
use crate::sdr::{group_lengths, CompressedGroup, CompressedTensor, SdrConfig};
use crate::tensor::{numel, BaseTensor, SignMag, TensorF};

pub const QRZ_MAGIC: [u8; 4] = *b"QRZ1";
pub const FTN_MAGIC: [u8; 4] = *b"FTN1";
pub const BASE_MAGIC: [u8; 4] = *b"QBT1";
pub const SCALE_MAGIC: [u8; 4] = *b"QRZM";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// Average stored bits per element: `target_bits + flag_bits / g`.
pub fn effective_bits(target_bits: u32, flag_bits: u32, group_size: u32) -> f64 {
    target_bits as f64 + flag_bits as f64 / group_size as f64
}

/// Flag plus element payload bits of `ct`, excluding padding and header.
pub fn payload_bits(ct: &CompressedTensor) -> u64 {
    let cfg = ct.config();
    ct.groups()
        .iter()
        .map(|g| cfg.flag_bits() as u64 + g.len() as u64 * cfg.target_bits() as u64)
        .sum()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::TruncatedStream {
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, want: [u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.take(4)?.try_into().unwrap();
        if got != want {
            return Err(Error::BadMagic(got));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        Ok(())
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| {
                let d = self.u64()?;
                usize::try_from(d)
                    .map_err(|_| Error::ShapeMismatch(format!("dimension {d} too large")))
            })
            .collect::<Result<Vec<_>>>()?;
        numel(&shape)?;
        Ok(shape)
    }

    fn section(&mut self, bits: u128) -> Result<&'a [u8]> {
        let bytes = usize::try_from(bits.div_ceil(8)).map_err(|_| Error::TruncatedStream {
            needed: usize::MAX,
            available: self.bytes.len(),
        })?;
        self.take(bytes)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::InvariantViolation(format!(
                "{} trailing bytes after the last section",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    let ndim = u8::try_from(shape.len())
        .map_err(|_| Error::InvariantViolation(format!("{} dimensions", shape.len())))?;
    out.push(ndim);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

fn granularity_code(g: Granularity) -> Result<(u8, u8)> {
    match g {
        Granularity::PerTensor => Ok((0, 0)),
        Granularity::PerChannel { axis } => u8::try_from(axis)
            .map(|a| (1, a))
            .map_err(|_| Error::InvariantViolation(format!("channel axis {axis}"))),
    }
}

fn granularity_from(code: u8, axis: u8) -> Result<Granularity> {
    match (code, axis) {
        (0, 0) => Ok(Granularity::PerTensor),
        (1, a) => Ok(Granularity::PerChannel { axis: a as usize }),
        _ => Err(Error::InvariantViolation(format!(
            "granularity code {code} with axis {axis}"
        ))),
    }
}

fn role_from(code: u8) -> Result<Role> {
    Role::from_code(code).ok_or_else(|| Error::InvariantViolation(format!("role code {code}")))
}

fn put_scales(out: &mut Vec<u8>, scales: &[f32]) {
    out.extend_from_slice(&(scales.len() as u32).to_le_bytes());
    for s in scales {
        out.extend_from_slice(&s.to_le_bytes());
    }
}

fn read_scales(cur: &mut Cursor<'_>) -> Result<Vec<f32>> {
    let n = cur.u32()? as usize;
    let raw = cur.take(n.saturating_mul(4))?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn push_element(w: &mut BitWriter, e: SignMag, mag_bits: u32) {
    w.push(e.sign_bit() as u32, 1);
    w.push(e.mag() as u32, mag_bits);
}

fn read_element(r: &mut BitReader<'_>, mag_bits: u32) -> Result<SignMag> {
    let neg = r.read(1) == 1;
    let mag = r.read(mag_bits) as u16;
    if neg && mag == 0 {
        return Err(Error::InvariantViolation("negative zero element".into()));
    }
    Ok(SignMag::new(neg, mag))
}

fn check_padding(r: &BitReader<'_>, section: &str) -> Result<()> {
    if !r.rest_is_zero() {
        return Err(Error::InvariantViolation(format!(
            "nonzero padding in the {section} section"
        )));
    }
    Ok(())
}

pub fn encode_qrz(ct: &CompressedTensor, scales: &ScaleSet, role: Role) -> Result<Vec<u8>> {
    let cfg = ct.config();
    if scales.role() != role {
        return Err(Error::InvariantViolation(format!(
            "role {role} disagrees with scale set role {}",
            scales.role()
        )));
    }
    if scales.base_bits() != cfg.base_bits() {
        return Err(Error::InvariantViolation(format!(
            "scales are for base {} but the tensor is base {}",
            scales.base_bits(),
            cfg.base_bits()
        )));
    }
    scales
        .check_shape(ct.shape())
        .map_err(|e| Error::InvariantViolation(e.to_string()))?;
    let (gcode, axis) = granularity_code(scales.granularity())?;

    let mut out = Vec::new();
    out.extend_from_slice(&QRZ_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(role.code());
    out.push(cfg.base_bits());
    out.push(cfg.target_bits());
    out.push(cfg.flag_bits());
    out.extend_from_slice(&(cfg.group_size() as u32).to_le_bytes());
    out.push(gcode);
    out.push(axis);
    put_shape(&mut out, ct.shape())?;
    put_scales(&mut out, scales.scales());

    let flag_bits = cfg.flag_bits() as u32;
    let mut flags = BitWriter::with_capacity_bits(ct.groups().len() * flag_bits as usize);
    for g in ct.groups() {
        if g.flag() as u32 > cfg.max_flag() {
            return Err(Error::InvariantViolation(format!("flag {}", g.flag())));
        }
        flags.push(g.flag() as u32, flag_bits);
    }
    out.extend_from_slice(&flags.finish());

    let mag_bits = cfg.salient_width();
    let mut elems = BitWriter::with_capacity_bits(ct.numel() * cfg.target_bits() as usize);
    for g in ct.groups() {
        for &e in g.elements() {
            push_element(&mut elems, e, mag_bits);
        }
    }
    out.extend_from_slice(&elems.finish());
    Ok(out)
}

pub fn decode_qrz(bytes: &[u8]) -> Result<(CompressedTensor, ScaleSet, Role)> {
    let mut cur = Cursor::new(bytes);
    cur.magic(QRZ_MAGIC)?;
    let role = role_from(cur.u8()?)?;
    let base_bits = cur.u8()?;
    let target_bits = cur.u8()?;
    let flag_bits = cur.u8()?;
    let group_size = cur.u32()? as usize;
    let cfg = SdrConfig::with_flag_bits(base_bits, target_bits, group_size, flag_bits)?;
    let granularity = granularity_from(cur.u8()?, cur.u8()?)?;
    let shape = cur.shape()?;
    let scales = ScaleSet::new(role, granularity, base_bits, read_scales(&mut cur)?)?;
    scales.check_shape(&shape)?;

    let lengths = group_lengths(&shape, group_size)?;
    let n_elems: usize = lengths.iter().sum();
    let flag_section = cur.section(lengths.len() as u128 * flag_bits as u128)?;
    let elem_section = cur.section(n_elems as u128 * target_bits as u128)?;
    cur.finish()?;

    let max = cfg.max_flag();
    let mut flags = BitReader::new(flag_section);
    let mut elems = BitReader::new(elem_section);
    let mag_bits = cfg.salient_width();
    let mut groups = Vec::with_capacity(lengths.len());
    for (i, &len) in lengths.iter().enumerate() {
        let flag = flags.read(flag_bits as u32);
        if flag > max {
            return Err(Error::FlagOutOfRange {
                group: i,
                flag,
                max,
            });
        }
        let elements = (0..len)
            .map(|_| read_element(&mut elems, mag_bits))
            .collect::<Result<Vec<_>>>()?;
        groups.push(CompressedGroup::new(flag as u8, elements, &cfg)?);
    }
    check_padding(&flags, "flag")?;
    check_padding(&elems, "element")?;

    let ct = CompressedTensor::from_groups(shape, cfg, groups)?;
    Ok((ct, scales, role))
}

pub fn write_tensor_container(t: &TensorF) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + t.len() * 4);
    out.extend_from_slice(&FTN_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    put_shape(&mut out, t.shape())?;
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_tensor_container(bytes: &[u8]) -> Result<TensorF> {
    let mut cur = Cursor::new(bytes);
    cur.magic(FTN_MAGIC)?;
    let dtype = cur.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let shape = cur.shape()?;
    let n = numel(&shape)?;
    let payload = cur.take(n.checked_mul(4).ok_or(Error::TruncatedStream {
        needed: usize::MAX,
        available: bytes.len(),
    })?)?;
    cur.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TensorF::new(shape, data)
}

/// Serializes a base-precision tensor together with its scales.
pub fn encode_base(bt: &BaseTensor, scales: &ScaleSet) -> Result<Vec<u8>> {
    if scales.base_bits() != bt.base_bits() {
        return Err(Error::InvariantViolation(format!(
            "scales are for base {} but the tensor is base {}",
            scales.base_bits(),
            bt.base_bits()
        )));
    }
    scales
        .check_shape(bt.shape())
        .map_err(|e| Error::InvariantViolation(e.to_string()))?;
    let (gcode, axis) = granularity_code(scales.granularity())?;
    let mut out = Vec::new();
    out.extend_from_slice(&BASE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(scales.role().code());
    out.push(bt.base_bits());
    out.push(gcode);
    out.push(axis);
    put_shape(&mut out, bt.shape())?;
    put_scales(&mut out, scales.scales());
    let mag_bits = bt.base_bits() as u32 - 1;
    let mut w = BitWriter::with_capacity_bits(bt.len() * bt.base_bits() as usize);
    for &e in bt.values() {
        push_element(&mut w, e, mag_bits);
    }
    out.extend_from_slice(&w.finish());
    Ok(out)
}

pub fn decode_base(bytes: &[u8]) -> Result<(BaseTensor, ScaleSet)> {
    let mut cur = Cursor::new(bytes);
    cur.magic(BASE_MAGIC)?;
    let role = role_from(cur.u8()?)?;
    let base_bits = cur.u8()?;
    let granularity = granularity_from(cur.u8()?, cur.u8()?)?;
    let shape = cur.shape()?;
    let scales = ScaleSet::new(role, granularity, base_bits, read_scales(&mut cur)?)?;
    scales.check_shape(&shape)?;
    let n = numel(&shape)?;
    let section = cur.section(n as u128 * base_bits as u128)?;
    cur.finish()?;
    let mut r = BitReader::new(section);
    let mag_bits = base_bits as u32 - 1;
    let values = (0..n)
        .map(|_| read_element(&mut r, mag_bits))
        .collect::<Result<Vec<_>>>()?;
    check_padding(&r, "element")?;
    Ok((BaseTensor::new(shape, base_bits, values)?, scales))
}

pub fn encode_scales(scales: &ScaleSet) -> Result<Vec<u8>> {
    let (gcode, axis) = granularity_code(scales.granularity())?;
    let mut out = Vec::new();
    out.extend_from_slice(&SCALE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(scales.role().code());
    out.push(scales.base_bits());
    out.push(gcode);
    out.push(axis);
    put_scales(&mut out, scales.scales());
    Ok(out)
}

pub fn decode_scales(bytes: &[u8]) -> Result<ScaleSet> {
    let mut cur = Cursor::new(bytes);
    cur.magic(SCALE_MAGIC)?;
    let role = role_from(cur.u8()?)?;
    let base_bits = cur.u8()?;
    let granularity = granularity_from(cur.u8()?, cur.u8()?)?;
    let scales = read_scales(&mut cur)?;
    cur.finish()?;
    ScaleSet::new(role, granularity, base_bits, scales)
}

/// First four bytes of a stream, if present.
pub fn sniff_magic(bytes: &[u8]) -> Option<[u8; 4]> {
    bytes.get(..4).map(|m| m.try_into().unwrap())
}
