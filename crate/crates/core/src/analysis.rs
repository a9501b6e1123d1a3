//! Statistics and cost models around the compression pipeline.
//!
//! Covers leading-one histograms and zeroed-element fractions of base
//! tensors, float-domain error metrics for the full round trip, a per-group
//! dynamic absmax baseline and operation counts for rotation-based versus
//! razoring-based pipelines.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quantizer::{dequantize_base_f64, quantize_base, Role, ScaleSet};
use crate::sdr::{
    compress_tensor, decompress_tensor, detect_razoring_point, group_slices, SdrConfig,
};
use crate::tensor::{BaseTensor, TensorF};

/// Distribution of per-group razoring points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeadingOneHistogram {
    pub role: Option<Role>,
    pub group_size: usize,
    /// `counts[b - 1]` is the number of groups whose leading one sits at bit
    /// order `b`, counted 1-based from the LSB.
    pub counts: Vec<u64>,
    pub zero_groups: u64,
}

impl LeadingOneHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.zero_groups
    }

    /// Groups whose leading one is at bit order `position` (1-based).
    pub fn at(&self, position: usize) -> u64 {
        position
            .checked_sub(1)
            .and_then(|i| self.counts.get(i))
            .copied()
            .unwrap_or(0)
    }

    /// Share of all groups whose leading one lies above bit order `threshold`.
    pub fn fraction_above(&self, threshold: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let above: u64 = self.counts.iter().skip(threshold).sum();
        above as f64 / total as f64
    }
}

pub fn leading_one_histogram(bt: &BaseTensor, group_size: usize) -> Result<LeadingOneHistogram> {
    if group_size == 0 {
        return Err(Error::ConfigViolation("group size must be positive".into()));
    }
    let mut counts = vec![0u64; bt.base_bits() as usize - 1];
    let mut zero_groups = 0;
    for group in group_slices(bt.values(), bt.shape(), group_size) {
        match detect_razoring_point(group.iter().map(|e| e.mag())) {
            Some(p) => counts[p as usize] += 1,
            None => zero_groups += 1,
        }
    }
    Ok(LeadingOneHistogram {
        role: None,
        group_size,
        counts,
        zero_groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub mse: f64,
    pub max_abs_err: f64,
    /// `+inf` when the reconstruction is exact.
    pub sqnr_db: f64,
    pub zero_frac_before: f64,
    pub zero_frac_after: f64,
}

impl ErrorReport {
    fn from_pairs(orig: &[f32], recon: &[f64], zeros_before: usize, zeros_after: usize) -> Self {
        let n = orig.len();
        let mut noise = 0.0f64;
        let mut signal = 0.0f64;
        let mut max_abs_err = 0.0f64;
        for (&x, &y) in orig.iter().zip(recon) {
            let e = y - x as f64;
            noise += e * e;
            signal += x as f64 * x as f64;
            max_abs_err = max_abs_err.max(e.abs());
        }
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let sqnr_db = if noise == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (signal / noise).log10()
        };
        Self {
            mse: if n == 0 { 0.0 } else { noise / n as f64 },
            max_abs_err,
            sqnr_db,
            zero_frac_before: frac(zeros_before),
            zero_frac_after: frac(zeros_after),
        }
    }
}

/// Runs quantize, compress, decompress and dequantize, then measures the
/// float-domain error. Zero fractions count zero base integers before and
/// after razoring.
pub fn compression_error_report(
    orig: &TensorF,
    scales: &ScaleSet,
    cfg: &SdrConfig,
) -> Result<ErrorReport> {
    let base = quantize_base(orig, scales)?;
    let recon_base = decompress_tensor(&compress_tensor(&base, cfg)?)?;
    let recon = dequantize_base_f64(&recon_base, scales)?;
    let zeros = |bt: &BaseTensor| bt.values().iter().filter(|v| v.mag() == 0).count();
    Ok(ErrorReport::from_pairs(
        orig.data(),
        &recon,
        zeros(&base),
        zeros(&recon_base),
    ))
}

fn absmax_codes<'a>(
    groups: impl Iterator<Item = &'a [f32]>,
    bits: u32,
    recon: &mut Vec<f64>,
) -> usize {
    let qmax = ((1u64 << (bits - 1)) - 1) as f64;
    let mut zero_codes = 0;
    for group in groups {
        let absmax = group.iter().fold(0f32, |m, x| m.max(x.abs())) as f64;
        if absmax == 0.0 {
            recon.extend(std::iter::repeat_n(0.0, group.len()));
            zero_codes += group.len();
            continue;
        }
        let scale = absmax / qmax;
        for &x in group {
            let code = (x as f64 / scale).round().clamp(-qmax, qmax);
            if code == 0.0 {
                zero_codes += 1;
            }
            recon.push(code * scale);
        }
    }
    zero_codes
}

fn check_bits(bits: u32) -> Result<()> {
    if !(2..=32).contains(&bits) {
        return Err(Error::ConfigViolation(format!(
            "{bits} bits outside 2..=32"
        )));
    }
    Ok(())
}

/// Per-group dynamic absmax reconstruction, grouped like the SDR layout.
pub fn dmq_reconstruct(orig: &TensorF, group_size: usize, bits: u32) -> Result<(Vec<f64>, usize)> {
    check_bits(bits)?;
    if group_size == 0 {
        return Err(Error::ConfigViolation("group size must be positive".into()));
    }
    let mut recon = Vec::with_capacity(orig.len());
    let zeros = absmax_codes(
        group_slices(orig.data(), orig.shape(), group_size),
        bits,
        &mut recon,
    );
    Ok((recon, zeros))
}

/// Dynamic max-scaled quantization: every group gets its own real-valued
/// absmax scale.
pub fn dmq_baseline(orig: &TensorF, group_size: usize, bits: u32) -> Result<ErrorReport> {
    let (recon, zeros_after) = dmq_reconstruct(orig, group_size, bits)?;
    let zeros_before = orig.data().iter().filter(|&&x| x == 0.0).count();
    Ok(ErrorReport::from_pairs(
        orig.data(),
        &recon,
        zeros_before,
        zeros_after,
    ))
}

/// Plain per-tensor absmax quantization directly to `bits`.
pub fn per_tensor_absmax_baseline(orig: &TensorF, bits: u32) -> Result<ErrorReport> {
    check_bits(bits)?;
    let mut recon = Vec::with_capacity(orig.len());
    let zeros_after = absmax_codes(std::iter::once(orig.data()), bits, &mut recon);
    let zeros_before = orig.data().iter().filter(|&&x| x == 0.0).count();
    Ok(ErrorReport::from_pairs(
        orig.data(),
        &recon,
        zeros_before,
        zeros_after,
    ))
}

/// Operation counts for an `M x N` attention tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub hadamard_single_flops: u64,
    pub hadamard_heads_flops: u64,
    pub sdr_compression_iops: u64,
    pub barrel_shifter_iops: u64,
    /// Extension: one OR-reduction input plus one truncate/round per element.
    pub sdr_per_element_iops: u64,
    /// False when `G` does not divide `M * N`; group counts then fall back to
    /// `M * ceil(N / G)`.
    pub exact: bool,
}

pub fn ops_cost(m: u64, n: u64, h: u64, g: u64) -> CostReport {
    let elems = m * n;
    let exact = g != 0 && elems.is_multiple_of(g);
    let groups = if exact {
        elems / g
    } else {
        m * n.div_ceil(g.max(1))
    };
    CostReport {
        hadamard_single_flops: elems,
        hadamard_heads_flops: h * elems,
        sdr_compression_iops: if exact { elems * 2 / g } else { 2 * groups },
        barrel_shifter_iops: groups,
        sdr_per_element_iops: 2 * elems,
        exact,
    }
}

/// iid standard normal samples.
pub fn synthetic_normal(shape: Vec<usize>, seed: u64) -> Result<TensorF> {
    let n = crate::tensor::numel(&shape)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let data = (0..n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect::<Vec<f32>>();
    TensorF::new(shape, data)
}

/// iid standard normal samples with `round(outlier_frac * n)` distinct
/// positions multiplied by `factor`.
pub fn synthetic_normal_with_outliers(
    shape: Vec<usize>,
    seed: u64,
    outlier_frac: f64,
    factor: f32,
) -> Result<TensorF> {
    let (shape, mut data) = synthetic_normal(shape, seed)?.into_parts();
    let count = ((data.len() as f64) * outlier_frac).round() as usize;
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for i in rand::seq::index::sample(&mut rng, data.len(), count.min(data.len())) {
        data[i] *= factor;
    }
    TensorF::new(shape, data)
}
