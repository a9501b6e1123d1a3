use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use qrazor::analysis::{
    compression_error_report, dmq_baseline, leading_one_histogram, ops_cost,
    per_tensor_absmax_baseline, CostReport, ErrorReport, LeadingOneHistogram,
};
use qrazor::arith::{matmul_compressed, MatmulPlan};
use qrazor::packfmt::{
    decode_base, decode_qrz, decode_scales, effective_bits, encode_base, encode_qrz, encode_scales,
    payload_bits, read_tensor_container, sniff_magic, write_tensor_container, BASE_MAGIC,
    FTN_MAGIC,
};
use qrazor::quantizer::{calibrate_absmax, dequantize_base, quantize_base};
use qrazor::sdr::{compress_tensor, decompress_tensor};
use qrazor::{BaseTensor, Granularity, Role, ScaleSet, SdrConfig, TensorF};

use crate::args::{Command, GranularityArg, SdrArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit status 2.
    Usage(String),
    /// Bad or inconsistent data; exit status 1.
    Data(qrazor::Error),
}

impl From<qrazor::Error> for CliError {
    fn from(e: qrazor::Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path)
        .map_err(|e| CliError::Data(qrazor::Error::Io(format!("{}: {e}", path.display()))))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Data(qrazor::Error::Io(format!("{}: {e}", path.display()))))
}

fn parse_role(s: &str) -> Result<Role> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("unknown role {s:?}")))
}

impl SdrArgs {
    fn config(&self) -> Result<SdrConfig> {
        Ok(match self.flag_bits {
            Some(f) => {
                SdrConfig::with_flag_bits(self.base_bits, self.target_bits, self.group_size, f)?
            }
            None => SdrConfig::new(self.base_bits, self.target_bits, self.group_size)?,
        })
    }
}

fn sqnr_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn error_json(method: &str, r: &ErrorReport) -> Value {
    json!({
        "report": "errors",
        "method": method,
        "mse": r.mse,
        "max_abs_err": r.max_abs_err,
        "sqnr_db": sqnr_json(r.sqnr_db),
        "zero_frac_before": r.zero_frac_before,
        "zero_frac_after": r.zero_frac_after,
    })
}

pub fn histogram_json(h: &LeadingOneHistogram, threshold: usize) -> Value {
    json!({
        "report": "histogram",
        "role": h.role.map(|r| r.name()),
        "group_size": h.group_size,
        "counts": h.counts,
        "zero_groups": h.zero_groups,
        "total_groups": h.total(),
        "threshold": threshold,
        "fraction_above_threshold": h.fraction_above(threshold),
    })
}

pub fn cost_json(m: u64, n: u64, h: u64, g: u64, c: &CostReport) -> Value {
    json!({
        "report": "cost",
        "m": m, "n": n, "h": h, "g": g,
        "hadamard_single_flops": c.hadamard_single_flops,
        "hadamard_heads_flops": c.hadamard_heads_flops,
        "sdr_compression_iops": c.sdr_compression_iops,
        "barrel_shifter_iops": c.barrel_shifter_iops,
        "sdr_per_element_iops": c.sdr_per_element_iops,
        "exact": c.exact,
    })
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Calibrate {
            role,
            granularity,
            axis,
            base_bits,
            out,
            tensors,
        } => {
            let role = parse_role(&role)?;
            let granularity = match granularity {
                GranularityArg::PerTensor => Granularity::PerTensor,
                GranularityArg::PerChannel => Granularity::PerChannel { axis },
            };
            let samples = tensors
                .iter()
                .map(|p| Ok(read_tensor_container(&read(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            let scales = calibrate_absmax(&samples, role, granularity, base_bits)?;
            write(&out, &encode_scales(&scales)?)
        }
        Command::Quantize {
            scales,
            f16_scales,
            input,
            output,
        } => {
            let mut s = decode_scales(&read(&scales)?)?;
            if f16_scales {
                s = s.to_f16_precision()?;
            }
            let x = read_tensor_container(&read(&input)?)?;
            let q = quantize_base(&x, &s)?;
            write(&output, &encode_base(&q, &s)?)
        }
        Command::Compress { sdr, input, output } => {
            let cfg = sdr.config()?;
            let (bt, s) = decode_base(&read(&input)?)?;
            let ct = compress_tensor(&bt, &cfg)?;
            write(&output, &encode_qrz(&ct, &s, s.role())?)
        }
        Command::Decompress {
            float,
            input,
            output,
        } => {
            let (ct, s, _) = decode_qrz(&read(&input)?)?;
            let bt = decompress_tensor(&ct)?;
            if float {
                write(
                    &output,
                    &write_tensor_container(&dequantize_base(&bt, &s)?)?,
                )
            } else {
                write(&output, &encode_base(&bt, &s)?)
            }
        }
        Command::Matmul { lhs, rhs, out } => {
            let (a, sa, _) = decode_qrz(&read(&lhs)?)?;
            let (b, sb, _) = decode_qrz(&read(&rhs)?)?;
            let plan = MatmulPlan::new(a, b, sa, sb)?;
            write(&out, &write_tensor_container(&matmul_compressed(&plan)?)?)
        }
        Command::Stats {
            hist,
            zeros,
            errors,
            sdr,
            scales,
            role,
            dmq_bits,
            threshold,
            input,
        } => stats(
            StatsRequest {
                hist,
                zeros,
                errors,
                dmq_bits,
                threshold,
            },
            &sdr,
            scales.as_deref(),
            &role,
            &input,
        ),
        Command::Cost { m, n, h, g } => {
            if m == 0 || n == 0 || h == 0 || g == 0 {
                return Err(CliError::Usage("M, N, H and G must be positive".into()));
            }
            println!("{}", cost_json(m, n, h, g, &ops_cost(m, n, h, g)));
            Ok(())
        }
        Command::Check { input } => {
            let (ct, s, role) = decode_qrz(&read(&input)?)?;
            decompress_tensor(&ct)?;
            let cfg = ct.config();
            let elems = ct.numel();
            println!(
                "{}",
                json!({
                    "report": "check",
                    "ok": true,
                    "role": role.name(),
                    "shape": ct.shape(),
                    "base_bits": cfg.base_bits(),
                    "target_bits": cfg.target_bits(),
                    "flag_bits": cfg.flag_bits(),
                    "group_size": cfg.group_size(),
                    "groups": ct.groups().len(),
                    "max_flag": ct.max_flag_used(),
                    "scales": s.scales().len(),
                    "payload_bits": payload_bits(&ct),
                    "bits_per_element": if elems == 0 { 0.0 } else { payload_bits(&ct) as f64 / elems as f64 },
                    "effective_bits": effective_bits(
                        cfg.target_bits() as u32,
                        cfg.flag_bits() as u32,
                        cfg.group_size() as u32,
                    ),
                })
            );
            Ok(())
        }
    }
}

struct StatsRequest {
    hist: bool,
    zeros: bool,
    errors: bool,
    dmq_bits: Option<u32>,
    threshold: usize,
}

fn stats(
    req: StatsRequest,
    sdr: &SdrArgs,
    scales: Option<&Path>,
    role: &str,
    input: &Path,
) -> Result<()> {
    let all = !(req.hist || req.zeros || req.errors);
    let cfg = sdr.config()?;
    let role = parse_role(role)?;
    let bytes = read(input)?;

    let (float, base, s): (Option<TensorF>, BaseTensor, ScaleSet) = match sniff_magic(&bytes) {
        Some(m) if m == FTN_MAGIC => {
            let x = read_tensor_container(&bytes)?;
            let s = match scales {
                Some(p) => decode_scales(&read(p)?)?,
                None => calibrate_absmax(
                    std::slice::from_ref(&x),
                    role,
                    Granularity::PerTensor,
                    sdr.base_bits,
                )?,
            };
            let q = quantize_base(&x, &s)?;
            (Some(x), q, s)
        }
        Some(m) if m == BASE_MAGIC => {
            let (bt, s) = decode_base(&bytes)?;
            (None, bt, s)
        }
        _ => {
            return Err(CliError::Usage(format!(
                "{}: stats expects an FTN1 or QBT1 file",
                input.display()
            )))
        }
    };
    if base.base_bits() != cfg.base_bits() {
        return Err(CliError::Usage(format!(
            "input is base {} but --base-bits is {}",
            base.base_bits(),
            cfg.base_bits()
        )));
    }

    if req.hist || all {
        let mut h = leading_one_histogram(&base, cfg.group_size())?;
        h.role = Some(s.role());
        println!("{}", histogram_json(&h, req.threshold));
    }
    if req.zeros || all {
        let after = decompress_tensor(&compress_tensor(&base, &cfg)?)?;
        let frac = |bt: &BaseTensor| {
            if bt.is_empty() {
                0.0
            } else {
                bt.values().iter().filter(|v| v.mag() == 0).count() as f64 / bt.len() as f64
            }
        };
        println!(
            "{}",
            json!({
                "report": "zeros",
                "group_size": cfg.group_size(),
                "zero_frac_before": frac(&base),
                "zero_frac_after": frac(&after),
            })
        );
    }
    if req.errors || all {
        match &float {
            Some(x) => {
                println!(
                    "{}",
                    error_json("sdr", &compression_error_report(x, &s, &cfg)?)
                );
                if let Some(bits) = req.dmq_bits {
                    println!(
                        "{}",
                        error_json("dmq", &dmq_baseline(x, cfg.group_size(), bits)?)
                    );
                    println!(
                        "{}",
                        error_json("per_tensor_absmax", &per_tensor_absmax_baseline(x, bits)?)
                    );
                }
            }
            None if req.errors => {
                return Err(CliError::Usage(
                    "--errors needs the original FTN1 float tensor".into(),
                ))
            }
            None => {}
        }
    }
    Ok(())
}
