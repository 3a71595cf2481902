//! Fixed-point quantization and quantized inference.
//!
//! Codes are signed `total_bits` integers; a code `c` stands for
//! `c · 2^(−frac_bits) · scale`. Weights are quantized in the frequency
//! domain (one format per matrix, shared by real and imaginary parts),
//! input spectra get a calibrated format per matrix, and every vector
//! written to state memory is re-quantized with a model-wide activation
//! format.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, HalfSpectrum};
use crate::rnn::{sigmoid, CellKernel, CirculantLinear, Network};

pub const DEFAULT_TOTAL_BITS: u32 = 12;
pub const DEFAULT_PWL_SEGMENTS: usize = 64;
/// Saturation share above which a report carries a warning.
pub const SATURATION_WARNING_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
    /// Static scale factor; a power of two.
    pub scale: f64,
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        FixedPointFormat {
            total_bits: DEFAULT_TOTAL_BITS,
            frac_bits: DEFAULT_TOTAL_BITS - 1,
            scale: 1.0,
        }
    }
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, frac_bits: u32, scale: f64) -> Result<Self> {
        let f = FixedPointFormat {
            total_bits,
            frac_bits,
            scale,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.total_bits) {
            return Err(Error::Config(format!("total_bits {} outside 2..=32", self.total_bits)));
        }
        if self.frac_bits >= self.total_bits {
            return Err(Error::Config(format!(
                "frac_bits {} must be below total_bits {}",
                self.frac_bits, self.total_bits
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Value of one code step.
    pub fn ulp(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2() * self.scale
    }

    /// Rounds half to even and saturates; the flag reports saturation.
    pub fn encode(&self, v: f64) -> (i64, bool) {
        let r = (v / self.ulp()).round_ties_even();
        if r > self.max_code() as f64 {
            (self.max_code(), true)
        } else if r < self.min_code() as f64 {
            (self.min_code(), true)
        } else {
            (r as i64, false)
        }
    }

    pub fn decode(&self, code: i64) -> f64 {
        code as f64 * self.ulp()
    }

    /// `decode(encode(v))`.
    pub fn round_trip(&self, v: f64) -> (f64, bool) {
        let (c, sat) = self.encode(v);
        (self.decode(c), sat)
    }
}

/// Chooses the format that holds every value without saturation at the
/// finest resolution: the largest `frac_bits` that fits, and a power-of-two
/// scale above one only when even `frac_bits = 0` would saturate.
pub fn analyze_range(values: &[f64], total_bits: u32) -> Result<FixedPointFormat> {
    FixedPointFormat::new(total_bits, 0, 1.0)?;
    if values.is_empty() {
        return Err(Error::Config("cannot analyze an empty range".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in range analysis".into()));
    }
    let hi = values.iter().cloned().fold(0.0f64, f64::max);
    let lo = values.iter().cloned().fold(0.0f64, f64::min);
    let fits = |f: &FixedPointFormat| !f.encode(hi).1 && !f.encode(lo).1;
    for frac in (0..total_bits).rev() {
        let f = FixedPointFormat {
            total_bits,
            frac_bits: frac,
            scale: 1.0,
        };
        if fits(&f) {
            return Ok(f);
        }
    }
    let mut scale = 2.0;
    loop {
        let f = FixedPointFormat {
            total_bits,
            frac_bits: 0,
            scale,
        };
        if fits(&f) {
            return Ok(f);
        }
        scale *= 2.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub format: FixedPointFormat,
    pub codes: Vec<i64>,
    pub shape: Vec<usize>,
    /// Number of values clamped to the range ends.
    pub saturated: usize,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| self.format.decode(c)).collect()
    }
}

pub fn quantize(values: &[f64], format: FixedPointFormat) -> Result<QuantizedTensor> {
    format.validate()?;
    let mut saturated = 0;
    let codes = values
        .iter()
        .map(|&v| {
            let (c, sat) = format.encode(v);
            saturated += sat as usize;
            c
        })
        .collect();
    Ok(QuantizedTensor {
        format,
        codes,
        shape: vec![values.len()],
        saturated,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Vec<f64> {
    q.dequantize()
}

/// Monotone piecewise-linear approximation on `[lo, hi]` with constant
/// saturation outside.
///
/// Knots are uniform on each side of zero and zero is always a knot. Interior
/// knot values are shifted by a quarter of the summed chord deviations of the
/// two adjacent segments, which roughly halves the worst-case error of plain
/// interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pwl {
    xs: Vec<f64>,
    ys: Vec<f64>,
    floor: f64,
    ceil: f64,
}

impl Pwl {
    fn build(f: fn(f64) -> f64, lo: f64, hi: f64, floor: f64, ceil: f64, segments: usize) -> Result<Self> {
        if segments < 2 {
            return Err(Error::Config(format!("piecewise-linear activation needs >= 2 segments, got {segments}")));
        }
        let left = segments / 2;
        let right = segments - left;
        let mut xs: Vec<f64> = (0..left).map(|k| lo + (-lo) * k as f64 / left as f64).collect();
        xs.extend((0..=right).map(|k| hi * k as f64 / right as f64));
        let base: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        // signed deviation of f from each chord, at its largest magnitude
        let dev: Vec<f64> = (0..segments)
            .map(|s| {
                let (x0, x1, y0, y1) = (xs[s], xs[s + 1], base[s], base[s + 1]);
                (1..64)
                    .map(|i| {
                        let t = i as f64 / 64.0;
                        f(x0 + t * (x1 - x0)) - (y0 + t * (y1 - y0))
                    })
                    .fold(0.0f64, |a, e| if e.abs() > a.abs() { e } else { a })
            })
            .collect();
        let mut ys = base.clone();
        for k in 1..segments {
            ys[k] += (dev[k - 1] + dev[k]) / 4.0;
        }
        ys[0] = floor;
        ys[segments] = ceil;
        ys[left] = f(0.0);
        for k in 1..=segments {
            ys[k] = ys[k].max(ys[k - 1]).min(ceil);
        }
        Ok(Pwl { xs, ys, floor, ceil })
    }

    pub fn sigmoid(segments: usize) -> Result<Self> {
        Self::build(sigmoid, -8.0, 8.0, 0.0, 1.0, segments)
    }

    pub fn tanh(segments: usize) -> Result<Self> {
        Self::build(f64::tanh, -4.0, 4.0, -1.0, 1.0, segments)
    }

    pub fn segments(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x.is_nan() {
            return x;
        }
        if x <= self.xs[0] {
            return self.floor;
        }
        if x >= self.xs[n - 1] {
            return self.ceil;
        }
        let k = self.xs.partition_point(|&k| k <= x) - 1;
        let (x0, x1, y0, y1) = (self.xs[k], self.xs[k + 1], self.ys[k], self.ys[k + 1]);
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }
}

pub fn pwl_sigmoid(x: f64, segments: usize) -> Result<f64> {
    Ok(Pwl::sigmoid(segments)?.eval(x))
}

pub fn pwl_tanh(x: f64, segments: usize) -> Result<f64> {
    Ok(Pwl::tanh(segments)?.eval(x))
}

/// How activations are evaluated during quantized inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivationMode {
    Exact,
    Pwl { segments: usize },
}

impl Default for ActivationMode {
    fn default() -> Self {
        ActivationMode::Pwl {
            segments: DEFAULT_PWL_SEGMENTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    pub total_bits: u32,
    pub activation: ActivationMode,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            total_bits: DEFAULT_TOTAL_BITS,
            activation: ActivationMode::default(),
        }
    }
}

/// Quantized spectra of one block-circulant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantMatrix {
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
    pub weight_format: FixedPointFormat,
    pub input_format: FixedPointFormat,
    /// Per block in row-major block order, `block/2 + 1` real codes then the
    /// same number of imaginary codes.
    pub codes: Vec<i64>,
}

impl QuantMatrix {
    fn bins(&self) -> usize {
        self.block / 2 + 1
    }

    fn block_codes(&self, i: usize, j: usize) -> (&[i64], &[i64]) {
        let b = self.bins();
        let start = (i * (self.cols / self.block) + j) * 2 * b;
        (&self.codes[start..start + b], &self.codes[start + b..start + 2 * b])
    }
}

/// Running saturation tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaturationStats {
    pub saturated: u64,
    pub total: u64,
}

impl SaturationStats {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.saturated as f64 / self.total as f64
        }
    }
}

/// A network paired with quantized spectra and activation formats.
#[derive(Debug, Clone)]
pub struct QuantizedNetwork {
    network: Network,
    config: QuantConfig,
    activation_format: FixedPointFormat,
    matrices: Vec<QuantMatrix>,
    /// Weight codes that saturated while quantizing.
    weight_saturation: SaturationStats,
    sigmoid: Option<Pwl>,
    tanh: Option<Pwl>,
}

/// Records the ranges seen during a float run.
struct Calibration {
    states: Vec<f64>,
    spectra: Vec<Vec<f64>>,
}

impl CellKernel for Calibration {
    fn matvec(&mut self, m: &CirculantLinear, x: &[f64]) -> Result<Vec<f64>> {
        let l = m.matrix().block_size();
        let slot = &mut self.spectra[m.index()];
        for xj in x.chunks_exact(l) {
            for b in fft::rfft(xj)?.bins() {
                slot.push(b.re);
                slot.push(b.im);
            }
        }
        m.spectra().apply(x)
    }
    fn sigmoid(&self, x: f64) -> f64 {
        sigmoid(x)
    }
    fn tanh(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn store(&mut self, v: &mut [f64]) {
        self.states.extend_from_slice(v);
    }
}

fn range_extremes(v: &[f64]) -> [f64; 2] {
    let hi = v.iter().cloned().fold(0.0f64, f64::max);
    let lo = v.iter().cloned().fold(0.0f64, f64::min);
    [lo, hi]
}

impl QuantizedNetwork {
    /// Derives all formats from the weights and a float run over the
    /// calibration sequences.
    pub fn calibrate(network: &Network, calibration: &[Vec<Vec<f64>>], config: QuantConfig) -> Result<Self> {
        if calibration.is_empty() {
            return Err(Error::Config("calibration set is empty".into()));
        }
        let linears = network.linears();
        let mut cal = Calibration {
            states: Vec::new(),
            spectra: vec![Vec::new(); linears.len()],
        };
        for xs in calibration {
            network.forward_with(&mut cal, xs)?;
            // keep only the extremes to bound memory
            cal.states = range_extremes(&cal.states).to_vec();
            for s in &mut cal.spectra {
                *s = range_extremes(s).to_vec();
            }
        }
        let activation_format = analyze_range(&cal.states, config.total_bits)?;
        let mut matrices = Vec::with_capacity(linears.len());
        let mut weight_saturation = SaturationStats::default();
        for (lin, seen) in linears.iter().zip(&cal.spectra) {
            let mut values = Vec::new();
            for s in lin.spectra().spectra() {
                let bins = s.bins();
                values.extend(bins.iter().map(|b| b.re));
                values.extend(bins.iter().map(|b| b.im));
            }
            let weight_format = analyze_range(&values, config.total_bits)?;
            let input_format = if seen.is_empty() {
                FixedPointFormat {
                    total_bits: config.total_bits,
                    frac_bits: config.total_bits - 1,
                    scale: 1.0,
                }
            } else {
                analyze_range(seen, config.total_bits)?
            };
            let q = quantize(&values, weight_format)?;
            weight_saturation.saturated += q.saturated as u64;
            weight_saturation.total += values.len() as u64;
            matrices.push(QuantMatrix {
                rows: lin.rows(),
                cols: lin.cols(),
                block: lin.matrix().block_size(),
                weight_format,
                input_format,
                codes: q.codes,
            });
        }
        let mut q = Self::from_parts(network.clone(), config, activation_format, matrices)?;
        q.weight_saturation = weight_saturation;
        Ok(q)
    }

    /// Reassembles a quantized network from stored formats and codes.
    pub fn from_parts(
        network: Network,
        config: QuantConfig,
        activation_format: FixedPointFormat,
        matrices: Vec<QuantMatrix>,
    ) -> Result<Self> {
        activation_format.validate()?;
        let linears = network.linears();
        if linears.len() != matrices.len() {
            return Err(Error::dim(format!(
                "network has {} matrices, quantization section has {}",
                linears.len(),
                matrices.len()
            )));
        }
        for (lin, q) in linears.iter().zip(&matrices) {
            q.weight_format.validate()?;
            q.input_format.validate()?;
            let expect = (q.rows / q.block) * (q.cols / q.block) * 2 * q.bins();
            if (q.rows, q.cols, q.block) != (lin.rows(), lin.cols(), lin.matrix().block_size()) || q.codes.len() != expect {
                return Err(Error::dim("quantized matrix does not match network shape"));
            }
            let (lo, hi) = (q.weight_format.min_code(), q.weight_format.max_code());
            if q.codes.iter().any(|c| *c < lo || *c > hi) {
                return Err(Error::Corrupt("weight code outside its format range".into()));
            }
        }
        let (sigmoid, tanh) = match config.activation {
            ActivationMode::Exact => (None, None),
            ActivationMode::Pwl { segments } => (Some(Pwl::sigmoid(segments)?), Some(Pwl::tanh(segments)?)),
        };
        let weight_saturation = SaturationStats {
            saturated: 0,
            total: matrices.iter().map(|m| m.codes.len() as u64).sum(),
        };
        Ok(QuantizedNetwork {
            network,
            config,
            activation_format,
            matrices,
            weight_saturation,
            sigmoid,
            tanh,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> QuantConfig {
        self.config
    }

    pub fn activation_format(&self) -> FixedPointFormat {
        self.activation_format
    }

    pub fn matrices(&self) -> &[QuantMatrix] {
        &self.matrices
    }

    pub fn weight_saturation(&self) -> SaturationStats {
        self.weight_saturation
    }

    /// Quantized forward pass; also returns the saturation tally of the run.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, SaturationStats)> {
        let mut k = QuantKernel {
            q: self,
            stats: SaturationStats::default(),
        };
        let out = self.network.forward_with(&mut k, xs)?;
        Ok((out, k.stats))
    }
}

struct QuantKernel<'a> {
    q: &'a QuantizedNetwork,
    stats: SaturationStats,
}

impl QuantKernel<'_> {
    fn encode(&mut self, f: &FixedPointFormat, v: f64) -> i64 {
        let (c, sat) = f.encode(v);
        self.stats.total += 1;
        self.stats.saturated += sat as u64;
        c
    }
}

impl CellKernel for QuantKernel<'_> {
    fn matvec(&mut self, m: &CirculantLinear, x: &[f64]) -> Result<Vec<f64>> {
        let q = &self.q.matrices[m.index()];
        if x.len() != q.cols {
            return Err(Error::dim(format!("{}x{} matrix applied to length {}", q.rows, q.cols, x.len())));
        }
        let l = q.block;
        let nb = q.bins();
        let xf = q.input_format;
        let mut inputs: Vec<(Vec<i64>, Vec<i64>)> = Vec::with_capacity(q.cols / l);
        for xj in x.chunks_exact(l) {
            let s = fft::rfft(xj)?;
            let re = s.bins().iter().map(|b| self.encode(&xf, b.re)).collect();
            let im = s.bins().iter().map(|b| self.encode(&xf, b.im)).collect();
            inputs.push((re, im));
        }
        let unit = q.weight_format.ulp() * xf.ulp();
        // double-width saturating accumulators
        let acc_max = (1i128 << (2 * q.weight_format.total_bits.max(xf.total_bits) - 1)) - 1;
        let acc_min = -acc_max - 1;
        let mut out = Vec::with_capacity(q.rows);
        for i in 0..q.rows / l {
            let mut acc_re = vec![0i128; nb];
            let mut acc_im = vec![0i128; nb];
            let mut sat = vec![false; 2 * nb];
            for (j, (xr, xi)) in inputs.iter().enumerate() {
                let (wr, wi) = q.block_codes(i, j);
                for b in 0..nb {
                    let (a, c) = (wr[b] as i128, wi[b] as i128);
                    let (x_r, x_i) = (xr[b] as i128, xi[b] as i128);
                    let re = acc_re[b] + a * x_r - c * x_i;
                    let im = acc_im[b] + a * x_i + c * x_r;
                    acc_re[b] = re.clamp(acc_min, acc_max);
                    acc_im[b] = im.clamp(acc_min, acc_max);
                    sat[b] |= acc_re[b] != re;
                    sat[nb + b] |= acc_im[b] != im;
                }
            }
            self.stats.total += sat.len() as u64;
            self.stats.saturated += sat.iter().filter(|s| **s).count() as u64;
            let mut spec = HalfSpectrum::zeros(l)?;
            for (b, slot) in spec.bins_mut().iter_mut().enumerate() {
                let real_bin = b == 0 || 2 * b == l;
                let im = if real_bin { 0.0 } else { acc_im[b] as f64 * unit };
                *slot = Complex64::new(acc_re[b] as f64 * unit, im);
            }
            out.extend(fft::irfft(&spec)?);
        }
        Ok(out)
    }

    fn sigmoid(&self, x: f64) -> f64 {
        match &self.q.sigmoid {
            Some(p) => p.eval(x),
            None => sigmoid(x),
        }
    }

    fn tanh(&self, x: f64) -> f64 {
        match &self.q.tanh {
            Some(p) => p.eval(x),
            None => x.tanh(),
        }
    }

    fn store(&mut self, v: &mut [f64]) {
        let f = self.q.activation_format;
        for x in v.iter_mut() {
            let c = self.encode(&f, *x);
            *x = f.decode(c);
        }
    }
}

/// Deviation of quantized outputs from the double-precision pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub total_bits: u32,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub values: usize,
    pub saturation: SaturationStats,
}

impl DeviationReport {
    pub fn saturation_warning(&self) -> bool {
        self.saturation.rate() > SATURATION_WARNING_RATE
    }

    /// `key=value` lines after a schema header.
    pub fn render(&self) -> String {
        let mut s = String::from("#schema deviation-report key=value\n");
        let _ = writeln!(s, "total_bits={}", self.total_bits);
        let _ = writeln!(s, "max_abs_deviation={:.6e}", self.max_abs);
        let _ = writeln!(s, "mean_abs_deviation={:.6e}", self.mean_abs);
        let _ = writeln!(s, "values={}", self.values);
        let _ = writeln!(s, "saturated={}", self.saturation.saturated);
        let _ = writeln!(s, "quantized={}", self.saturation.total);
        let _ = writeln!(s, "saturation_rate={:.6e}", self.saturation.rate());
        if self.saturation_warning() {
            let _ = writeln!(s, "warning=saturation rate above {SATURATION_WARNING_RATE}");
        }
        s
    }
}

/// Runs quantized and float inference on every sequence and compares them.
pub fn quantized_inference(
    q: &QuantizedNetwork,
    inputs: &[Vec<Vec<f64>>],
) -> Result<(Vec<Vec<Vec<f64>>>, DeviationReport)> {
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    let mut values = 0usize;
    let mut saturation = q.weight_saturation;
    for xs in inputs {
        let reference = q.network.forward(xs)?;
        let (out, stats) = q.forward(xs)?;
        saturation.saturated += stats.saturated;
        saturation.total += stats.total;
        for (a, b) in out.iter().flatten().zip(reference.iter().flatten()) {
            let d = (a - b).abs();
            max_abs = max_abs.max(d);
            sum += d;
            values += 1;
        }
        outputs.push(out);
    }
    let report = DeviationReport {
        total_bits: q.config.total_bits,
        max_abs,
        mean_abs: if values > 0 { sum / values as f64 } else { 0.0 },
        values,
        saturation,
    };
    Ok((outputs, report))
}
