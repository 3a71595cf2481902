//! Radix-2 real-input FFT over power-of-two lengths.
//!
//! A real signal of length `L` is packed into a complex signal of length
//! `L/2` (even samples in the real part, odd samples in the imaginary part),
//! transformed with an iterative decimation-in-time FFT, and then split back
//! into the `L/2 + 1` unique bins of the real spectrum. The forward transform
//! is unscaled; the inverse carries the `1/L` factor.
//!
//! Plans (bit-reversal table and twiddles) are built once per length and
//! shared through a process-wide cache.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance on the imaginary part of the DC and Nyquist bins.
pub const REAL_BIN_TOLERANCE: f64 = 1e-9;

/// The `L/2 + 1` non-redundant bins of the DFT of a real signal of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    len: usize,
    bins: Vec<Complex64>,
}

impl HalfSpectrum {
    /// Wraps bins produced elsewhere, checking the real-input symmetry of the
    /// DC and Nyquist bins.
    pub fn new(len: usize, bins: Vec<Complex64>) -> Result<Self> {
        check_len(len)?;
        if bins.len() != len / 2 + 1 {
            return Err(Error::MalformedSpectrum(format!(
                "length {len} needs {} bins, got {}",
                len / 2 + 1,
                bins.len()
            )));
        }
        let s = HalfSpectrum { len, bins };
        s.check_real_bins()?;
        Ok(s)
    }

    pub fn zeros(len: usize) -> Result<Self> {
        check_len(len)?;
        Ok(HalfSpectrum {
            len,
            bins: vec![Complex64::new(0.0, 0.0); len / 2 + 1],
        })
    }

    /// Time-domain length `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub(crate) fn bins_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    /// Rebuilds all `L` bins using `X[L-k] = conj(X[k])`.
    pub fn full_spectrum(&self) -> Vec<Complex64> {
        let n = self.len;
        (0..n)
            .map(|k| {
                if k <= n / 2 {
                    self.bins[k]
                } else {
                    self.bins[n - k].conj()
                }
            })
            .collect()
    }

    /// Whether bin `k` is structurally real (DC or Nyquist).
    pub fn is_real_bin(&self, k: usize) -> bool {
        k == 0 || k == self.len / 2
    }

    fn check_real_bins(&self) -> Result<()> {
        let last = self.len / 2;
        for k in [0, last] {
            let im = self.bins[k].im;
            if !(im.abs() <= REAL_BIN_TOLERANCE) {
                return Err(Error::MalformedSpectrum(format!(
                    "bin {k} must be real, imaginary part is {im:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Cost assigned to one complex multiplication when counting real multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComplexMultCost {
    /// Schoolbook product, four real multiplications.
    #[default]
    Four,
    /// Three-multiplication (Gauss) product.
    Three,
}

impl ComplexMultCost {
    pub fn real_mults(self) -> u64 {
        match self {
            ComplexMultCost::Four => 4,
            ComplexMultCost::Three => 3,
        }
    }
}

/// Call and multiplication counters filled in by the instrumented kernels.
///
/// Owned by the caller; never shared between threads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub forward_ffts: u64,
    pub inverse_ffts: u64,
    /// Real multiplications inside forward and inverse transforms.
    pub fft_mults: u64,
    /// Real multiplications inside frequency-domain products.
    pub spectral_mults: u64,
    /// Block-circulant matrix-vector products.
    pub matvecs: u64,
    /// Point-wise vector multiplications (peepholes, gate products).
    pub pointwise_mults: u64,
    pub mult_cost: ComplexMultCost,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cost(mult_cost: ComplexMultCost) -> Self {
        OpCounter {
            mult_cost,
            ..Self::default()
        }
    }

    /// Real multiplications attributable to block-circulant products.
    pub fn matvec_mults(&self) -> u64 {
        self.fft_mults + self.spectral_mults
    }
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::InvalidLength(len));
    }
    Ok(())
}

/// Real multiplications for one transform of the given length.
///
/// The first two butterfly levels use only the twiddles `±1, ±i`. From level
/// three on, level `j` multiplies in `(L/2)·2^-(j-2)` butterflies. Summing the
/// geometric series gives `L/2 - 2` complex multiplications.
pub fn fft_real_mult_count(len: usize) -> u64 {
    fft_real_mult_count_with(len, ComplexMultCost::Four)
}

pub fn fft_real_mult_count_with(len: usize, cost: ComplexMultCost) -> u64 {
    if len < 4 {
        return 0;
    }
    cost.real_mults() * (len as u64 / 2 - 2)
}

/// Real multiplications for one half-spectrum product of the given length:
/// one per structurally real bin, one complex product per interior bin.
pub fn spectral_product_mult_count(len: usize, cost: ComplexMultCost) -> u64 {
    match len {
        0 => 0,
        1 => 1,
        _ => 2 + cost.real_mults() * (len as u64 / 2 - 1),
    }
}

struct RealFftPlan {
    len: usize,
    /// Complex FFT size, `len / 2` (at least 1).
    half: usize,
    bitrev: Vec<usize>,
    /// `exp(-2πik/half)` for `k < half/2`.
    twiddles: Vec<Complex64>,
    /// `exp(-2πik/len)` for `k <= half`.
    split: Vec<Complex64>,
    /// Multiplying butterflies per level, enumerated level by level.
    level_mults: Vec<u64>,
}

impl RealFftPlan {
    fn new(len: usize) -> Self {
        let half = (len / 2).max(1);
        let bits = half.trailing_zeros();
        let bitrev = (0..half)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..half / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / half as f64))
            .collect();
        let split = (0..=half)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        let levels = len.trailing_zeros() as usize;
        let level_mults = (1..=levels)
            .map(|j| if j <= 2 { 0 } else { (len as u64 / 2) >> (j - 2) })
            .collect();
        RealFftPlan {
            len,
            half,
            bitrev,
            twiddles,
            split,
            level_mults,
        }
    }

    fn count(&self, counter: &mut OpCounter) {
        let complex: u64 = self.level_mults.iter().sum();
        counter.fft_mults += complex * counter.mult_cost.real_mults();
    }

    /// In-place complex FFT of size `half`; `inverse` conjugates the twiddles
    /// and leaves the result unscaled.
    fn complex_fft(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.half;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut span = 1;
        while span < n {
            let stride = n / (2 * span);
            for start in (0..n).step_by(2 * span) {
                for k in 0..span {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + span] * w;
                    data[start + k] = a + b;
                    data[start + k + span] = a - b;
                }
            }
            span *= 2;
        }
    }

    fn forward(&self, x: &[f64]) -> HalfSpectrum {
        if self.len == 1 {
            return HalfSpectrum {
                len: 1,
                bins: vec![Complex64::new(x[0], 0.0)],
            };
        }
        let n = self.half;
        let mut z: Vec<Complex64> = x
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        self.complex_fft(&mut z, false);

        let mut bins = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let zk = z[k % n];
            let zc = z[(n - k) % n].conj();
            let even = (zk + zc) * 0.5;
            let odd = (zk - zc) * Complex64::new(0.0, -0.5);
            bins.push(even + self.split[k] * odd);
        }
        bins[0].im = 0.0;
        bins[n].im = 0.0;
        HalfSpectrum { len: self.len, bins }
    }

    fn inverse(&self, s: &HalfSpectrum) -> Vec<f64> {
        if self.len == 1 {
            return vec![s.bins[0].re];
        }
        let n = self.half;
        let mut z: Vec<Complex64> = (0..n)
            .map(|k| {
                let xk = s.bins[k];
                let xc = s.bins[n - k].conj();
                let even = (xk + xc) * 0.5;
                let odd = (xk - xc) * 0.5 * self.split[k].conj();
                even + Complex64::new(0.0, 1.0) * odd
            })
            .collect();
        self.complex_fft(&mut z, true);
        let scale = 1.0 / n as f64;
        let mut out = Vec::with_capacity(self.len);
        for v in z {
            out.push(v.re * scale);
            out.push(v.im * scale);
        }
        out
    }
}

fn plan(len: usize) -> Result<Arc<RealFftPlan>> {
    check_len(len)?;
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<RealFftPlan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(p) = cache.read().expect("fft plan cache poisoned").get(&len) {
        return Ok(Arc::clone(p));
    }
    let mut w = cache.write().expect("fft plan cache poisoned");
    let p = w
        .entry(len)
        .or_insert_with(|| Arc::new(RealFftPlan::new(len)));
    Ok(Arc::clone(p))
}

/// Forward transform of a real signal. Unscaled.
pub fn rfft(x: &[f64]) -> Result<HalfSpectrum> {
    Ok(plan(x.len())?.forward(x))
}

/// Same as [`rfft`], recording the call and its multiplication count.
pub fn rfft_counted(x: &[f64], counter: &mut OpCounter) -> Result<HalfSpectrum> {
    let p = plan(x.len())?;
    counter.forward_ffts += 1;
    p.count(counter);
    Ok(p.forward(x))
}

/// Inverse transform, scaled by `1/L`.
pub fn irfft(s: &HalfSpectrum) -> Result<Vec<f64>> {
    s.check_real_bins()?;
    Ok(plan(s.len)?.inverse(s))
}

pub fn irfft_counted(s: &HalfSpectrum, counter: &mut OpCounter) -> Result<Vec<f64>> {
    s.check_real_bins()?;
    let p = plan(s.len)?;
    counter.inverse_ffts += 1;
    p.count(counter);
    Ok(p.inverse(s))
}

/// Returns `acc + w ⊙ x` over the retained bins.
pub fn spectral_mac(acc: &HalfSpectrum, w: &HalfSpectrum, x: &HalfSpectrum) -> Result<HalfSpectrum> {
    let mut out = acc.clone();
    spectral_mac_into(&mut out, w, x, None)?;
    Ok(out)
}

/// In-place `acc += w ⊙ x`, optionally tallying real multiplications.
pub fn spectral_mac_into(
    acc: &mut HalfSpectrum,
    w: &HalfSpectrum,
    x: &HalfSpectrum,
    counter: Option<&mut OpCounter>,
) -> Result<()> {
    if acc.len != w.len || w.len != x.len {
        return Err(Error::dim(format!(
            "spectral product lengths {}, {}, {}",
            acc.len, w.len, x.len
        )));
    }
    let last = acc.len / 2;
    let mut mults = 0u64;
    let cost = counter.as_ref().map_or(4, |c| c.mult_cost.real_mults());
    for (k, (a, (wk, xk))) in acc
        .bins
        .iter_mut()
        .zip(w.bins.iter().zip(x.bins.iter()))
        .enumerate()
    {
        if k == 0 || k == last {
            a.re += wk.re * xk.re;
            mults += 1;
        } else {
            *a += wk * xk;
            mults += cost;
        }
    }
    if let Some(c) = counter {
        c.spectral_mults += mults;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    acc + Complex64::from_polar(v, -2.0 * PI * (k * t) as f64 / n as f64)
                })
            })
            .collect()
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn constant_input_is_dc_only() {
        let s = rfft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let expect = [4.0, 0.0, 0.0];
        for (b, e) in s.bins().iter().zip(expect) {
            assert!(close(*b, Complex64::new(e, 0.0), 1e-15));
        }
    }

    #[test]
    fn impulse_is_flat() {
        let s = rfft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.bins().len(), 3);
        for b in s.bins() {
            assert!(close(*b, Complex64::new(1.0, 0.0), 1e-15));
        }
    }

    #[test]
    fn ramp_matches_direct_dft() {
        let s = rfft(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expect = [
            Complex64::new(10.0, 0.0),
            Complex64::new(-2.0, 2.0),
            Complex64::new(-2.0, 0.0),
        ];
        let oracle = naive_dft(&[1.0, 2.0, 3.0, 4.0]);
        for k in 0..3 {
            assert!(close(s.bins()[k], expect[k], 1e-12));
            assert!(close(oracle[k], expect[k], 1e-12));
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(matches!(rfft(&[]), Err(Error::InvalidLength(0))));
        assert!(matches!(rfft(&[1.0, 2.0, 3.0]), Err(Error::InvalidLength(3))));
        assert!(matches!(rfft(&[0.0; 12]), Err(Error::InvalidLength(12))));
    }

    #[test]
    fn inverse_of_dc_only() {
        let s = HalfSpectrum::new(4, vec![Complex64::new(4.0, 0.0), Complex64::default(), Complex64::default()])
            .unwrap();
        let x = irfft(&s).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let back = irfft(&rfft(&[1.0; 4]).unwrap()).unwrap();
        assert_eq!(back.len(), 4);
        assert!(back.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn irfft_rejects_complex_dc() {
        let s = HalfSpectrum {
            len: 4,
            bins: vec![Complex64::new(1.0, 1e-6), Complex64::default(), Complex64::default()],
        };
        assert!(matches!(irfft(&s), Err(Error::MalformedSpectrum(_))));
        let s = HalfSpectrum {
            len: 4,
            bins: vec![Complex64::default(), Complex64::default(), Complex64::new(0.0, 0.5)],
        };
        assert!(matches!(irfft(&s), Err(Error::MalformedSpectrum(_))));
        assert!(HalfSpectrum::new(4, vec![Complex64::new(1.0, 1.0), Complex64::default(), Complex64::default()])
            .is_err());
    }

    #[test]
    fn length_one_and_two() {
        let s = rfft(&[3.5]).unwrap();
        assert_eq!(s.bins(), &[Complex64::new(3.5, 0.0)]);
        assert_eq!(irfft(&s).unwrap(), vec![3.5]);
        let s = rfft(&[1.0, 2.0]).unwrap();
        assert!(close(s.bins()[0], Complex64::new(3.0, 0.0), 1e-15));
        assert!(close(s.bins()[1], Complex64::new(-1.0, 0.0), 1e-15));
        let x = irfft(&s).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mac_with_flat_spectrum_copies_input() {
        let x = rfft(&[0.3, -1.0, 2.5, 4.0, 0.0, 1.0, -2.0, 0.5]).unwrap();
        let flat = rfft(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let acc = HalfSpectrum::zeros(8).unwrap();
        let out = spectral_mac(&acc, &flat, &x).unwrap();
        for (a, b) in out.bins().iter().zip(x.bins()) {
            assert!(close(*a, *b, 1e-14));
        }
        let zero = HalfSpectrum::zeros(8).unwrap();
        let out = spectral_mac(&acc, &x, &zero).unwrap();
        assert!(out.bins().iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn mac_rejects_length_mismatch() {
        let a = HalfSpectrum::zeros(8).unwrap();
        let b = HalfSpectrum::zeros(4).unwrap();
        assert!(matches!(spectral_mac(&a, &a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn mac_matches_full_spectrum_product() {
        let w = rfft(&[0.1, 0.7, -0.2, 0.9, 1.1, -0.4, 0.0, 0.3]).unwrap();
        let x = rfft(&[-1.0, 0.5, 0.25, 2.0, -0.75, 0.6, 1.5, -0.1]).unwrap();
        let acc = rfft(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = spectral_mac(&acc, &w, &x).unwrap();
        let (fa, fw, fx) = (acc.full_spectrum(), w.full_spectrum(), x.full_spectrum());
        for k in 0..=4 {
            assert!(close(out.bins()[k], fa[k] + fw[k] * fx[k], 1e-12));
        }
    }

    #[test]
    fn mult_count_examples() {
        assert_eq!(fft_real_mult_count(4), 0);
        assert_eq!(fft_real_mult_count(8), 8);
        assert_eq!(fft_real_mult_count(32), 56);
        assert_eq!(fft_real_mult_count(2), 0);
        assert_eq!(fft_real_mult_count_with(8, ComplexMultCost::Three), 6);
    }

    #[test]
    fn mult_count_matches_level_enumeration() {
        for log in 2..=12 {
            let len = 1usize << log;
            let mut levels = 0u64;
            for j in 3..=log {
                // half of the butterflies at level 3, a quarter at level 4, ...
                levels += (len as u64 / 2) >> (j - 2);
            }
            assert_eq!(fft_real_mult_count(len), 4 * levels, "len {len}");
            let mut c = OpCounter::new();
            rfft_counted(&vec![0.0; len], &mut c).unwrap();
            assert_eq!(c.fft_mults, 4 * levels);
        }
    }

    #[test]
    fn spectral_product_count() {
        assert_eq!(spectral_product_mult_count(1, ComplexMultCost::Four), 1);
        assert_eq!(spectral_product_mult_count(2, ComplexMultCost::Four), 2);
        assert_eq!(spectral_product_mult_count(8, ComplexMultCost::Four), 14);
        let mut c = OpCounter::new();
        let mut acc = HalfSpectrum::zeros(8).unwrap();
        let z = HalfSpectrum::zeros(8).unwrap();
        spectral_mac_into(&mut acc, &z, &z, Some(&mut c)).unwrap();
        assert_eq!(c.spectral_mults, 14);
    }

    #[test]
    fn cache_is_shared_across_threads() {
        let handles: Vec<_> = (0..8)
            .map(|t| {
                std::thread::spawn(move || {
                    let x: Vec<f64> = (0..64).map(|i| ((i * (t + 1)) % 7) as f64).collect();
                    let back = irfft(&rfft(&x).unwrap()).unwrap();
                    x.iter().zip(back).all(|(a, b)| (a - b).abs() < 1e-12)
                })
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap());
        }
    }
}
