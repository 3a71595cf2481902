//! Analytical multiplication and storage model, PE-count estimate and the
//! three-step block-size explorer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{CellKind, LayerSpec};
use crate::error::{Error, Result};
use crate::fft::{fft_real_mult_count_with, spectral_product_mult_count, ComplexMultCost};

/// Largest block size considered when searching for a storage fit.
pub const MAX_BLOCK_SIZE: usize = 1024;
pub const DEFAULT_RESERVE_FRACTION: f64 = 0.125;
pub const DEFAULT_UPPER_BOUND: usize = 64;
/// Oracle budget of the explorer.
pub const MAX_ORACLE_CALLS: usize = 6;

fn check_partition(rows: usize, cols: usize, block: usize) -> Result<()> {
    if block == 0 || !block.is_power_of_two() || rows % block != 0 || cols % block != 0 {
        return Err(Error::Partition { rows, cols, block });
    }
    Ok(())
}

/// Real multiplications of one decoupled `rows × cols` product:
/// `q` forward transforms, `p·q` spectral products and `p` inverse transforms.
pub fn layer_mult_count(rows: usize, cols: usize, block: usize) -> Result<u64> {
    layer_mult_count_with(rows, cols, block, ComplexMultCost::Four)
}

pub fn layer_mult_count_with(rows: usize, cols: usize, block: usize, cost: ComplexMultCost) -> Result<u64> {
    check_partition(rows, cols, block)?;
    let p = (rows / block) as u64;
    let q = (cols / block) as u64;
    let t = fft_real_mult_count_with(block, cost);
    Ok(q * t + p * q * spectral_product_mult_count(block, cost) + p * t)
}

/// Matrix multiplications per time step over every weight matrix.
pub fn model_mult_count(spec: &LayerSpec) -> Result<u64> {
    spec.validate()?;
    spec.matrices()
        .iter()
        .map(|m| layer_mult_count(m.rows, m.cols, m.block))
        .sum()
}

/// Multiplications relative to the same model with dense matrices.
pub fn normalized_mult_ratio(spec: &LayerSpec) -> Result<f64> {
    let dense: u64 = spec.matrices().iter().map(|m| (m.rows * m.cols) as u64).sum();
    Ok(model_mult_count(spec)? as f64 / dense as f64)
}

/// `(L_b, ratio)` for a single `rows × cols` matrix; block sizes that do not
/// divide the matrix are skipped.
pub fn mult_curve(rows: usize, cols: usize, blocks: &[usize]) -> Vec<(usize, f64)> {
    let dense = (rows * cols) as f64;
    blocks
        .iter()
        .filter_map(|&b| layer_mult_count(rows, cols, b).ok().map(|c| (b, c as f64 / dense)))
        .collect()
}

/// `(L_b, ratio)` for a whole model with a single block size everywhere.
pub fn model_mult_curve(spec: &LayerSpec, blocks: &[usize]) -> Vec<(usize, f64)> {
    blocks
        .iter()
        .filter_map(|&b| normalized_mult_ratio(&spec.with_block_size(b)).ok().map(|r| (b, r)))
        .collect()
}

/// Powers of two from 1 up to `max`.
pub fn power_of_two_blocks(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |b| Some(b * 2))
        .take_while(|b| *b <= max)
        .collect()
}

pub fn bits_to_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Storage of one compressed matrix.
pub fn matrix_storage_bytes(rows: usize, cols: usize, block: usize, bits: u32) -> Result<u64> {
    check_partition(rows, cols, block)?;
    Ok(bits_to_bytes((rows * cols / block) as u64 * bits as u64))
}

/// Compressed matrices plus uncompressed biases and peephole diagonals.
pub fn model_storage_bytes(spec: &LayerSpec, bits: u32) -> u64 {
    bits_to_bytes(spec.param_count() * bits as u64)
}

/// Smallest power-of-two block size whose storage fits
/// `(1 − reserve_fraction) · capacity`.
pub fn min_block_size_for_capacity(spec: &LayerSpec, bits: u32, capacity: u64, reserve_fraction: f64) -> Result<usize> {
    if capacity == 0 {
        return Err(Error::Config("capacity must be positive".into()));
    }
    if !(0.0..1.0).contains(&reserve_fraction) {
        return Err(Error::Config(format!("reserve fraction {reserve_fraction} outside [0, 1)")));
    }
    let budget = (1.0 - reserve_fraction) * capacity as f64;
    let mut last_err = None;
    for b in power_of_two_blocks(MAX_BLOCK_SIZE) {
        let s = spec.with_block_size(b);
        match s.validate() {
            Ok(()) => {
                if model_storage_bytes(&s, bits) as f64 <= budget {
                    return Ok(b);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Infeasible(match last_err {
        Some(e) => format!("no block size up to {MAX_BLOCK_SIZE} fits {capacity} bytes ({e})"),
        None => format!("no block size up to {MAX_BLOCK_SIZE} fits {capacity} bytes"),
    }))
}

/// `min(⌊dsp/dsp_per_pe⌋, ⌊lut/lut_per_pe⌋)`.
pub fn pe_count(dsp_total: u64, lut_total: u64, dsp_per_pe: u64, lut_per_pe: u64) -> Result<u64> {
    if dsp_per_pe == 0 || lut_per_pe == 0 {
        return Err(Error::Config("per-PE resource costs must be positive".into()));
    }
    Ok((dsp_total / dsp_per_pe).min(lut_total / lut_per_pe))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeBudget {
    pub dsp_total: u64,
    pub lut_total: u64,
    pub dsp_per_pe: u64,
    pub lut_per_pe: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub spec: LayerSpec,
    pub mults_per_step: u64,
    pub dense_mults_per_step: u64,
    pub normalized_ratio: f64,
    pub param_count: u64,
    pub dense_param_count: u64,
    pub bits: u32,
    pub storage_bytes: u64,
    pub capacity_bytes: Option<u64>,
    pub reserve_fraction: f64,
    pub fits: Option<bool>,
    pub pe_count: Option<u64>,
}

impl CostReport {
    pub fn new(
        spec: &LayerSpec,
        bits: u32,
        capacity: Option<u64>,
        reserve_fraction: f64,
        pe: Option<PeBudget>,
    ) -> Result<Self> {
        let mults = model_mult_count(spec)?;
        let dense: u64 = spec.matrices().iter().map(|m| (m.rows * m.cols) as u64).sum();
        let storage = model_storage_bytes(spec, bits);
        let fits = capacity.map(|c| storage as f64 <= (1.0 - reserve_fraction) * c as f64);
        let pe_count = pe
            .map(|p| pe_count(p.dsp_total, p.lut_total, p.dsp_per_pe, p.lut_per_pe))
            .transpose()?;
        Ok(CostReport {
            spec: spec.clone(),
            mults_per_step: mults,
            dense_mults_per_step: dense,
            normalized_ratio: mults as f64 / dense as f64,
            param_count: spec.param_count(),
            dense_param_count: spec.dense_param_count(),
            bits,
            storage_bytes: storage,
            capacity_bytes: capacity,
            reserve_fraction,
            fits,
            pe_count,
        })
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        let blocks: Vec<String> = self.spec.distinct_block_sizes().iter().map(|b| b.to_string()).collect();
        let mut rows = vec![
            ("cell", self.spec.cell.name().to_string()),
            ("block_sizes", blocks.join(",")),
            ("mults_per_step", self.mults_per_step.to_string()),
            ("dense_mults_per_step", self.dense_mults_per_step.to_string()),
            ("normalized_ratio", format!("{:.6}", self.normalized_ratio)),
            ("param_count", self.param_count.to_string()),
            ("dense_param_count", self.dense_param_count.to_string()),
            ("bits", self.bits.to_string()),
            ("storage_bytes", self.storage_bytes.to_string()),
        ];
        if let Some(c) = self.capacity_bytes {
            rows.push(("capacity_bytes", c.to_string()));
            rows.push(("reserve_fraction", format!("{}", self.reserve_fraction)));
        }
        if let Some(f) = self.fits {
            rows.push(("fits", f.to_string()));
        }
        if let Some(p) = self.pe_count {
            rows.push(("pe_count", p.to_string()));
        }
        rows
    }

    /// Aligned two-column text.
    pub fn render_text(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<width$}  {v}");
        }
        s
    }

    /// `key=value` lines after a schema header.
    pub fn render_structured(&self) -> String {
        let mut s = String::from("#schema cost-report key=value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// `(L_b, ratio)` pairs with a schema header, one per line.
pub fn render_curve(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("#schema block_size\tnormalized_ratio\n");
    for (b, r) in curve {
        let _ = writeln!(s, "{b}\t{r:.6}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    pub capacity_bytes: u64,
    pub bits: u32,
    pub reserve_fraction: f64,
    /// Largest block size tried in step two (32 or 64).
    pub upper_bound: usize,
    /// Largest accepted metric increase over the baseline.
    pub tolerance: f64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            capacity_bytes: 4 << 20,
            bits: 12,
            reserve_fraction: DEFAULT_RESERVE_FRACTION,
            upper_bound: DEFAULT_UPPER_BOUND,
            tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExploreStep {
    Baseline,
    BlockSearch,
    CellSwitch,
    IoBlock,
}

impl ExploreStep {
    pub fn name(self) -> &'static str {
        match self {
            ExploreStep::Baseline => "baseline",
            ExploreStep::BlockSearch => "block-search",
            ExploreStep::CellSwitch => "cell-switch",
            ExploreStep::IoBlock => "io-block",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCall {
    pub step: ExploreStep,
    pub spec: LayerSpec,
    /// Oracle metric; lower is better.
    pub metric: f64,
    pub degradation: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationResult {
    pub spec: LayerSpec,
    pub lower_bound: usize,
    pub upper_bound: usize,
    pub baseline_metric: f64,
    pub calls: Vec<OracleCall>,
    /// No block size in range met the tolerance; `spec` is the lower bound.
    pub constraint_violated: bool,
    /// Human-readable decisions, one per line.
    pub log: Vec<String>,
}

impl ExplorationResult {
    pub fn oracle_calls(&self) -> usize {
        self.calls.len()
    }

    pub fn render_log(&self) -> String {
        let mut s = String::from("#schema step\tcell\tblock\tio_block\tmetric\tdegradation\taccepted\n");
        for c in &self.calls {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
                c.step.name(),
                c.spec.cell.name(),
                c.spec.block_size,
                c.spec.io_block(),
                c.metric,
                c.degradation,
                c.accepted
            );
        }
        for line in &self.log {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(
            s,
            "# chosen cell={} block={} io_block={} oracle_calls={} constraint_violated={}",
            self.spec.cell.name(),
            self.spec.block_size,
            self.spec.io_block(),
            self.calls.len(),
            self.constraint_violated
        );
        s
    }
}

struct Explorer<'a, F> {
    oracle: F,
    cfg: &'a ExploreConfig,
    baseline: f64,
    calls: Vec<OracleCall>,
    log: Vec<String>,
}

impl<F: FnMut(&LayerSpec) -> Result<f64>> Explorer<'_, F> {
    fn fits(&self, spec: &LayerSpec) -> bool {
        spec.validate().is_ok()
            && model_storage_bytes(spec, self.cfg.bits) as f64
                <= (1.0 - self.cfg.reserve_fraction) * self.cfg.capacity_bytes as f64
    }

    fn try_spec(&mut self, step: ExploreStep, spec: &LayerSpec) -> Result<bool> {
        let metric = (self.oracle)(spec)?;
        let degradation = metric - self.baseline;
        let accepted = degradation <= self.cfg.tolerance;
        self.log.push(format!(
            "{}: {} L_b={} io={} metric={metric:.6} degradation={degradation:.6} {}",
            step.name(),
            spec.cell.name(),
            spec.block_size,
            spec.io_block(),
            if accepted { "accepted" } else { "rejected" }
        ));
        self.calls.push(OracleCall {
            step,
            spec: spec.clone(),
            metric,
            degradation,
            accepted,
        });
        Ok(accepted)
    }
}

fn gru_variant(spec: &LayerSpec) -> LayerSpec {
    LayerSpec {
        cell: CellKind::Gru,
        projection: None,
        ..spec.clone()
    }
}

/// Three-step block-size exploration.
///
/// 1. Lower bound from the storage fit of the LSTM baseline.
/// 2. Binary search over powers of two in `[lower, upper]` for the largest
///    block size within tolerance, assuming the metric worsens with `L_b`.
/// 3. Try switching to GRU, then one doubled block size on input/output
///    matrices.
///
/// One extra call measures the uncompressed baseline. The oracle is called at
/// most [`MAX_ORACLE_CALLS`] times.
pub fn phase1_explore<F>(base: &LayerSpec, cfg: &ExploreConfig, oracle: F) -> Result<ExplorationResult>
where
    F: FnMut(&LayerSpec) -> Result<f64>,
{
    if !(cfg.tolerance >= 0.0) {
        return Err(Error::Config("tolerance must be non-negative".into()));
    }
    if !cfg.upper_bound.is_power_of_two() {
        return Err(Error::Config(format!("upper bound {} is not a power of two", cfg.upper_bound)));
    }
    let lstm = LayerSpec {
        cell: CellKind::Lstm,
        ..base.clone()
    };
    let lower = min_block_size_for_capacity(&lstm, cfg.bits, cfg.capacity_bytes, cfg.reserve_fraction)?;
    let upper = cfg.upper_bound.max(lower);
    let mut ex = Explorer {
        oracle,
        cfg,
        baseline: 0.0,
        calls: Vec::new(),
        log: vec![format!("storage lower bound L_b={lower}, upper bound L_b={upper}")],
    };

    let baseline_spec = base.with_block_size(1);
    ex.baseline = (ex.oracle)(&baseline_spec)?;
    ex.log.push(format!("baseline: L_b=1 metric={:.6}", ex.baseline));
    ex.calls.push(OracleCall {
        step: ExploreStep::Baseline,
        spec: baseline_spec,
        metric: ex.baseline,
        degradation: 0.0,
        accepted: true,
    });

    // candidates[..pass] are assumed to pass
    let candidates: Vec<usize> = power_of_two_blocks(upper).into_iter().filter(|b| *b >= lower).collect();
    let candidates: Vec<usize> = candidates
        .into_iter()
        .filter(|b| ex.fits(&base.with_block_size(*b)))
        .collect();
    let (mut lo, mut hi) = (0usize, candidates.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ex.try_spec(ExploreStep::BlockSearch, &base.with_block_size(candidates[mid]))? {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        ex.log.push(format!("no block size in [{lower}, {upper}] meets the tolerance; keeping L_b={lower}"));
        return Ok(ExplorationResult {
            spec: base.with_block_size(lower),
            lower_bound: lower,
            upper_bound: upper,
            baseline_metric: ex.baseline,
            calls: ex.calls,
            constraint_violated: true,
            log: ex.log,
        });
    }
    let block = candidates[lo - 1];
    let mut chosen = base.with_block_size(block);
    ex.log.push(format!("block search chose L_b={block}"));

    if chosen.cell == CellKind::Lstm {
        let gru = gru_variant(&chosen);
        if ex.fits(&gru) {
            if ex.try_spec(ExploreStep::CellSwitch, &gru)? {
                chosen = gru;
            }
        } else {
            ex.log.push("cell-switch: GRU variant invalid for this shape; skipped".into());
        }
    }

    let doubled = LayerSpec {
        io_block_size: Some(block * 2),
        ..chosen.clone()
    };
    let has_io = doubled.matrices().iter().any(|m| m.role.is_input_output());
    if has_io && ex.fits(&doubled) {
        if ex.try_spec(ExploreStep::IoBlock, &doubled)? {
            chosen = doubled;
        }
    } else {
        ex.log.push("io-block: doubled input/output block size invalid for this shape; skipped".into());
    }

    Ok(ExplorationResult {
        spec: chosen,
        lower_bound: lower,
        upper_bound: upper,
        baseline_metric: ex.baseline,
        calls: ex.calls,
        constraint_violated: false,
        log: ex.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, block: usize) -> LayerSpec {
        LayerSpec {
            cell: CellKind::Lstm,
            input_dim: n,
            layer_sizes: vec![n],
            projection: None,
            output_dim: Some(n),
            block_size: block,
            io_block_size: None,
        }
    }

    #[test]
    fn mult_count_examples() {
        assert_eq!(layer_mult_count(512, 512, 1).unwrap(), 512 * 512);
        assert_eq!(layer_mult_count(512, 512, 2).unwrap(), 512 * 512 / 2);
        assert!(matches!(layer_mult_count(12, 8, 8), Err(Error::Partition { .. })));
        assert!(layer_mult_count(12, 12, 3).is_err());
    }

    #[test]
    fn curve_decreases_through_sixteen() {
        for n in [512, 1024] {
            let c = mult_curve(n, n, &[1, 2, 4, 8, 16]);
            assert_eq!(c[0].1, 1.0);
            assert!(c.windows(2).all(|w| w[1].1 < w[0].1), "{c:?}");
        }
        for n in [64, 128, 256] {
            let c = mult_curve(n, n, &[1, 2]);
            assert!(c[1].1 < c[0].1);
        }
    }

    #[test]
    fn storage_examples() {
        assert_eq!(matrix_storage_bytes(1024, 1024, 8, 12).unwrap(), 196_608);
        assert_eq!(matrix_storage_bytes(64, 64, 1, 8).unwrap(), 64 * 64);
        let s = square(64, 1);
        assert_eq!(model_storage_bytes(&s, 8), s.dense_param_count());
    }

    #[test]
    fn capacity_examples() {
        let s = LayerSpec {
            output_dim: None,
            ..square(64, 1)
        };
        assert_eq!(min_block_size_for_capacity(&s, 12, u64::MAX, 0.0).unwrap(), 1);
        let at8 = model_storage_bytes(&s.with_block_size(8), 12);
        assert_eq!(min_block_size_for_capacity(&s, 12, at8, 0.0).unwrap(), 8);
        assert!(matches!(
            min_block_size_for_capacity(&s, 12, 10, 0.0),
            Err(Error::Infeasible(_))
        ));
        assert!(min_block_size_for_capacity(&s, 12, 10, 1.0).is_err());
    }

    #[test]
    fn pe_examples() {
        assert_eq!(pe_count(3600, 859_200, 60, 20_000).unwrap(), 42);
        assert_eq!(pe_count(2760, 331_680, 46, 8000).unwrap(), 41);
        assert_eq!(pe_count(10, 10, 60, 20_000).unwrap(), 0);
        assert!(pe_count(10, 10, 0, 1).is_err());
    }

    #[test]
    fn report_ratio_is_one_at_block_one() {
        let r = CostReport::new(&square(64, 1), 12, Some(1 << 20), 0.125, None).unwrap();
        assert_eq!(r.normalized_ratio, 1.0);
        assert!(r.render_structured().starts_with("#schema"));
        assert!(r.render_text().contains("normalized_ratio"));
    }

    fn explore_spec() -> LayerSpec {
        square(256, 1)
    }

    fn capacity_for_lower(spec: &LayerSpec, lower: usize) -> u64 {
        let bytes = model_storage_bytes(&spec.with_block_size(lower), 12);
        (bytes as f64 / (1.0 - DEFAULT_RESERVE_FRACTION)).ceil() as u64
    }

    #[test]
    fn explore_infinite_tolerance() {
        let spec = explore_spec();
        let cfg = ExploreConfig {
            capacity_bytes: capacity_for_lower(&spec, 8),
            tolerance: f64::INFINITY,
            ..ExploreConfig::default()
        };
        let r = phase1_explore(&spec, &cfg, |_| Ok(0.5)).unwrap();
        assert_eq!(r.lower_bound, 8);
        assert_eq!(r.spec.cell, CellKind::Gru);
        assert_eq!(r.spec.block_size, 64);
        assert_eq!(r.spec.io_block_size, Some(128));
        assert!(r.oracle_calls() <= MAX_ORACLE_CALLS);
        assert!(!r.constraint_violated);
    }

    #[test]
    fn explore_zero_tolerance_falls_back() {
        let spec = explore_spec();
        let cfg = ExploreConfig {
            capacity_bytes: capacity_for_lower(&spec, 8),
            tolerance: 0.0,
            ..ExploreConfig::default()
        };
        let r = phase1_explore(&spec, &cfg, |s| Ok(if s.block_size <= 8 { 0.1 } else { 0.1 + s.block_size as f64 * 1e-3 }))
            .unwrap();
        assert_eq!(r.spec.block_size, 8);
        let search = r.calls.iter().filter(|c| c.step == ExploreStep::BlockSearch).count();
        assert!(search <= 3);
        assert!(r.oracle_calls() <= MAX_ORACLE_CALLS);

        let r = phase1_explore(&spec, &cfg, |s| Ok(s.block_size as f64)).unwrap();
        assert!(r.constraint_violated);
        assert_eq!(r.spec.block_size, 8);
    }

    #[test]
    fn explore_infeasible_capacity() {
        let cfg = ExploreConfig {
            capacity_bytes: 100,
            ..ExploreConfig::default()
        };
        assert!(matches!(
            phase1_explore(&explore_spec(), &cfg, |_| Ok(0.0)),
            Err(Error::Infeasible(_))
        ));
    }
}
