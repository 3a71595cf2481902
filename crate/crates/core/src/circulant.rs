//! Block-circulant matrices and their FFT-based products.
//!
//! An `m×n` matrix is partitioned into a `p×q` grid of `L×L` blocks
//! (`p = m/L`, `q = n/L`). Each block is circulant and stored as one
//! generating vector `w`, which is the block's first column:
//! `block[k][l] = w[(k - l) mod L]`. With this convention the product of a
//! block with a segment `x_j` is the circular convolution `w ⊛ x_j`, i.e.
//! `irfft(rfft(w) ⊙ rfft(x_j))`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fft::{self, HalfSpectrum, OpCounter};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCirculantMatrix {
    rows: usize,
    cols: usize,
    block: usize,
    /// `p·q` generators of length `block`, block-row major.
    generators: Vec<f64>,
}

fn check_partition(rows: usize, cols: usize, block: usize) -> Result<()> {
    if block == 0 || rows == 0 || cols == 0 || rows % block != 0 || cols % block != 0 {
        return Err(Error::Partition { rows, cols, block });
    }
    Ok(())
}

impl BlockCirculantMatrix {
    pub fn new(rows: usize, cols: usize, block: usize, generators: Vec<f64>) -> Result<Self> {
        check_partition(rows, cols, block)?;
        let expect = rows * cols / block;
        if generators.len() != expect {
            return Err(Error::dim(format!(
                "{rows}x{cols} block-circulant matrix with block {block} needs {expect} generator values, got {}",
                generators.len()
            )));
        }
        Ok(BlockCirculantMatrix {
            rows,
            cols,
            block,
            generators,
        })
    }

    pub fn zeros(rows: usize, cols: usize, block: usize) -> Result<Self> {
        check_partition(rows, cols, block)?;
        Ok(BlockCirculantMatrix {
            rows,
            cols,
            block,
            generators: vec![0.0; rows * cols / block],
        })
    }

    /// Square identity: unit impulse generators on the diagonal blocks.
    pub fn identity(n: usize, block: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n, block)?;
        for i in 0..m.block_rows() {
            m.generator_mut(i, i)[0] = 1.0;
        }
        Ok(m)
    }

    /// Generators drawn uniformly from `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        block: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(rows, cols, block)?;
        for v in &mut m.generators {
            *v = rng.gen_range(-scale..scale);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    /// `p`, the number of block rows.
    pub fn block_rows(&self) -> usize {
        self.rows / self.block
    }

    /// `q`, the number of block columns.
    pub fn block_cols(&self) -> usize {
        self.cols / self.block
    }

    pub fn generators(&self) -> &[f64] {
        &self.generators
    }

    pub fn generators_mut(&mut self) -> &mut [f64] {
        &mut self.generators
    }

    pub fn generator(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.block_cols() + j) * self.block;
        &self.generators[start..start + self.block]
    }

    pub fn generator_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (i * self.block_cols() + j) * self.block;
        &mut self.generators[start..start + self.block]
    }

    pub fn param_count(&self) -> usize {
        self.generators.len()
    }

    /// Dense `m×n` form. Works for any block size, not just powers of two.
    pub fn expand_to_dense(&self) -> Matrix {
        let l = self.block;
        let mut d = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.block_rows() {
            for j in 0..self.block_cols() {
                let w = self.generator(i, j);
                for k in 0..l {
                    for c in 0..l {
                        d[(i * l + k, j * l + c)] = w[(k + l - c) % l];
                    }
                }
            }
        }
        d
    }

    /// Whether `dense` has exactly this matrix's block-circulant structure.
    /// Exact comparison, no tolerance.
    pub fn is_block_circulant(dense: &Matrix, block: usize) -> bool {
        if check_partition(dense.rows(), dense.cols(), block).is_err() {
            return false;
        }
        for r in 0..dense.rows() {
            for c in 0..dense.cols() {
                let (bi, k) = (r / block, r % block);
                let (bj, l) = (c / block, c % block);
                let d = (k + block - l) % block;
                // representative of diagonal d inside the block: row d, column 0
                if dense[(r, c)] != dense[(bi * block + d, bj * block)] {
                    return false;
                }
            }
        }
        true
    }
}

/// Direct `O(mn)` product through the dense expansion.
pub fn matvec_dense_oracle(m: &BlockCirculantMatrix, x: &[f64]) -> Result<Vec<f64>> {
    m.expand_to_dense().matvec(x)
}

/// Euclidean projection onto block-circulant matrices with block size `block`.
///
/// Each generator entry `d` is the mean of the dense entries on circulant
/// diagonal `d` of its block, i.e. positions with `(k - l) mod L == d`.
/// The mean is taken as an offset from the first entry so a diagonal of
/// equal values maps back to that value exactly.
pub fn project_to_block_circulant(dense: &Matrix, block: usize) -> Result<BlockCirculantMatrix> {
    let (rows, cols) = (dense.rows(), dense.cols());
    let mut out = BlockCirculantMatrix::zeros(rows, cols, block)?;
    let inv = 1.0 / block as f64;
    for i in 0..out.block_rows() {
        for j in 0..out.block_cols() {
            let w = out.generator_mut(i, j);
            for (d, wd) in w.iter_mut().enumerate() {
                let at = |k: usize| dense[(i * block + k, j * block + (k + block - d) % block)];
                let base = at(0);
                let offset: f64 = (1..block).map(|k| at(k) - base).sum();
                *wd = base + offset * inv;
            }
        }
    }
    Ok(out)
}

/// Parameter counts of a dense matrix and its block-circulant counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub dense: u64,
    pub compressed: u64,
}

impl ParamCounts {
    /// `dense / compressed`, equal to the block size.
    pub fn ratio(&self) -> f64 {
        self.dense as f64 / self.compressed as f64
    }
}

pub fn compression_ratio(rows: usize, cols: usize, block: usize) -> Result<ParamCounts> {
    check_partition(rows, cols, block)?;
    let dense = (rows * cols) as u64;
    Ok(ParamCounts {
        dense,
        compressed: dense / block as u64,
    })
}

/// Precomputed half-spectra of every generator in a block-circulant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWeights {
    rows: usize,
    cols: usize,
    block: usize,
    spectra: Vec<HalfSpectrum>,
}

impl SpectralWeights {
    pub fn new(m: &BlockCirculantMatrix) -> Result<Self> {
        if !m.block.is_power_of_two() {
            return Err(Error::InvalidLength(m.block));
        }
        let spectra = m
            .generators
            .chunks_exact(m.block)
            .map(fft::rfft)
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralWeights {
            rows: m.rows,
            cols: m.cols,
            block: m.block,
            spectra,
        })
    }

    /// Assembles weights from externally produced spectra (e.g. dequantized).
    pub fn from_spectra(rows: usize, cols: usize, block: usize, spectra: Vec<HalfSpectrum>) -> Result<Self> {
        check_partition(rows, cols, block)?;
        if spectra.len() != (rows / block) * (cols / block) || spectra.iter().any(|s| s.len() != block) {
            return Err(Error::dim("spectra do not match the block grid"));
        }
        Ok(SpectralWeights {
            rows,
            cols,
            block,
            spectra,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn block_rows(&self) -> usize {
        self.rows / self.block
    }

    pub fn block_cols(&self) -> usize {
        self.cols / self.block
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &HalfSpectrum {
        &self.spectra[i * self.block_cols() + j]
    }

    pub fn spectra(&self) -> &[HalfSpectrum] {
        &self.spectra
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::dim(format!(
                "{}x{} block-circulant matrix applied to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(())
    }

    /// Decoupled product with a scratch counter.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        matvec_decoupled(self, x, &mut OpCounter::new())
    }
}

/// Per-block product: one forward and one inverse transform for every
/// `(i, j)` block, summed in the time domain.
pub fn matvec_fft(w: &SpectralWeights, x: &[f64]) -> Result<Vec<f64>> {
    w.check_input(x)?;
    let l = w.block;
    let mut out = vec![0.0; w.rows];
    let zero = HalfSpectrum::zeros(l)?;
    for i in 0..w.block_rows() {
        let seg_out = &mut out[i * l..(i + 1) * l];
        for (j, xj) in x.chunks_exact(l).enumerate() {
            let xs = fft::rfft(xj)?;
            let prod = fft::spectral_mac(&zero, w.spectrum(i, j), &xs)?;
            for (o, v) in seg_out.iter_mut().zip(fft::irfft(&prod)?) {
                *o += v;
            }
        }
    }
    Ok(out)
}

/// Decoupled product: `q` forward transforms (one per input segment), spectral
/// accumulation per output segment, then `p` inverse transforms.
pub fn matvec_decoupled(w: &SpectralWeights, x: &[f64], counter: &mut OpCounter) -> Result<Vec<f64>> {
    w.check_input(x)?;
    let l = w.block;
    let inputs = x
        .chunks_exact(l)
        .map(|xj| fft::rfft_counted(xj, counter))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(w.rows);
    for i in 0..w.block_rows() {
        let mut acc = HalfSpectrum::zeros(l)?;
        for (j, xs) in inputs.iter().enumerate() {
            fft::spectral_mac_into(&mut acc, w.spectrum(i, j), xs, Some(counter))?;
        }
        out.extend(fft::irfft_counted(&acc, counter)?);
    }
    counter.matvecs += 1;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expand_examples() {
        let m = BlockCirculantMatrix::new(3, 3, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let expect = Matrix::from_rows(&[vec![1.0, 3.0, 2.0], vec![2.0, 1.0, 3.0], vec![3.0, 2.0, 1.0]]).unwrap();
        assert_eq!(m.expand_to_dense(), expect);

        let m = BlockCirculantMatrix::new(1, 1, 1, vec![5.0]).unwrap();
        assert_eq!(m.expand_to_dense(), Matrix::from_rows(&[vec![5.0]]).unwrap());

        let m = BlockCirculantMatrix::new(2, 2, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(m.expand_to_dense(), Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap());
    }

    #[test]
    fn construction_checks_partition() {
        assert!(matches!(
            BlockCirculantMatrix::zeros(6, 8, 4),
            Err(Error::Partition { rows: 6, cols: 8, block: 4 })
        ));
        assert!(matches!(BlockCirculantMatrix::new(4, 4, 2, vec![0.0; 7]), Err(Error::Dimension(_))));
        assert!(matches!(BlockCirculantMatrix::zeros(4, 4, 0), Err(Error::Partition { .. })));
    }

    #[test]
    fn dense_oracle_examples() {
        let m = BlockCirculantMatrix::new(2, 2, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(matvec_dense_oracle(&m, &[3.0, 4.0]).unwrap(), vec![11.0, 10.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = BlockCirculantMatrix::random(8, 12, 4, 1.0, &mut rng).unwrap();
        assert_eq!(matvec_dense_oracle(&m, &[0.0; 12]).unwrap(), vec![0.0; 8]);
        let mut e0 = vec![0.0; 12];
        e0[0] = 1.0;
        let col = matvec_dense_oracle(&m, &e0).unwrap();
        let d = m.expand_to_dense();
        for (r, v) in col.iter().enumerate() {
            assert_eq!(*v, d[(r, 0)]);
        }
        assert!(matches!(matvec_dense_oracle(&m, &[0.0; 8]), Err(Error::Dimension(_))));
    }

    #[test]
    fn fft_products_single_block() {
        let m = BlockCirculantMatrix::new(2, 2, 2, vec![1.0, 2.0]).unwrap();
        let w = SpectralWeights::new(&m).unwrap();
        let a = matvec_fft(&w, &[3.0, 4.0]).unwrap();
        let b = matvec_decoupled(&w, &[3.0, 4.0], &mut OpCounter::new()).unwrap();
        for (v, e) in a.iter().zip([11.0, 10.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_generators_give_zero() {
        let m = BlockCirculantMatrix::zeros(8, 16, 4).unwrap();
        let w = SpectralWeights::new(&m).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64 - 3.0).collect();
        assert!(matvec_fft(&w, &x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decoupled_counts_follow_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (p, q) in [(3, 3), (2, 4)] {
            let m = BlockCirculantMatrix::random(p * 4, q * 4, 4, 1.0, &mut rng).unwrap();
            let w = SpectralWeights::new(&m).unwrap();
            let mut c = OpCounter::new();
            let x: Vec<f64> = (0..q * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = matvec_decoupled(&w, &x, &mut c).unwrap();
            assert_eq!((c.forward_ffts, c.inverse_ffts), (q as u64, p as u64));
            let want = matvec_dense_oracle(&m, &x).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spectral_weights_need_power_of_two() {
        let m = BlockCirculantMatrix::zeros(6, 6, 3).unwrap();
        assert!(matches!(SpectralWeights::new(&m), Err(Error::InvalidLength(3))));
    }

    #[test]
    fn projection_examples() {
        let d = Matrix::from_rows(&[vec![1.0, 3.0], vec![5.0, 7.0]]).unwrap();
        let p = project_to_block_circulant(&d, 2).unwrap();
        assert_eq!(p.generators(), &[4.0, 4.0]);
        assert_eq!(p.expand_to_dense(), Matrix::from_rows(&[vec![4.0, 4.0], vec![4.0, 4.0]]).unwrap());
        assert!(matches!(project_to_block_circulant(&d, 3), Err(Error::Partition { .. })));
    }

    #[test]
    fn projection_is_idempotent() {
        // dyadic generators keep the averaging exact
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = BlockCirculantMatrix::zeros(16, 8, 4).unwrap();
        for v in m.generators_mut() {
            *v = rng.gen_range(-64i32..64) as f64 / 8.0;
        }
        let back = project_to_block_circulant(&m.expand_to_dense(), 4).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn structure_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = BlockCirculantMatrix::random(8, 8, 4, 1.0, &mut rng).unwrap();
        let mut d = m.expand_to_dense();
        assert!(BlockCirculantMatrix::is_block_circulant(&d, 4));
        assert!(BlockCirculantMatrix::is_block_circulant(&d, 1));
        d[(1, 2)] += 1e-12;
        assert!(!BlockCirculantMatrix::is_block_circulant(&d, 4));
    }

    #[test]
    fn compression_examples() {
        let c = compression_ratio(1024, 1024, 8).unwrap();
        assert_eq!(c.ratio(), 8.0);
        assert_eq!(c.compressed, 131_072);
        assert_eq!(compression_ratio(64, 64, 1).unwrap().ratio(), 1.0);
        assert_eq!(compression_ratio(1024, 1024, 16).unwrap().ratio(), 16.0);
        assert!(compression_ratio(10, 16, 4).is_err());
    }

    #[test]
    fn identity_expands_to_identity() {
        let i = BlockCirculantMatrix::identity(8, 4).unwrap();
        assert_eq!(i.expand_to_dense(), Matrix::identity(8));
    }
}
