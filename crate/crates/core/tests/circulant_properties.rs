use circrnn::circulant::{
    compression_ratio, matvec_decoupled, matvec_dense_oracle, matvec_fft, project_to_block_circulant,
    BlockCirculantMatrix, SpectralWeights,
};
use circrnn::fft::OpCounter;
use circrnn::matrix::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn fft_products_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for l in [2, 4, 8, 16, 32] {
        for p in 1..=8 {
            for q in 1..=8 {
                for _ in 0..3 {
                    let m = BlockCirculantMatrix::random(p * l, q * l, l, 1.0, &mut rng).unwrap();
                    let x: Vec<f64> = (0..q * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let w = SpectralWeights::new(&m).unwrap();
                    let oracle = matvec_dense_oracle(&m, &x).unwrap();
                    let mut c = OpCounter::new();
                    for y in [matvec_fft(&w, &x).unwrap(), matvec_decoupled(&w, &x, &mut c).unwrap()] {
                        for (a, b) in y.iter().zip(&oracle) {
                            assert!((a - b).abs() <= 1e-9, "L={l} p={p} q={q}");
                        }
                    }
                    assert_eq!((c.forward_ffts, c.inverse_ffts), (q as u64, p as u64));
                }
            }
        }
    }
}

#[test]
fn projection_beats_random_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let d = random_dense(16, 16, &mut rng);
        let p = project_to_block_circulant(&d, 4).unwrap().expand_to_dense();
        let best = d.sub(&p).frobenius_norm();
        for _ in 0..1000 {
            let c = BlockCirculantMatrix::random(16, 16, 4, 1.0, &mut rng).unwrap().expand_to_dense();
            assert!(best <= d.sub(&c).frobenius_norm());
        }
    }
}

#[test]
fn compression_ratio_equals_block_size() {
    for l in [1, 2, 4, 8, 16, 32, 64] {
        let c = compression_ratio(512, 1024, l).unwrap();
        assert_eq!(c.dense, 512 * 1024);
        assert_eq!(c.dense, c.compressed * l as u64);
        assert_eq!(c.ratio(), l as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_residual_is_orthogonal(seed in any::<u64>(), lp in 0u32..4, p in 1usize..4, q in 1usize..4) {
        let l = 1usize << lp;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dense(p * l, q * l, &mut rng);
        let proj = project_to_block_circulant(&d, l).unwrap();
        let resid = d.sub(&proj.expand_to_dense());
        for _ in 0..5 {
            let c = BlockCirculantMatrix::random(p * l, q * l, l, 1.0, &mut rng).unwrap().expand_to_dense();
            prop_assert!(resid.dot(&c).abs() < 1e-9);
        }
        let again = project_to_block_circulant(&proj.expand_to_dense(), l).unwrap();
        prop_assert_eq!(again.generators(), proj.generators());
    }

    #[test]
    fn expand_then_project_is_identity(seed in any::<u64>(), lp in 0u32..4) {
        let l = 1usize << lp;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // dyadic generators average exactly
        let g: Vec<f64> = (0..4 * l).map(|_| rng.gen_range(-64i32..64) as f64 / 8.0).collect();
        let m = BlockCirculantMatrix::new(2 * l, 2 * l, l, g).unwrap();
        let back = project_to_block_circulant(&m.expand_to_dense(), l).unwrap();
        prop_assert_eq!(back, m);
    }
}
