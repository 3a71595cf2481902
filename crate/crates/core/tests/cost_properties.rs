use circrnn::arch::{CellKind, LayerSpec};
use circrnn::circulant::{matvec_decoupled, BlockCirculantMatrix, SpectralWeights};
use circrnn::cost::{
    layer_mult_count, layer_mult_count_with, mult_curve, model_storage_bytes, pe_count, phase1_explore,
    ExploreConfig, MAX_ORACLE_CALLS,
};
use circrnn::fft::{ComplexMultCost, OpCounter};
use circrnn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_count_matches_instrumented_execution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sizes = [64, 96, 128, 192, 256, 384, 512];
    for block in [1, 2, 4, 8, 16, 32, 64] {
        for &m in &sizes {
            for &n in &sizes {
                if m % block != 0 || n % block != 0 {
                    assert!(layer_mult_count(m, n, block).is_err());
                    continue;
                }
                let mat = BlockCirculantMatrix::random(m, n, block, 1.0, &mut rng).unwrap();
                let w = SpectralWeights::new(&mat).unwrap();
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for cost in [ComplexMultCost::Four, ComplexMultCost::Three] {
                    let mut c = OpCounter::with_cost(cost);
                    matvec_decoupled(&w, &x, &mut c).unwrap();
                    assert_eq!(c.matvec_mults(), layer_mult_count_with(m, n, block, cost).unwrap(), "{m}x{n} L={block}");
                }
            }
        }
    }
}

#[test]
fn smallest_blocks_already_save_work() {
    for n in [64, 128, 256, 512, 1024] {
        let curve = mult_curve(n, n, &[1, 2]);
        assert_eq!(curve[0].1, 1.0);
        assert!(curve[1].1 < curve[0].1, "n={n}: {curve:?}");
    }
}

#[test]
fn bad_partition_is_rejected() {
    assert!(matches!(layer_mult_count(100, 64, 8), Err(Error::Partition { .. })));
    assert!(matches!(layer_mult_count(64, 64, 3), Err(Error::Partition { .. })));
}

fn random_spec(rng: &mut ChaCha8Rng) -> LayerSpec {
    let width = 1usize << rng.gen_range(5..11);
    let layers = rng.gen_range(1..4);
    let lstm = rng.gen_bool(0.5);
    LayerSpec {
        cell: if lstm { CellKind::Lstm } else { CellKind::Gru },
        input_dim: 1usize << rng.gen_range(4..10),
        layer_sizes: vec![width; layers],
        projection: if lstm && rng.gen_bool(0.5) { Some(width / 2) } else { None },
        output_dim: if rng.gen_bool(0.7) { Some(1usize << rng.gen_range(3..9)) } else { None },
        block_size: 1,
        io_block_size: None,
    }
}

#[test]
fn explorer_respects_call_budget_and_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut explored = 0;
    for trial in 0..300 {
        let spec = random_spec(&mut rng);
        let cfg = ExploreConfig {
            capacity_bytes: 1u64 << rng.gen_range(14..24),
            upper_bound: if rng.gen_bool(0.5) { 32 } else { 64 },
            tolerance: rng.gen_range(0.0..0.05),
            ..ExploreConfig::default()
        };
        // metric degrades with block size plus noise; GRU sometimes better
        let noise: f64 = rng.gen_range(0.0..0.02);
        let mut calls = 0;
        let oracle = |s: &LayerSpec| {
            calls += 1;
            let base = 0.1 + 0.004 * s.block_size as f64 + 0.002 * s.io_block() as f64;
            Ok(base + noise * (calls as f64).sin() + if s.cell == CellKind::Gru { -0.003 } else { 0.0 })
        };
        match phase1_explore(&spec, &cfg, oracle) {
            Ok(r) => {
                explored += 1;
                assert!(r.oracle_calls() <= MAX_ORACLE_CALLS, "trial {trial}: {} calls", r.oracle_calls());
                let budget = (1.0 - cfg.reserve_fraction) * cfg.capacity_bytes as f64;
                assert!(model_storage_bytes(&r.spec, cfg.bits) as f64 <= budget, "trial {trial}");
                r.spec.validate().unwrap();
            }
            Err(Error::Infeasible(_)) => {}
            Err(e) => panic!("trial {trial}: {e}"),
        }
    }
    assert!(explored > 100);
}

proptest! {
    #[test]
    fn pe_count_is_monotone(d in 0u64..10_000, l in 0u64..1_000_000, dp in 1u64..64, lp in 1u64..5_000, dd in 0u64..100, dl in 0u64..10_000) {
        let base = pe_count(d, l, dp, lp).unwrap();
        prop_assert!(pe_count(d + dd, l + dl, dp, lp).unwrap() >= base);
        prop_assert!(pe_count(d, l, dp + 1, lp + 1).unwrap() <= base);
        prop_assert!(pe_count(d, l, 0, lp).is_err());
    }
}
