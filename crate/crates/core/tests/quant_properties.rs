use circrnn::arch::{CellKind, GateActivation, LayerSpec};
use circrnn::dense::DenseNetwork;
use circrnn::quant::{
    analyze_range, pwl_sigmoid, pwl_tanh, quantize, quantized_inference, ActivationMode, FixedPointFormat, Pwl,
    QuantConfig, QuantizedNetwork, DEFAULT_PWL_SEGMENTS,
};
use circrnn::rnn::Network;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn network(cell: CellKind, seed: u64) -> Network {
    let spec = LayerSpec {
        cell,
        input_dim: 8,
        layer_sizes: vec![16],
        projection: None,
        output_dim: Some(8),
        block_size: 4,
        io_block_size: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseNetwork::random(&spec, GateActivation::Sigmoid, &mut rng).unwrap().project().unwrap()
}

fn sequences(count: usize, len: usize, scale: f64, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..len).map(|_| (0..8).map(|_| rng.gen_range(-scale..scale)).collect()).collect())
        .collect()
}

fn report(net: &Network, bits: u32, activation: ActivationMode) -> circrnn::quant::DeviationReport {
    let calib = sequences(16, 20, 1.0, 1);
    let q = QuantizedNetwork::calibrate(net, &calib, QuantConfig { total_bits: bits, activation }).unwrap();
    quantized_inference(&q, &sequences(16, 20, 1.0, 2)).unwrap().1
}

#[test]
fn pwl_error_over_dense_grid() {
    let sig = Pwl::sigmoid(DEFAULT_PWL_SEGMENTS).unwrap();
    let tanh = Pwl::tanh(DEFAULT_PWL_SEGMENTS).unwrap();
    let n = 1_000_000;
    let (mut es, mut et) = (0.0f64, 0.0f64);
    for i in 0..=n {
        let x = -10.0 + 20.0 * i as f64 / n as f64;
        es = es.max((sig.eval(x) - 1.0 / (1.0 + (-x).exp())).abs());
        et = et.max((tanh.eval(x) - x.tanh()).abs());
    }
    assert!(es <= 1e-3, "sigmoid error {es}");
    assert!(et <= 1e-3, "tanh error {et}");
    assert_eq!(pwl_sigmoid(0.0, 64).unwrap(), 0.5);
    assert_eq!(pwl_tanh(0.0, 64).unwrap(), 0.0);
    assert_eq!(pwl_sigmoid(1e9, 64).unwrap(), 1.0);
}

#[test]
fn saturating_example() {
    let f = FixedPointFormat::new(12, 8, 1.0).unwrap();
    assert_eq!(f.encode(100.0), (2047, true));
    assert_eq!(f.encode(-100.0), (-2048, true));
}

#[test]
fn near_double_precision_at_32_bits() {
    for (i, cell) in [CellKind::Lstm, CellKind::Gru].into_iter().enumerate() {
        let r = report(&network(cell, 3 + i as u64), 32, ActivationMode::Exact);
        assert!(r.max_abs < 1e-5, "{cell:?}: {}", r.max_abs);
    }
}

#[test]
fn deviation_shrinks_with_bit_width() {
    let net = network(CellKind::Lstm, 5);
    let mut prev = f64::INFINITY;
    for bits in 8..=16 {
        let r = report(&net, bits, ActivationMode::Exact);
        assert!(r.max_abs <= prev, "{bits} bits: {} > {prev}", r.max_abs);
        prev = r.max_abs;
    }
}

#[test]
fn two_bit_format_degrades_badly() {
    let net = network(CellKind::Lstm, 6);
    let r2 = report(&net, 2, ActivationMode::default());
    let r12 = report(&net, 12, ActivationMode::default());
    assert!(r2.max_abs > 0.1 && r2.max_abs > 20.0 * r12.max_abs, "{} vs {}", r2.max_abs, r12.max_abs);
}

#[test]
fn out_of_range_inputs_raise_saturation_warning() {
    let net = network(CellKind::Lstm, 7);
    let q = QuantizedNetwork::calibrate(&net, &sequences(8, 20, 0.1, 1), QuantConfig::default()).unwrap();
    let (_, r) = quantized_inference(&q, &sequences(8, 20, 50.0, 2)).unwrap();
    assert!(r.saturation_warning(), "rate {}", r.saturation.rate());
    assert!(r.render().contains("warning="));
}

proptest! {
    #[test]
    fn round_trip_within_half_ulp(bits in 2u32..=32, frac in 0u32..32, exp in -4i32..4, v in -1.0f64..1.0) {
        let frac = frac % bits;
        let f = FixedPointFormat::new(bits, frac, (exp as f64).exp2()).unwrap();
        let span = f.max_code() as f64 * f.ulp();
        let x = v * span;
        let (y, sat) = f.round_trip(x);
        prop_assert!(!sat);
        prop_assert!((y - x).abs() <= 0.5 * f.ulp());
        // quantizing an already quantized value is exact
        prop_assert_eq!(f.round_trip(y), (y, false));
    }

    #[test]
    fn analyzed_format_holds_its_data(values in prop::collection::vec(-1e4f64..1e4, 1..64), bits in 2u32..=24) {
        let f = analyze_range(&values, bits).unwrap();
        let q = quantize(&values, f).unwrap();
        prop_assert_eq!(q.saturated, 0);
        if f.frac_bits + 1 < bits && f.scale == 1.0 {
            // one more fractional bit would overflow
            let finer = FixedPointFormat::new(bits, f.frac_bits + 1, 1.0).unwrap();
            prop_assert!(quantize(&values, finer).unwrap().saturated > 0);
        }
    }

    #[test]
    fn pwl_is_monotone_and_contained(a in -1e3f64..1e3, b in -1e3f64..1e3, segments in 2usize..=128) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s = Pwl::sigmoid(segments).unwrap();
        let t = Pwl::tanh(segments).unwrap();
        prop_assert!(s.eval(lo) <= s.eval(hi));
        prop_assert!(t.eval(lo) <= t.eval(hi));
        for x in [lo, hi] {
            prop_assert!((0.0..=1.0).contains(&s.eval(x)));
            prop_assert!((-1.0..=1.0).contains(&t.eval(x)));
        }
    }
}
