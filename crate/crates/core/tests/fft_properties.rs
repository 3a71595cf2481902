use circrnn::fft::{irfft, rfft};
use num_complex::Complex64;
use proptest::prelude::*;

/// O(n²) DFT of a real signal.
fn direct_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| {
                    let a = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    Complex64::new(v * a.cos(), v * a.sin())
                })
                .sum()
        })
        .collect()
}

fn signal(max_log: u32) -> impl Strategy<Value = Vec<f64>> {
    (0..=max_log).prop_flat_map(|p| prop::collection::vec(-10.0f64..10.0, 1usize << p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_direct_dft(x in (2u32..=8).prop_flat_map(|p| prop::collection::vec(-10.0f64..10.0, 1usize << p))) {
        let s = rfft(&x).unwrap();
        let full = s.full_spectrum();
        for (a, b) in full.iter().zip(direct_dft(&x)) {
            prop_assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()) * x.len() as f64, "{a} vs {b}");
        }
    }

    #[test]
    fn round_trip(x in signal(10)) {
        let back = irfft(&rfft(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn linearity(
        (x, y) in (0u32..=9).prop_flat_map(|p| {
            let n = 1usize << p;
            (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))
        }),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let z: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (sx, sy, sz) = (rfft(&x).unwrap(), rfft(&y).unwrap(), rfft(&z).unwrap());
        for ((u, v), w) in sx.bins().iter().zip(sy.bins()).zip(sz.bins()) {
            prop_assert!((a * u + b * v - w).norm() <= 1e-10 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn parseval(x in signal(10)) {
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spec: f64 = rfft(&x).unwrap().full_spectrum().iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
        prop_assert!((energy - spec).abs() <= 1e-9 * energy.max(1e-300));
    }
}
