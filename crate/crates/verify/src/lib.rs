//! Acceptance checks for the circrnn toolkit.
//!
//! Each check returns a [`Verdict`]; the `acceptance` test target runs them
//! all and prints one line per check.

use std::time::{Duration, Instant};

use circrnn::admm::{admm_train, train_unconstrained, AdmmState, TrainConfig, TrainOutcome};
use circrnn::arch::{CellKind, GateActivation, LayerSpec};
use circrnn::circulant::{
    compression_ratio, matvec_decoupled, matvec_dense_oracle, matvec_fft, project_to_block_circulant,
    BlockCirculantMatrix, SpectralWeights,
};
use circrnn::cost::{
    layer_mult_count, mult_curve, model_storage_bytes, phase1_explore, power_of_two_blocks, ExploreConfig,
    MAX_ORACLE_CALLS,
};
use circrnn::dense::DenseNetwork;
use circrnn::fft::OpCounter;
use circrnn::matrix::Matrix;
use circrnn::model_file::ModelFile;
use circrnn::quant::{quantized_inference, ActivationMode, QuantConfig, QuantizedNetwork};
use circrnn::rnn::Network;
use circrnn::task::{evaluate, Example, SyntheticTask};
use circrnn::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn verdict(id: u32, name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { id, name, passed, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// FFT and decoupled products agree with the dense expansion.
pub fn fft_matvec_equivalence() -> Result<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for l in [2, 4, 8, 16, 32] {
        for _ in 0..200 {
            let (p, q) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let m = BlockCirculantMatrix::random(p * l, q * l, l, 1.0, &mut rng)?;
            let x: Vec<f64> = (0..q * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = SpectralWeights::new(&m)?;
            let oracle = matvec_dense_oracle(&m, &x)?;
            let mut c = OpCounter::new();
            for y in [matvec_fft(&w, &x)?, matvec_decoupled(&w, &x, &mut c)?] {
                for (a, b) in y.iter().zip(&oracle) {
                    worst = worst.max((a - b).abs());
                }
            }
            instances += 1;
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        1,
        "fft-matvec equivalence",
        worst <= 1e-9 && t < Duration::from_secs(30),
        format!("{instances} instances, max abs error {worst:.2e}, {:.2} s", secs(t)),
    ))
}

/// `q` forward and `p` inverse transforms per decoupled product.
pub fn decoupling_counts() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    let mut calls = 0;
    for l in [1, 2, 4, 8, 16, 32] {
        for p in 1..=8 {
            for q in 1..=8 {
                let m = BlockCirculantMatrix::random(p * l, q * l, l, 1.0, &mut rng)?;
                let w = SpectralWeights::new(&m)?;
                let x: Vec<f64> = (0..q * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut c = OpCounter::new();
                matvec_decoupled(&w, &x, &mut c)?;
                calls += 1;
                if (c.forward_ffts, c.inverse_ffts) != (q as u64, p as u64) {
                    bad.push(format!("L={l} {p}x{q}: {} fwd {} inv", c.forward_ffts, c.inverse_ffts));
                }
            }
        }
    }
    Ok(verdict(
        2,
        "decoupling counts",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{calls} grids, all exact")
        } else {
            bad.join("; ")
        },
    ))
}

/// Projection beats random structured candidates, leaves an orthogonal
/// residual and is idempotent bit for bit.
pub fn projection_optimality() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut beaten = 0;
    let mut worst_dot = 0.0f64;
    let mut idempotent = true;
    for _ in 0..100 {
        let d = random_dense(16, 16, &mut rng);
        let proj = project_to_block_circulant(&d, 4)?;
        let pd = proj.expand_to_dense();
        let resid = d.sub(&pd);
        let best = resid.frobenius_norm();
        for _ in 0..1000 {
            let c = BlockCirculantMatrix::random(16, 16, 4, 1.0, &mut rng)?.expand_to_dense();
            if d.sub(&c).frobenius_norm() < best {
                beaten += 1;
            }
            worst_dot = worst_dot.max(resid.dot(&c).abs());
        }
        idempotent &= project_to_block_circulant(&pd, 4)? == proj;
    }
    Ok(verdict(
        3,
        "projection optimality",
        beaten == 0 && worst_dot < 1e-9 && idempotent,
        format!("candidates closer than projection {beaten}/100000, max |<resid, C>| {worst_dot:.2e}, idempotent {idempotent}"),
    ))
}

/// Copy-memory fixture shared by the training and quantization checks.
pub struct CopyFixture {
    pub spec: LayerSpec,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub config: TrainConfig,
}

impl CopyFixture {
    pub fn new() -> Self {
        let task = SyntheticTask::copy_memory(4, 3, 2, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train = task.generate(256, &mut rng);
        let test = task.generate(256, &mut rng);
        CopyFixture {
            spec: LayerSpec {
                cell: CellKind::Lstm,
                input_dim: 8,
                layer_sizes: vec![16],
                projection: None,
                output_dim: Some(8),
                block_size: 4,
                io_block_size: None,
            },
            train,
            test,
            config: TrainConfig::default(),
        }
    }
}

impl Default for CopyFixture {
    fn default() -> Self {
        Self::new()
    }
}

fn loss_of(net: &Network, data: &[Example]) -> Result<f64> {
    Ok(evaluate(data, |xs| net.forward(xs))?.loss)
}

/// ADMM keeps `Z` structured, converges, and ends below one-shot projection.
pub fn admm_structure_and_benefit(fx: &CopyFixture) -> Result<(Verdict, TrainOutcome)> {
    let start = Instant::now();
    let outcome = admm_train(&fx.spec, GateActivation::Sigmoid, &fx.train, &fx.config)?;
    let structured = outcome.trace.iter().all(|r| r.z_structured);
    let converged = outcome.converged
        && outcome.iterations <= 50
        && outcome.trace.last().is_some_and(|r| r.residuals.iter().all(|v| *v < 1e-3));
    let dense = train_unconstrained(&fx.spec, GateActivation::Sigmoid, &fx.train, &fx.config)?;
    let one_shot = dense.project()?;
    let (admm_train_loss, shot_train_loss) = (loss_of(&outcome.network, &fx.train)?, loss_of(&one_shot, &fx.train)?);
    let (admm_test_loss, shot_test_loss) = (loss_of(&outcome.network, &fx.test)?, loss_of(&one_shot, &fx.test)?);
    let better = admm_train_loss <= shot_train_loss && admm_test_loss <= shot_test_loss;
    let t = start.elapsed();
    let passed = structured && converged && better && t < Duration::from_secs(600);
    let detail = format!(
        "Z structured every iteration {structured}, converged {} after {} iterations (final residual {:.2e}), \
         loss admm/one-shot train {admm_train_loss:.4}/{shot_train_loss:.4} test {admm_test_loss:.4}/{shot_test_loss:.4}, {:.1} s",
        outcome.converged,
        outcome.iterations,
        outcome.trace.last().map_or(f64::NAN, |r| r.residual),
        secs(t)
    );
    Ok((verdict(4, "admm structure and benefit", passed, detail), outcome))
}

/// Analytic gradient of loss plus augmented penalty against central
/// differences.
pub fn gradient_check() -> Result<Verdict> {
    let spec = LayerSpec {
        cell: CellKind::Lstm,
        input_dim: 4,
        layer_sizes: vec![4],
        projection: None,
        output_dim: Some(4),
        block_size: 2,
        io_block_size: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = SyntheticTask::copy_memory(2, 2, 1, 4, 4).generate(4, &mut rng);
    let w = DenseNetwork::random(&spec, GateActivation::Sigmoid, &mut rng)?;
    let mut st = AdmmState::new(w, 0.7)?;
    for (k, s) in st.weights.matrix_shapes().iter().enumerate() {
        st.set_z(k, BlockCirculantMatrix::random(s.rows, s.cols, s.block, 0.5, &mut rng)?);
        st.u[k] = random_dense(s.rows, s.cols, &mut rng);
    }
    let n = st.weights.param_count();
    let (_, grad) = st.objective_and_grad(&data)?;
    let h = 1e-5;
    let mut fd = vec![0.0; n];
    for (i, g) in fd.iter_mut().enumerate() {
        let orig = st.weights.params()[i];
        st.weights.params_mut()[i] = orig + h;
        let up = st.objective(&data)?;
        st.weights.params_mut()[i] = orig - h;
        let down = st.objective(&data)?;
        st.weights.params_mut()[i] = orig;
        *g = (up - down) / (2.0 * h);
    }
    let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rel = diff / norm;
    Ok(verdict(
        5,
        "gradient check",
        n <= 500 && rel <= 1e-5,
        format!("{n} parameters, relative error {rel:.2e}"),
    ))
}

/// Minimum of the multiplication ratio at `L_b` 32 or 64, plus agreement of
/// the analytic count with instrumented execution.
pub fn cost_curve_shape() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut shape_ok = true;
    let mut count_ok = true;
    let mut parts = Vec::new();
    for h in [512usize, 1024] {
        let blocks = power_of_two_blocks(256);
        let curve = mult_curve(h, h, &blocks);
        let (best, _) = curve
            .iter()
            .cloned()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty curve");
        let rising = curve
            .windows(2)
            .filter(|w| w[0].0 >= best)
            .all(|w| w[1].1 > w[0].1);
        shape_ok &= (best == 32 || best == 64) && rising;
        let pts: Vec<String> = curve.iter().map(|(b, r)| format!("{b}:{r:.4}")).collect();
        parts.push(format!("n={h} argmin L_b={best} [{}]", pts.join(" ")));
        for &b in &blocks {
            let m = BlockCirculantMatrix::random(h, h, b, 1.0, &mut rng)?;
            let w = SpectralWeights::new(&m)?;
            let x: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c = OpCounter::new();
            matvec_decoupled(&w, &x, &mut c)?;
            count_ok &= c.matvec_mults() == layer_mult_count(h, h, b)?;
        }
    }
    parts.push(format!("analytic count equals instrumented count {count_ok}"));
    Ok(verdict(6, "cost-curve shape", shape_ok && count_ok, parts.join("; ")))
}

/// Compression ratio equals `L_b`; the large projected LSTM fits 4 MB.
pub fn compression_arithmetic() -> Result<Verdict> {
    let mut exact = true;
    for (m, n) in [(512, 512), (1024, 512), (4096, 1536), (64, 128)] {
        for b in power_of_two_blocks(64) {
            let c = compression_ratio(m, n, b)?;
            exact &= c.dense == c.compressed * b as u64 && c.ratio() == b as f64;
        }
    }
    // 153 input features padded to the next multiple of the block size
    let spec = LayerSpec {
        cell: CellKind::Lstm,
        input_dim: 160,
        layer_sizes: vec![1024, 1024],
        projection: Some(512),
        output_dim: None,
        block_size: 8,
        io_block_size: None,
    };
    spec.validate()?;
    let bytes = model_storage_bytes(&spec, 12);
    let budget = 0.875 * (4u64 << 20) as f64;
    let fits = bytes as f64 <= budget;
    Ok(verdict(
        7,
        "compression arithmetic",
        exact && fits,
        format!(
            "ratio == L_b for all tested shapes {exact}; 2x1024 LSTM, projection 512, L_b=8: {bytes} bytes vs budget {budget:.0}"
        ),
    ))
}

/// Accuracy loss at 12 bits and monotone deviation from 8 to 16 bits.
pub fn quantization(fx: &CopyFixture, net: &Network) -> Result<Verdict> {
    let calib: Vec<Vec<Vec<f64>>> = fx.train.iter().take(64).map(|e| e.inputs.clone()).collect();
    let test_inputs: Vec<Vec<Vec<f64>>> = fx.test.iter().map(|e| e.inputs.clone()).collect();
    let float_acc = evaluate(&fx.test, |xs| net.forward(xs))?.accuracy();
    let mut devs = Vec::new();
    let mut acc12 = f64::NAN;
    for bits in 8..=16 {
        let cfg = QuantConfig {
            total_bits: bits,
            activation: ActivationMode::default(),
        };
        let q = QuantizedNetwork::calibrate(net, &calib, cfg)?;
        let (_, r) = quantized_inference(&q, &test_inputs)?;
        if bits == 12 {
            acc12 = evaluate(&fx.test, |xs| Ok(q.forward(xs)?.0))?.accuracy();
        }
        devs.push((bits, r.max_abs, r.mean_abs));
    }
    let degradation = float_acc - acc12;
    let monotone = devs.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].2 <= w[0].2);
    let table: Vec<String> = devs.iter().map(|(b, m, a)| format!("{b}:{m:.2e}/{a:.2e}")).collect();
    // diagnostic only: the same sweep without the PWL error floor
    let mut exact = Vec::new();
    for bits in 8..=16 {
        let cfg = QuantConfig {
            total_bits: bits,
            activation: ActivationMode::Exact,
        };
        let q = QuantizedNetwork::calibrate(net, &calib, cfg)?;
        exact.push(quantized_inference(&q, &test_inputs)?.1.max_abs);
    }
    let exact_monotone = exact.windows(2).all(|w| w[1] <= w[0]);
    Ok(verdict(
        8,
        "quantization",
        degradation < 0.005 && monotone,
        format!(
            "accuracy float {float_acc:.4} 12-bit {acc12:.4} (degradation {degradation:.4}); \
             PWL max/mean deviation [{}] monotone {monotone}; exact-activation max deviation monotone {exact_monotone} (not scored)",
            table.join(" ")
        ),
    ))
}

fn explorer_spec(rng: &mut ChaCha8Rng) -> LayerSpec {
    let width = 1usize << rng.gen_range(5..11);
    let lstm = rng.gen_bool(0.5);
    LayerSpec {
        cell: if lstm { CellKind::Lstm } else { CellKind::Gru },
        input_dim: 1usize << rng.gen_range(4..10),
        layer_sizes: vec![width; rng.gen_range(1..4)],
        projection: if lstm && rng.gen_bool(0.5) { Some(width / 2) } else { None },
        output_dim: if rng.gen_bool(0.7) { Some(1usize << rng.gen_range(3..9)) } else { None },
        block_size: 1,
        io_block_size: None,
    }
}

/// Oracle-call budget and capacity respected over random configurations
/// and oracle behaviours.
pub fn explorer_budget() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut runs, mut infeasible, mut max_calls, mut violations) = (0, 0, 0, 0);
    for trial in 0..600 {
        let spec = explorer_spec(&mut rng);
        let cfg = ExploreConfig {
            capacity_bytes: 1u64 << rng.gen_range(14..24),
            upper_bound: if rng.gen_bool(0.5) { 32 } else { 64 },
            tolerance: rng.gen_range(0.0..0.05),
            ..ExploreConfig::default()
        };
        let seed = rng.gen::<u64>();
        let mut orng = ChaCha8Rng::seed_from_u64(seed);
        let oracle = |s: &LayerSpec| -> Result<f64> {
            Ok(match trial % 4 {
                0 => 0.1,
                1 => 0.1 + 0.01 * s.block_size as f64,
                2 => orng.gen_range(0.0..1.0),
                _ => 0.1 + 0.004 * s.block_size as f64 + 0.002 * s.io_block() as f64 - 0.01 * (s.cell == CellKind::Gru) as u8 as f64,
            })
        };
        match phase1_explore(&spec, &cfg, oracle) {
            Ok(r) => {
                runs += 1;
                max_calls = max_calls.max(r.oracle_calls());
                let budget = (1.0 - cfg.reserve_fraction) * cfg.capacity_bytes as f64;
                if model_storage_bytes(&r.spec, cfg.bits) as f64 > budget || r.spec.validate().is_err() {
                    violations += 1;
                }
            }
            Err(Error::Infeasible(_)) => infeasible += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(verdict(
        9,
        "explorer budget",
        max_calls <= MAX_ORACLE_CALLS && violations == 0,
        format!("{runs} explorations ({infeasible} infeasible), max oracle calls {max_calls}, capacity violations {violations}"),
    ))
}

fn random_model(rng: &mut ChaCha8Rng) -> Result<ModelFile> {
    let block = 1usize << rng.gen_range(0..4);
    let lstm = rng.gen_bool(0.5);
    let width = block * rng.gen_range(1..5) * 2;
    let spec = LayerSpec {
        cell: if lstm { CellKind::Lstm } else { CellKind::Gru },
        input_dim: block * rng.gen_range(1..4),
        layer_sizes: vec![width; rng.gen_range(1..3)],
        projection: if lstm && rng.gen_bool(0.5) { Some(width / 2) } else { None },
        output_dim: if rng.gen_bool(0.5) { Some(block * rng.gen_range(1..3)) } else { None },
        block_size: block,
        io_block_size: None,
    };
    let act = if rng.gen_bool(0.5) { GateActivation::Sigmoid } else { GateActivation::Tanh };
    let net = DenseNetwork::random(&spec, act, rng)?.project()?;
    if rng.gen_bool(0.5) {
        return Ok(ModelFile::new(net));
    }
    let calib: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..5).map(|_| (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .collect();
    let cfg = QuantConfig {
        total_bits: rng.gen_range(4..=16),
        activation: ActivationMode::default(),
    };
    Ok(ModelFile::with_quantization(QuantizedNetwork::calibrate(&net, &calib, cfg)?))
}

/// write, read, write produces identical files.
pub fn serialization() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = std::env::temp_dir().join(format!("circrnn-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let mut identical = 0;
    for i in 0..50 {
        let m = random_model(&mut rng)?;
        let (a, b) = (dir.join(format!("{i}.a")), dir.join(format!("{i}.b")));
        m.write(&a)?;
        ModelFile::read(&a)?.write(&b)?;
        if std::fs::read(&a)? == std::fs::read(&b)? {
            identical += 1;
        }
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(verdict(
        10,
        "serialization",
        identical == 50,
        format!("{identical}/50 models byte-identical after write, read, write"),
    ))
}

/// Runs every check in order.
pub fn run_all() -> Vec<Verdict> {
    fn or_error(id: u32, name: &'static str, r: Result<Verdict>) -> Verdict {
        r.unwrap_or_else(|e| verdict(id, name, false, format!("error: {e}")))
    }
    let fx = CopyFixture::new();
    let mut out = vec![
        or_error(1, "fft-matvec equivalence", fft_matvec_equivalence()),
        or_error(2, "decoupling counts", decoupling_counts()),
        or_error(3, "projection optimality", projection_optimality()),
    ];
    let trained = match admm_structure_and_benefit(&fx) {
        Ok((v, o)) => {
            out.push(v);
            Some(o.network)
        }
        Err(e) => {
            out.push(verdict(4, "admm structure and benefit", false, format!("error: {e}")));
            None
        }
    };
    out.push(or_error(5, "gradient check", gradient_check()));
    out.push(or_error(6, "cost-curve shape", cost_curve_shape()));
    out.push(or_error(7, "compression arithmetic", compression_arithmetic()));
    out.push(match &trained {
        Some(net) => or_error(8, "quantization", quantization(&fx, net)),
        None => verdict(8, "quantization", false, "no trained model".into()),
    });
    out.push(or_error(9, "explorer budget", explorer_budget()));
    out.push(or_error(10, "serialization", serialization()));
    out
}
