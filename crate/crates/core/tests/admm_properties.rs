use circrnn::admm::{admm_train, dual_update, solve_subproblem1, solve_subproblem2, AdmmState, TrainConfig};
use circrnn::arch::{CellKind, GateActivation, LayerSpec};
use circrnn::circulant::BlockCirculantMatrix;
use circrnn::dense::DenseNetwork;
use circrnn::matrix::Matrix;
use circrnn::task::{Example, SyntheticTask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec(block: usize) -> LayerSpec {
    LayerSpec {
        cell: CellKind::Lstm,
        input_dim: 4,
        layer_sizes: vec![4],
        projection: None,
        output_dim: Some(4),
        block_size: block,
        io_block_size: None,
    }
}

fn copy_data(n: usize, seed: u64) -> Vec<Example> {
    let task = SyntheticTask::copy_memory(2, 2, 1, 4, 4);
    task.generate(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// State with random `W`, random structured `Z` and random `U`.
fn random_state(spec: &LayerSpec, rho: f64, seed: u64) -> AdmmState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DenseNetwork::random(spec, GateActivation::Sigmoid, &mut rng).unwrap();
    let mut st = AdmmState::new(w, rho).unwrap();
    for (k, s) in st.weights.matrix_shapes().iter().enumerate() {
        st.set_z(k, BlockCirculantMatrix::random(s.rows, s.cols, s.block, 0.5, &mut rng).unwrap());
        let u = (0..s.rows * s.cols).map(|_| rng.gen_range(-0.3..0.3)).collect();
        st.u[k] = Matrix::from_vec(s.rows, s.cols, u).unwrap();
    }
    st
}

fn distance_to_target(st: &AdmmState) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..st.z.len() {
        let target = st.z_dense(k).sub(&st.u[k]);
        let d = st.weights.matrix(k).sub(&target);
        num += d.dot(&d);
        den += target.dot(&target);
    }
    (num.sqrt(), den.sqrt())
}

#[test]
fn zero_loss_pulls_weights_onto_z_minus_u() {
    let mut data = copy_data(16, 3);
    for ex in &mut data {
        ex.targets.iter_mut().for_each(|t| *t = None);
    }
    let cfg = TrainConfig {
        epochs_per_iteration: 10,
        ..TrainConfig::default()
    };
    let mut st = random_state(&small_spec(2), 50.0, 5);
    solve_subproblem1(&mut st, &data, &cfg, cfg.learning_rate, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (d, n) = distance_to_target(&st);
    assert!(d < 0.01 * n, "{d} vs {n}");
}

#[test]
fn large_rho_pins_weights_to_z_minus_u() {
    let data = copy_data(32, 4);
    let cfg = TrainConfig {
        epochs_per_iteration: 2,
        ..TrainConfig::default()
    };
    let mut st = random_state(&small_spec(2), 1e6, 6);
    solve_subproblem1(&mut st, &data, &cfg, cfg.learning_rate, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (d, n) = distance_to_target(&st);
    assert!(d < 1e-3 * n, "{d} vs {n}");
}

#[test]
fn objective_gradient_matches_central_differences() {
    let spec = small_spec(2);
    let data = copy_data(4, 8);
    let mut st = random_state(&spec, 0.7, 9);
    assert!(st.weights.param_count() <= 500);
    let (_, grad) = st.objective_and_grad(&data).unwrap();
    let h = 1e-5;
    let mut fd = vec![0.0; grad.len()];
    for i in 0..grad.len() {
        let orig = st.weights.params()[i];
        st.weights.params_mut()[i] = orig + h;
        let up = st.objective(&data).unwrap();
        st.weights.params_mut()[i] = orig - h;
        let down = st.objective(&data).unwrap();
        st.weights.params_mut()[i] = orig;
        fd[i] = (up - down) / (2.0 * h);
    }
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff <= 1e-5 * scale, "relative gradient error {}", diff / scale);
}

#[test]
fn z_update_is_closest_structured_matrix() {
    let spec = small_spec(2);
    let mut st = random_state(&spec, 1.0, 10);
    solve_subproblem2(&mut st).unwrap();
    assert!(st.z_is_structured());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (k, s) in st.weights.matrix_shapes().iter().enumerate() {
        let target = st.weights.matrix(k).add(&st.u[k]);
        let best = target.sub(st.z_dense(k)).frobenius_norm();
        for _ in 0..1000 {
            let c = BlockCirculantMatrix::random(s.rows, s.cols, s.block, 1.0, &mut rng).unwrap();
            assert!(best <= target.sub(&c.expand_to_dense()).frobenius_norm());
        }
    }
    // U absorbs the remaining gap
    let before: Vec<Matrix> = st.u.clone();
    dual_update(&mut st);
    for k in 0..st.u.len() {
        let expect = before[k].add(&st.weights.matrix(k).sub(st.z_dense(k)));
        assert!(st.u[k].max_abs_diff(&expect) == 0.0);
    }
}

#[test]
fn fixed_seed_reproduces_trace_exactly() {
    let data = copy_data(32, 12);
    let cfg = TrainConfig {
        max_iterations: 6,
        epochs_per_iteration: 2,
        ..TrainConfig::default()
    };
    let a = admm_train(&small_spec(2), GateActivation::Sigmoid, &data, &cfg).unwrap();
    let b = admm_train(&small_spec(2), GateActivation::Sigmoid, &data, &cfg).unwrap();
    assert_eq!(a.trace_text(), b.trace_text());
    assert_eq!(a.network, b.network);
    assert!(a.trace.iter().all(|r| r.z_structured));
}
