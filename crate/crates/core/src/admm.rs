//! ADMM training toward block-circulant weights.
//!
//! The structured problem `min f(W) s.t. W_l block-circulant` is split into
//!
//! 1. `W^{k+1} = argmin f(W) + Σ ρ_l/2 ‖W_l − Z_l^k + U_l^k‖²`, solved
//!    approximately with minibatch SGD,
//! 2. `Z_l^{k+1} = Π(W_l^{k+1} + U_l^k)`, the Euclidean projection,
//! 3. `U_l^{k+1} = U_l^k + W_l^{k+1} − Z_l^{k+1}`,
//!
//! repeated until `‖W_l − Z_l‖_F / ‖W_l‖_F < ε` for every matrix. Biases and
//! peephole diagonals are unconstrained.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{GateActivation, LayerSpec};
use crate::circulant::{project_to_block_circulant, BlockCirculantMatrix};
use crate::dense::DenseNetwork;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rnn::{Network, Parameters};
use crate::task::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Learning rate is multiplied by this after every ADMM iteration.
    pub lr_decay: f64,
    /// Momentum for SGD (ignored by Adam).
    pub momentum: f64,
    pub batch_size: usize,
    /// SGD epochs spent on subproblem 1 per ADMM iteration.
    pub epochs_per_iteration: usize,
    pub max_iterations: usize,
    /// Relative residual `‖W − Z‖_F / ‖W‖_F` that counts as converged.
    pub tolerance: f64,
    pub rho: f64,
    /// ρ is multiplied by this after every iteration, up to `rho_max`.
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Gradient norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.02,
            lr_decay: 0.97,
            momentum: 0.9,
            batch_size: 16,
            epochs_per_iteration: 12,
            max_iterations: 50,
            tolerance: 1e-3,
            rho: 0.01,
            rho_growth: 1.5,
            rho_max: 1e4,
            grad_clip: 5.0,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lr_decay", self.lr_decay),
            ("tolerance", self.tolerance),
            ("rho_growth", self.rho_growth),
            ("rho_max", self.rho_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.grad_clip < 0.0 {
            return Err(Error::Config("rho >= 0, momentum in [0, 1) and grad_clip >= 0 required".into()));
        }
        if self.batch_size == 0 || self.epochs_per_iteration == 0 || self.max_iterations == 0 {
            return Err(Error::Config("batch_size, epochs_per_iteration and max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer memory carried across subproblem-1 solves.
#[derive(Debug, Clone)]
struct OptimizerState {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        OptimizerState {
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    /// Turns a loss gradient into an update direction (to be scaled by `-lr`).
    fn direction(&mut self, grad: &[f64], cfg: &TrainConfig) -> Vec<f64> {
        self.steps += 1;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (m, g) in self.first.iter_mut().zip(grad) {
                    *m = cfg.momentum * *m + g;
                }
                self.first.clone()
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                let c1 = 1.0 - B1.powi(self.steps as i32);
                let c2 = 1.0 - B2.powi(self.steps as i32);
                self.first
                    .iter_mut()
                    .zip(self.second.iter_mut())
                    .zip(grad)
                    .map(|((m, v), g)| {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        (*m / c1) / ((*v / c2).sqrt() + 1e-8)
                    })
                    .collect()
            }
        }
    }
}

/// Per-matrix ADMM variables plus the dense network holding `W`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub weights: DenseNetwork,
    pub z: Vec<BlockCirculantMatrix>,
    /// Dense expansions of `z`, kept in sync.
    z_dense: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub rho: Vec<f64>,
    pub k: usize,
    optimizer: OptimizerState,
}

impl AdmmState {
    /// `Z⁰ = Π(W⁰)`, `U⁰ = 0`.
    pub fn new(weights: DenseNetwork, rho: f64) -> Result<Self> {
        let shapes = weights.matrix_shapes();
        let mut z = Vec::with_capacity(shapes.len());
        let mut u = Vec::with_capacity(shapes.len());
        for (k, s) in shapes.iter().enumerate() {
            z.push(project_to_block_circulant(&weights.matrix(k), s.block)?);
            u.push(Matrix::zeros(s.rows, s.cols));
        }
        let z_dense = z.iter().map(BlockCirculantMatrix::expand_to_dense).collect();
        let n = weights.param_count();
        Ok(AdmmState {
            weights,
            z,
            z_dense,
            u,
            rho: vec![rho; shapes.len()],
            k: 0,
            optimizer: OptimizerState::new(n),
        })
    }

    pub fn z_dense(&self, k: usize) -> &Matrix {
        &self.z_dense[k]
    }

    /// Replaces `Z_k`; the matrix must already be block-circulant.
    pub fn set_z(&mut self, k: usize, z: BlockCirculantMatrix) {
        self.z_dense[k] = z.expand_to_dense();
        self.z[k] = z;
    }

    /// `‖W_l − Z_l‖_F / ‖W_l‖_F` per matrix.
    pub fn residuals(&self) -> Vec<f64> {
        (0..self.z.len())
            .map(|k| {
                let w = self.weights.matrix(k);
                let norm = w.frobenius_norm();
                let r = w.sub(&self.z_dense[k]).frobenius_norm();
                if norm > 0.0 {
                    r / norm
                } else {
                    r
                }
            })
            .collect()
    }

    /// `Σ ρ_l/2 ‖W_l − Z_l + U_l‖²`.
    pub fn penalty(&self) -> f64 {
        (0..self.z.len())
            .map(|k| {
                let d = self.weights.matrix(k).sub(&self.z_dense[k]).add(&self.u[k]);
                0.5 * self.rho[k] * d.dot(&d)
            })
            .sum()
    }

    /// `sqrt(Σ‖W_l − Z_l‖²) / sqrt(Σ‖W_l‖²)`.
    pub fn total_residual(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..self.z.len() {
            let w = self.weights.matrix(k);
            let d = w.sub(&self.z_dense[k]);
            num += d.dot(&d);
            den += w.dot(&w);
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    /// Subproblem-1 objective on `batch` and its gradient.
    pub fn objective_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        let (loss, mut grad) = self.weights.loss_and_grad(batch)?;
        self.add_penalty_grad(&mut grad);
        Ok((loss + self.penalty(), grad))
    }

    pub fn objective(&self, examples: &[Example]) -> Result<f64> {
        Ok(self.weights.loss(examples)? + self.penalty())
    }

    fn add_penalty_grad(&self, grad: &mut [f64]) {
        let w = self.weights.params();
        for k in 0..self.z.len() {
            let range = self.weights.matrix_range(k);
            let (z, u, rho) = (self.z_dense[k].as_slice(), self.u[k].as_slice(), self.rho[k]);
            for (i, idx) in range.enumerate() {
                grad[idx] += rho * (w[idx] - z[i] + u[i]);
            }
        }
    }

    /// Block-circulant network built from `Z` and the current vectors.
    pub fn structured_network(&self) -> Result<Network> {
        let mut net = self.weights.project()?.parameters();
        net.matrices = self.z.clone();
        Network::from_parameters(self.weights.spec(), self.weights.cell_input(), net)
    }

    /// Whether every `Z_l` is exactly block-circulant (no tolerance).
    pub fn z_is_structured(&self) -> bool {
        self.weights
            .matrix_shapes()
            .iter()
            .zip(&self.z_dense)
            .all(|(s, z)| BlockCirculantMatrix::is_block_circulant(z, s.block))
    }
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// One optimizer step on the subproblem-1 objective.
///
/// The loss part goes through the configured optimizer; the quadratic
/// penalty is applied as its exact proximal map, which stays stable for any
/// `lr·ρ`.
fn sgd_step(state: &mut AdmmState, batch: &[Example], lr: f64, cfg: &TrainConfig) -> Result<f64> {
    let (loss, mut grad) = state.weights.loss_and_grad(batch)?;
    clip(&mut grad, cfg.grad_clip);
    let dir = state.optimizer.direction(&grad, cfg);
    let w = state.weights.params_mut();
    for (p, d) in w.iter_mut().zip(&dir) {
        *p -= lr * d;
    }
    for k in 0..state.z.len() {
        let range = state.weights.matrix_range(k);
        let (z, u) = (state.z_dense[k].as_slice(), state.u[k].as_slice());
        let a = lr * state.rho[k];
        let w = state.weights.params_mut();
        for (i, idx) in range.enumerate() {
            w[idx] = (w[idx] + a * (z[i] - u[i])) / (1.0 + a);
        }
    }
    Ok(loss)
}

/// Approximately minimizes the subproblem-1 objective over `data` with
/// `epochs` passes of minibatch SGD. Returns the mean minibatch loss of the
/// last epoch.
pub fn solve_subproblem1(
    state: &mut AdmmState,
    data: &[Example],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = 0.0;
    for _ in 0..cfg.epochs_per_iteration {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let loss = match sgd_step(state, &batch, lr, cfg) {
                Ok(l) if l.is_finite() => l,
                Ok(_) | Err(Error::Numeric(_)) => {
                    return Err(Error::Divergence {
                        iteration: state.k,
                        last_objective: last,
                    })
                }
                Err(e) => return Err(e),
            };
            total += loss;
            batches += 1;
        }
        last = total / batches as f64;
    }
    Ok(last)
}

/// `Z_l = Π(W_l + U_l)` for every matrix.
pub fn solve_subproblem2(state: &mut AdmmState) -> Result<()> {
    let shapes = state.weights.matrix_shapes();
    for (k, s) in shapes.iter().enumerate() {
        let target = state.weights.matrix(k).add(&state.u[k]);
        let z = project_to_block_circulant(&target, s.block)?;
        state.set_z(k, z);
    }
    Ok(())
}

/// `U_l += W_l − Z_l`.
pub fn dual_update(state: &mut AdmmState) {
    for k in 0..state.u.len() {
        let w = state.weights.matrix(k);
        let z = state.z_dense[k].as_slice();
        for ((u, wv), zv) in state.u[k].as_mut_slice().iter_mut().zip(w.as_slice()).zip(z) {
            *u += wv - zv;
        }
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// Subproblem-1 objective over the full training set after the W update.
    pub objective: f64,
    pub loss: f64,
    pub rho: f64,
    /// Model-wide `sqrt(Σ‖W_l − Z_l‖²) / sqrt(Σ‖W_l‖²)`.
    pub residual: f64,
    pub residuals: Vec<f64>,
    /// Exact structure check of every `Z_l` after the projection.
    pub z_structured: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Structured model built from the final `Z`.
    pub network: Network,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl TrainOutcome {
    /// Line-oriented trace: a schema header, then one tab-separated record
    /// per iteration.
    pub fn trace_text(&self) -> String {
        render_trace(&self.trace)
    }
}

pub fn render_trace(trace: &[TraceRecord]) -> String {
    let mut s = String::from(
        "#schema k\tobjective\tloss\trho\tresidual\tstructured\tresiduals(comma-separated per matrix)\n",
    );
    for r in trace {
        let res: Vec<String> = r.residuals.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(
            s,
            "{}\t{:.9e}\t{:.9e}\t{:.6e}\t{:.6e}\t{}\t{}",
            r.k,
            r.objective,
            r.loss,
            r.rho,
            r.residual,
            r.z_structured,
            res.join(",")
        );
    }
    s
}

/// Runs the full ADMM loop from the given initial dense weights.
pub fn admm_train_from(initial: DenseNetwork, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdmmState::new(initial, cfg.rho)?;
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut lr = cfg.learning_rate;
    let mut converged = false;
    let mut last_objective = f64::NAN;
    for k in 0..cfg.max_iterations {
        state.k = k;
        solve_subproblem1(&mut state, data, cfg, lr, &mut rng)?;
        let objective = state.objective(data).map_err(|_| Error::Divergence {
            iteration: k,
            last_objective,
        })?;
        if !objective.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                last_objective,
            });
        }
        last_objective = objective;
        let loss = state.weights.loss(data)?;
        solve_subproblem2(&mut state)?;
        dual_update(&mut state);
        let residuals = state.residuals();
        trace.push(TraceRecord {
            k: k + 1,
            objective,
            loss,
            rho: state.rho[0],
            residual: state.total_residual(),
            residuals: residuals.clone(),
            z_structured: state.z_is_structured(),
        });
        if residuals.iter().all(|r| *r < cfg.tolerance) {
            converged = true;
            break;
        }
        lr *= cfg.lr_decay;
        for (k, rho) in state.rho.iter_mut().enumerate() {
            let next = (*rho * cfg.rho_growth).min(cfg.rho_max);
            if *rho > 0.0 {
                // U is the scaled dual λ/ρ
                let s = *rho / next;
                state.u[k].as_mut_slice().iter_mut().for_each(|u| *u *= s);
            }
            *rho = next;
        }
    }
    Ok(TrainOutcome {
        network: state.structured_network()?,
        iterations: trace.len(),
        trace,
        converged,
    })
}

/// ADMM training from a seeded random initialization.
pub fn admm_train(spec: &LayerSpec, cell_input: GateActivation, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let init = DenseNetwork::random(spec, cell_input, &mut rng)?;
    admm_train_from(init, data, cfg)
}

/// Unconstrained training with the same epoch budget and learning-rate
/// schedule as [`admm_train`], for comparisons against one-shot projection.
pub fn train_unconstrained(
    spec: &LayerSpec,
    cell_input: GateActivation,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<DenseNetwork> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let init = DenseNetwork::random(spec, cell_input, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdmmState::new(init, 0.0)?;
    let mut lr = cfg.learning_rate;
    for k in 0..cfg.max_iterations {
        state.k = k;
        solve_subproblem1(&mut state, data, cfg, lr, &mut rng)?;
        lr *= cfg.lr_decay;
    }
    Ok(state.weights)
}

/// Copies vectors and structured matrices into a [`Parameters`] set.
pub fn parameters_of(state: &AdmmState) -> Result<Parameters> {
    Ok(state.structured_network()?.parameters())
}
