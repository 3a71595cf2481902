//! Dense-weight LSTM/GRU networks with backpropagation through time.
//!
//! Training works on unconstrained dense matrices; structure is imposed by
//! the ADMM loop in [`crate::admm`]. The same code doubles as the dense
//! reference for checking the block-circulant inference path.

use rand::Rng;

use crate::arch::{CellKind, GateActivation, LayerSpec, MatrixRole, MatrixShape, VectorRole};
use crate::circulant::project_to_block_circulant;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rnn::{sigmoid, Network, Parameters};
use crate::task::{example_loss, Example};

#[derive(Debug, Clone, Copy)]
struct Span {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Span {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter layout: matrices first, then vectors, in spec order.
#[derive(Debug, Clone)]
struct Layout {
    matrices: Vec<Span>,
    vectors: Vec<Span>,
    total: usize,
}

impl Layout {
    fn new(spec: &LayerSpec) -> Self {
        let mut offset = 0;
        let matrices = spec
            .matrices()
            .iter()
            .map(|m| {
                let s = Span {
                    offset,
                    rows: m.rows,
                    cols: m.cols,
                };
                offset += s.len();
                s
            })
            .collect();
        let vectors = spec
            .vectors()
            .iter()
            .map(|v| {
                let s = Span {
                    offset,
                    rows: v.len,
                    cols: 1,
                };
                offset += s.len();
                s
            })
            .collect();
        Layout {
            matrices,
            vectors,
            total: offset,
        }
    }
}

/// `out = W x` for the matrix stored at `s`.
fn mv(p: &[f64], s: Span, x: &[f64]) -> Vec<f64> {
    let w = &p[s.range()];
    (0..s.rows)
        .map(|i| w[i * s.cols..(i + 1) * s.cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `dx += Wᵀ dy` and `dW += dy xᵀ`.
fn mv_backward(p: &[f64], grad: &mut [f64], s: Span, x: &[f64], dy: &[f64], dx: &mut [f64]) {
    let w = &p[s.range()];
    let gw = &mut grad[s.range()];
    for i in 0..s.rows {
        let d = dy[i];
        if d == 0.0 {
            continue;
        }
        let row = &w[i * s.cols..(i + 1) * s.cols];
        let grow = &mut gw[i * s.cols..(i + 1) * s.cols];
        for j in 0..s.cols {
            dx[j] += row[j] * d;
            grow[j] += d * x[j];
        }
    }
}

fn dsigmoid(y: f64) -> f64 {
    y * (1.0 - y)
}

fn dtanh(y: f64) -> f64 {
    1.0 - y * y
}

/// Per-step values kept for the backward pass of an LSTM layer.
struct LstmCache {
    u: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    m: Vec<f64>,
}

struct GruCache {
    u: Vec<f64>,
    x: Vec<f64>,
    c_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    rc: Vec<f64>,
    cand: Vec<f64>,
}

enum LayerCache {
    Lstm(Vec<LstmCache>),
    Gru(Vec<GruCache>),
}

/// LSTM/GRU network whose matrices are stored densely.
#[derive(Debug, Clone)]
pub struct DenseNetwork {
    spec: LayerSpec,
    cell_input: GateActivation,
    layout: Layout,
    params: Vec<f64>,
    /// Index of each (layer, role) matrix and vector inside the layout.
    mat_index: Vec<(usize, MatrixRole)>,
    vec_index: Vec<(usize, VectorRole)>,
}

impl DenseNetwork {
    pub fn zeros(spec: &LayerSpec, cell_input: GateActivation) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(spec);
        Ok(DenseNetwork {
            spec: spec.clone(),
            cell_input,
            params: vec![0.0; layout.total],
            layout,
            mat_index: spec.matrices().iter().map(|m| (m.layer, m.role)).collect(),
            vec_index: spec.vectors().iter().map(|v| (v.layer, v.role)).collect(),
        })
    }

    /// Uniform initialization in `±1/sqrt(cols)` for matrices; forget-gate
    /// biases start at 1, everything else at 0.
    pub fn random<R: Rng + ?Sized>(spec: &LayerSpec, cell_input: GateActivation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec, cell_input)?;
        for s in net.layout.matrices.clone() {
            let a = 1.0 / (s.cols as f64).sqrt();
            for v in &mut net.params[s.range()] {
                *v = rng.gen_range(-a..a);
            }
        }
        for (k, &(_, role)) in net.vec_index.clone().iter().enumerate() {
            if role == VectorRole::BiasForget {
                let s = net.layout.vectors[k];
                net.params[s.range()].fill(1.0);
            }
        }
        Ok(net)
    }

    /// Dense expansion of a block-circulant network.
    pub fn from_network(net: &Network) -> Result<Self> {
        let mut d = Self::zeros(net.spec(), net.cell_input())?;
        d.set_from_parameters(&net.parameters());
        Ok(d)
    }

    pub fn set_from_parameters(&mut self, p: &Parameters) {
        for (k, m) in p.matrices.iter().enumerate() {
            let s = self.layout.matrices[k];
            self.params[s.range()].copy_from_slice(m.expand_to_dense().as_slice());
        }
        for (k, v) in p.vectors.iter().enumerate() {
            let s = self.layout.vectors[k];
            self.params[s.range()].copy_from_slice(v);
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn cell_input(&self) -> GateActivation {
        self.cell_input
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn matrix_count(&self) -> usize {
        self.layout.matrices.len()
    }

    pub fn matrix_shapes(&self) -> Vec<MatrixShape> {
        self.spec.matrices()
    }

    /// Offset range of matrix `k` inside the flat parameter vector.
    pub fn matrix_range(&self, k: usize) -> std::ops::Range<usize> {
        self.layout.matrices[k].range()
    }

    pub fn matrix(&self, k: usize) -> Matrix {
        let s = self.layout.matrices[k];
        Matrix::from_vec(s.rows, s.cols, self.params[s.range()].to_vec()).expect("layout shape")
    }

    pub fn set_matrix(&mut self, k: usize, m: &Matrix) {
        let s = self.layout.matrices[k];
        assert_eq!((m.rows(), m.cols()), (s.rows, s.cols));
        self.params[s.range()].copy_from_slice(m.as_slice());
    }

    fn vector(&self, k: usize) -> &[f64] {
        &self.params[self.layout.vectors[k].range()]
    }

    /// Projects every matrix onto its block-circulant set; vectors are kept.
    pub fn project(&self) -> Result<Network> {
        let shapes = self.spec.matrices();
        let matrices = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| project_to_block_circulant(&self.matrix(k), s.block))
            .collect::<Result<_>>()?;
        let vectors = (0..self.layout.vectors.len()).map(|k| self.vector(k).to_vec()).collect();
        Network::from_parameters(&self.spec, self.cell_input, Parameters { matrices, vectors })
    }

    fn mat(&self, layer: usize, role: MatrixRole) -> Option<Span> {
        self.mat_index
            .iter()
            .position(|&(l, r)| l == layer && r == role)
            .map(|k| self.layout.matrices[k])
    }

    fn vec_span(&self, layer: usize, role: VectorRole) -> Span {
        let k = self
            .vec_index
            .iter()
            .position(|&(l, r)| l == layer && r == role)
            .expect("vector in layout");
        self.layout.vectors[k]
    }

    fn g_act(&self, v: f64) -> f64 {
        match self.cell_input {
            GateActivation::Sigmoid => sigmoid(v),
            GateActivation::Tanh => v.tanh(),
        }
    }

    fn g_deriv(&self, y: f64) -> f64 {
        match self.cell_input {
            GateActivation::Sigmoid => dsigmoid(y),
            GateActivation::Tanh => dtanh(y),
        }
    }

    fn lstm_forward(&self, l: usize, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<LstmCache>) {
        let p = &self.params;
        let h = self.spec.layer_sizes[l];
        let gates = self.mat(l, MatrixRole::LstmGates).expect("gates");
        let proj = self.mat(l, MatrixRole::LstmProjection);
        let v = |role| &p[self.vec_span(l, role).range()];
        let (pi, pf, po) = (
            v(VectorRole::PeepholeInput),
            v(VectorRole::PeepholeForget),
            v(VectorRole::PeepholeOutput),
        );
        let (bi, bf, bc, bo) = (
            v(VectorRole::BiasInput),
            v(VectorRole::BiasForget),
            v(VectorRole::BiasCell),
            v(VectorRole::BiasOutput),
        );
        let out_dim = self.spec.layer_output_dim(l);
        let mut c_prev = vec![0.0; h];
        let mut y_prev = vec![0.0; out_dim];
        let mut outs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let mut u = x.clone();
            u.extend_from_slice(&y_prev);
            let z = mv(p, gates, &u);
            let mut cache = LstmCache {
                u,
                c_prev: c_prev.clone(),
                i: vec![0.0; h],
                f: vec![0.0; h],
                g: vec![0.0; h],
                o: vec![0.0; h],
                c: vec![0.0; h],
                tanh_c: vec![0.0; h],
                m: vec![0.0; h],
            };
            for j in 0..h {
                let i = sigmoid(z[j] + pi[j] * c_prev[j] + bi[j]);
                let f = sigmoid(z[h + j] + pf[j] * c_prev[j] + bf[j]);
                let g = self.g_act(z[2 * h + j] + bc[j]);
                let c = f * c_prev[j] + g * i;
                let o = sigmoid(z[3 * h + j] + po[j] * c + bo[j]);
                let tc = c.tanh();
                cache.i[j] = i;
                cache.f[j] = f;
                cache.g[j] = g;
                cache.o[j] = o;
                cache.c[j] = c;
                cache.tanh_c[j] = tc;
                cache.m[j] = o * tc;
            }
            let y = match proj {
                Some(s) => mv(p, s, &cache.m),
                None => cache.m.clone(),
            };
            c_prev = cache.c.clone();
            y_prev = y.clone();
            outs.push(y);
            caches.push(cache);
        }
        (outs, caches)
    }

    /// Returns the gradient with respect to the layer inputs.
    fn lstm_backward(&self, l: usize, caches: &[LstmCache], dys: &[Vec<f64>], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let p = &self.params;
        let h = self.spec.layer_sizes[l];
        let x_dim = self.spec.layer_input_dim(l);
        let gates = self.mat(l, MatrixRole::LstmGates).expect("gates");
        let proj = self.mat(l, MatrixRole::LstmProjection);
        let spans = [
            VectorRole::PeepholeInput,
            VectorRole::PeepholeForget,
            VectorRole::PeepholeOutput,
            VectorRole::BiasInput,
            VectorRole::BiasForget,
            VectorRole::BiasCell,
            VectorRole::BiasOutput,
        ]
        .map(|r| self.vec_span(l, r));
        let [spi, spf, spo, sbi, sbf, sbc, sbo] = spans;
        let (pi, pf, po) = (&p[spi.range()], &p[spf.range()], &p[spo.range()]);

        let out_dim = self.spec.layer_output_dim(l);
        let mut dy_rec = vec![0.0; out_dim];
        let mut dc_next = vec![0.0; h];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let k = &caches[t];
            let dy: Vec<f64> = dys[t].iter().zip(&dy_rec).map(|(a, b)| a + b).collect();
            let dm = match proj {
                Some(s) => {
                    let mut dm = vec![0.0; h];
                    mv_backward(p, grad, s, &k.m, &dy, &mut dm);
                    dm
                }
                None => dy,
            };
            let mut dz = vec![0.0; 4 * h];
            let mut dc_prev = vec![0.0; h];
            for j in 0..h {
                let dao = dm[j] * k.tanh_c[j] * dsigmoid(k.o[j]);
                let dc = dc_next[j] + dm[j] * k.o[j] * dtanh(k.tanh_c[j]) + dao * po[j];
                let dai = dc * k.g[j] * dsigmoid(k.i[j]);
                let daf = dc * k.c_prev[j] * dsigmoid(k.f[j]);
                let dag = dc * k.i[j] * self.g_deriv(k.g[j]);
                grad[spo.offset + j] += dao * k.c[j];
                grad[spi.offset + j] += dai * k.c_prev[j];
                grad[spf.offset + j] += daf * k.c_prev[j];
                grad[sbi.offset + j] += dai;
                grad[sbf.offset + j] += daf;
                grad[sbc.offset + j] += dag;
                grad[sbo.offset + j] += dao;
                dc_prev[j] = dc * k.f[j] + dai * pi[j] + daf * pf[j];
                dz[j] = dai;
                dz[h + j] = daf;
                dz[2 * h + j] = dag;
                dz[3 * h + j] = dao;
            }
            let mut du = vec![0.0; gates.cols];
            mv_backward(p, grad, gates, &k.u, &dz, &mut du);
            dy_rec = du.split_off(x_dim);
            dxs[t] = du;
            dc_next = dc_prev;
        }
        dxs
    }

    fn gru_forward(&self, l: usize, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<GruCache>) {
        let p = &self.params;
        let h = self.spec.layer_sizes[l];
        let gates = self.mat(l, MatrixRole::GruGates).expect("gates");
        let cin = self.mat(l, MatrixRole::GruCandidateInput).expect("candidate input");
        let crec = self.mat(l, MatrixRole::GruCandidateRecurrent).expect("candidate recurrent");
        let br = &p[self.vec_span(l, VectorRole::BiasReset).range()];
        let bz = &p[self.vec_span(l, VectorRole::BiasUpdate).range()];
        let bc = &p[self.vec_span(l, VectorRole::BiasCandidate).range()];
        let mut c_prev = vec![0.0; h];
        let mut outs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let mut u = x.clone();
            u.extend_from_slice(&c_prev);
            let a = mv(p, gates, &u);
            let r: Vec<f64> = (0..h).map(|j| sigmoid(a[j] + br[j])).collect();
            let z: Vec<f64> = (0..h).map(|j| sigmoid(a[h + j] + bz[j])).collect();
            let rc: Vec<f64> = r.iter().zip(&c_prev).map(|(r, c)| r * c).collect();
            let cx = mv(p, cin, x);
            let cc = mv(p, crec, &rc);
            let cand: Vec<f64> = (0..h).map(|j| (cx[j] + cc[j] + bc[j]).tanh()).collect();
            let c: Vec<f64> = (0..h).map(|j| (1.0 - z[j]) * c_prev[j] + z[j] * cand[j]).collect();
            caches.push(GruCache {
                u,
                x: x.clone(),
                c_prev: std::mem::replace(&mut c_prev, c.clone()),
                r,
                z,
                rc,
                cand,
            });
            outs.push(c);
        }
        (outs, caches)
    }

    fn gru_backward(&self, l: usize, caches: &[GruCache], dys: &[Vec<f64>], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let p = &self.params;
        let h = self.spec.layer_sizes[l];
        let x_dim = self.spec.layer_input_dim(l);
        let gates = self.mat(l, MatrixRole::GruGates).expect("gates");
        let cin = self.mat(l, MatrixRole::GruCandidateInput).expect("candidate input");
        let crec = self.mat(l, MatrixRole::GruCandidateRecurrent).expect("candidate recurrent");
        let sbr = self.vec_span(l, VectorRole::BiasReset);
        let sbz = self.vec_span(l, VectorRole::BiasUpdate);
        let sbc = self.vec_span(l, VectorRole::BiasCandidate);
        let mut dc_next = vec![0.0; h];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let k = &caches[t];
            let dc: Vec<f64> = dys[t].iter().zip(&dc_next).map(|(a, b)| a + b).collect();
            let mut dc_prev = vec![0.0; h];
            let mut dac = vec![0.0; h];
            let mut da = vec![0.0; 2 * h];
            for j in 0..h {
                da[h + j] = dc[j] * (k.cand[j] - k.c_prev[j]) * dsigmoid(k.z[j]);
                dac[j] = dc[j] * k.z[j] * dtanh(k.cand[j]);
                dc_prev[j] = dc[j] * (1.0 - k.z[j]);
                grad[sbc.offset + j] += dac[j];
                grad[sbz.offset + j] += da[h + j];
            }
            let mut dx = vec![0.0; x_dim];
            mv_backward(p, grad, cin, &k.x, &dac, &mut dx);
            let mut drc = vec![0.0; h];
            mv_backward(p, grad, crec, &k.rc, &dac, &mut drc);
            for j in 0..h {
                dc_prev[j] += drc[j] * k.r[j];
                da[j] = drc[j] * k.c_prev[j] * dsigmoid(k.r[j]);
                grad[sbr.offset + j] += da[j];
            }
            let mut du = vec![0.0; gates.cols];
            mv_backward(p, grad, gates, &k.u, &da, &mut du);
            for (a, b) in dc_prev.iter_mut().zip(&du[x_dim..]) {
                *a += b;
            }
            for (a, b) in dx.iter_mut().zip(&du[..x_dim]) {
                *a += b;
            }
            dxs[t] = dx;
            dc_next = dc_prev;
        }
        dxs
    }

    fn readout(&self) -> Option<(Span, Span)> {
        let l = self.spec.num_layers();
        let m = self.mat(l, MatrixRole::Readout)?;
        Some((m, self.vec_span(l, VectorRole::ReadoutBias)))
    }

    fn forward_cached(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<LayerCache>)> {
        if xs.is_empty() {
            return Err(Error::dim("empty input sequence"));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.spec.input_dim) {
            return Err(Error::dim(format!(
                "model input: expected length {}, got {}",
                self.spec.input_dim,
                x.len()
            )));
        }
        let mut layer_inputs = Vec::with_capacity(self.spec.num_layers() + 1);
        let mut caches = Vec::with_capacity(self.spec.num_layers());
        let mut h = xs.to_vec();
        for l in 0..self.spec.num_layers() {
            let (out, cache) = match self.spec.cell {
                CellKind::Lstm => {
                    let (o, c) = self.lstm_forward(l, &h);
                    (o, LayerCache::Lstm(c))
                }
                CellKind::Gru => {
                    let (o, c) = self.gru_forward(l, &h);
                    (o, LayerCache::Gru(c))
                }
            };
            layer_inputs.push(std::mem::replace(&mut h, out));
            caches.push(cache);
        }
        layer_inputs.push(h.clone());
        let outputs = match self.readout() {
            Some((m, b)) => h
                .iter()
                .map(|v| {
                    let mut o = mv(&self.params, m, v);
                    for (o, b) in o.iter_mut().zip(&self.params[b.range()]) {
                        *o += b;
                    }
                    o
                })
                .collect(),
            None => h,
        };
        if outputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dense forward pass".into()));
        }
        Ok((outputs, layer_inputs, caches))
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_cached(xs)?.0)
    }

    /// Backpropagates `d_outputs` through time; accumulates into `grad`.
    pub fn backward(&self, xs: &[Vec<f64>], d_outputs: &[Vec<f64>], grad: &mut [f64]) -> Result<()> {
        let (_, layer_inputs, caches) = self.forward_cached(xs)?;
        self.backward_from(&layer_inputs, &caches, d_outputs, grad);
        Ok(())
    }

    fn backward_from(&self, layer_inputs: &[Vec<Vec<f64>>], caches: &[LayerCache], d_outputs: &[Vec<f64>], grad: &mut [f64]) {
        let top = &layer_inputs[self.spec.num_layers()];
        let mut d = match self.readout() {
            Some((m, b)) => top
                .iter()
                .zip(d_outputs)
                .map(|(hv, dout)| {
                    let mut dh = vec![0.0; m.cols];
                    mv_backward(&self.params, grad, m, hv, dout, &mut dh);
                    for (g, v) in grad[b.range()].iter_mut().zip(dout) {
                        *g += v;
                    }
                    dh
                })
                .collect(),
            None => d_outputs.to_vec(),
        };
        for l in (0..self.spec.num_layers()).rev() {
            d = match &caches[l] {
                LayerCache::Lstm(c) => self.lstm_backward(l, c, &d, grad),
                LayerCache::Gru(c) => self.gru_backward(l, c, &d, grad),
            };
        }
    }

    /// Mean task loss over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for ex in batch {
            let (out, layer_inputs, caches) = self.forward_cached(&ex.inputs)?;
            let (l, mut d) = example_loss(&out, ex)?;
            loss += l * scale;
            for v in d.iter_mut().flatten() {
                *v *= scale;
            }
            self.backward_from(&layer_inputs, &caches, &d, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Mean task loss over `examples`.
    pub fn loss(&self, examples: &[Example]) -> Result<f64> {
        let mut loss = 0.0;
        for ex in examples {
            loss += example_loss(&self.forward(&ex.inputs)?, ex)?.0;
        }
        Ok(loss / examples.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::SyntheticTask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(cell: CellKind, proj: Option<usize>) -> LayerSpec {
        LayerSpec {
            cell,
            input_dim: 4,
            layer_sizes: vec![4, 4],
            projection: proj,
            output_dim: Some(4),
            block_size: 2,
            io_block_size: None,
        }
    }

    fn fd_check(spec: LayerSpec, act: GateActivation) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = DenseNetwork::random(&spec, act, &mut rng).unwrap();
        for v in net.params_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let task = SyntheticTask::copy_memory(2, 2, 1, 4, 4);
        let batch = task.generate(2, &mut rng);
        let (_, grad) = net.loss_and_grad(&batch).unwrap();
        let h = 1e-5;
        for k in 0..net.param_count() {
            let orig = net.params[k];
            net.params[k] = orig + h;
            let lp = net.loss(&batch).unwrap();
            net.params[k] = orig - h;
            let lm = net.loss(&batch).unwrap();
            net.params[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-6);
            assert!((fd - grad[k]).abs() / denom < 1e-5, "param {k}: fd {fd} bptt {}", grad[k]);
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        fd_check(small(CellKind::Lstm, Some(2)), GateActivation::Sigmoid);
        fd_check(small(CellKind::Lstm, None), GateActivation::Tanh);
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        fd_check(small(CellKind::Gru, None), GateActivation::Sigmoid);
    }

    #[test]
    fn dense_matches_block_circulant_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for cell in [CellKind::Lstm, CellKind::Gru] {
            let spec = small(cell, None);
            let dense = DenseNetwork::random(&spec, GateActivation::Sigmoid, &mut rng).unwrap();
            let bc = dense.project().unwrap();
            let back = DenseNetwork::from_network(&bc).unwrap();
            let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let a = back.forward(&xs).unwrap();
            let b = bc.forward(&xs).unwrap();
            for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
