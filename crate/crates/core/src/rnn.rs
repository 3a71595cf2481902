//! Block-circulant LSTM and GRU cells.
//!
//! LSTM step (peepholes are point-wise, `g` uses the configured activation):
//!
//! ```text
//! [zi; zf; zg; zo] = W_(ifco)(xr) · [x_t; y_{t-1}]
//! i = σ(zi + w_ic ⊙ c_{t-1} + b_i)      f = σ(zf + w_fc ⊙ c_{t-1} + b_f)
//! g = act(zg + b_c)                     c_t = f ⊙ c_{t-1} + g ⊙ i
//! o = σ(zo + w_oc ⊙ c_t + b_o)          m_t = o ⊙ tanh(c_t)
//! y_t = W_ym · m_t   (or m_t without projection)
//! ```
//!
//! GRU step (three products per step):
//!
//! ```text
//! [zr; zz] = W_(rz)(xc) · [x_t; c_{t-1}]
//! r = σ(zr + b_r)   z = σ(zz + b_z)
//! c̃ = tanh(W_c̃x · x_t + W_c̃c · (r ⊙ c_{t-1}) + b_c̃)
//! c_t = (1 - z) ⊙ c_{t-1} + z ⊙ c̃
//! ```

use crate::arch::{CellKind, GateActivation, LayerSpec, MatrixRole, VectorRole};
use crate::circulant::{matvec_decoupled, BlockCirculantMatrix, SpectralWeights};
use crate::error::{Error, Result};
use crate::fft::OpCounter;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Arithmetic used by the cell equations: how matrices are applied, which
/// activation functions run, and what happens to values written back to
/// state memory. The float kernel is exact; the quantized kernel lives in
/// [`crate::quant`].
pub trait CellKernel {
    fn matvec(&mut self, m: &CirculantLinear, x: &[f64]) -> Result<Vec<f64>>;
    fn sigmoid(&self, x: f64) -> f64;
    fn tanh(&self, x: f64) -> f64;
    /// Called on every vector stored as recurrent state or layer output.
    fn store(&mut self, _v: &mut [f64]) {}
    fn pointwise(&mut self, _count: usize) {}
}

/// Double-precision kernel with exact activations.
pub struct FloatKernel<'a> {
    pub counter: &'a mut OpCounter,
}

impl CellKernel for FloatKernel<'_> {
    fn matvec(&mut self, m: &CirculantLinear, x: &[f64]) -> Result<Vec<f64>> {
        matvec_decoupled(&m.spectra, x, self.counter)
    }
    fn sigmoid(&self, x: f64) -> f64 {
        sigmoid(x)
    }
    fn tanh(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn pointwise(&mut self, count: usize) {
        self.counter.pointwise_mults += count as u64;
    }
}

/// A block-circulant matrix together with its precomputed spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantLinear {
    matrix: BlockCirculantMatrix,
    spectra: SpectralWeights,
    /// Position in the model's canonical matrix order.
    index: usize,
}

impl CirculantLinear {
    pub fn new(matrix: BlockCirculantMatrix, index: usize) -> Result<Self> {
        let spectra = SpectralWeights::new(&matrix)?;
        Ok(CirculantLinear { matrix, spectra, index })
    }

    pub fn matrix(&self) -> &BlockCirculantMatrix {
        &self.matrix
    }

    pub fn spectra(&self) -> &SpectralWeights {
        &self.spectra
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

/// Recurrent state threaded through a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    /// Cell state `c`.
    pub c: Vec<f64>,
    /// Fed-back output: `y` for LSTM, equal to `c` for GRU.
    pub out: Vec<f64>,
    /// Number of steps taken.
    pub t: usize,
}

impl CellState {
    pub fn zeros(cell_dim: usize, out_dim: usize) -> Self {
        CellState {
            c: vec![0.0; cell_dim],
            out: vec![0.0; out_dim],
            t: 0,
        }
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.to_string()))
    }
}

fn check_len(v: &[f64], expect: usize, what: &str) -> Result<()> {
    if v.len() != expect {
        return Err(Error::dim(format!("{what}: expected length {expect}, got {}", v.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub(crate) gates: CirculantLinear,
    pub(crate) projection: Option<CirculantLinear>,
    pub(crate) peephole_i: Vec<f64>,
    pub(crate) peephole_f: Vec<f64>,
    pub(crate) peephole_o: Vec<f64>,
    pub(crate) bias_i: Vec<f64>,
    pub(crate) bias_f: Vec<f64>,
    pub(crate) bias_c: Vec<f64>,
    pub(crate) bias_o: Vec<f64>,
    pub(crate) cell_input: GateActivation,
}

/// Peephole diagonals and biases of one LSTM layer, each of length `H_cell`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LstmVectors {
    pub peephole_i: Vec<f64>,
    pub peephole_f: Vec<f64>,
    pub peephole_o: Vec<f64>,
    pub bias_i: Vec<f64>,
    pub bias_f: Vec<f64>,
    pub bias_c: Vec<f64>,
    pub bias_o: Vec<f64>,
}

impl LstmVectors {
    pub fn zeros(h: usize) -> Self {
        let z = vec![0.0; h];
        LstmVectors {
            peephole_i: z.clone(),
            peephole_f: z.clone(),
            peephole_o: z.clone(),
            bias_i: z.clone(),
            bias_f: z.clone(),
            bias_c: z.clone(),
            bias_o: z,
        }
    }
}

impl LstmParams {
    /// `gates` is `4·H_cell × (X + H_proj)`; `projection` is `H_proj × H_cell`
    /// (absent means `y_t = m_t`).
    pub fn new(
        gates: CirculantLinear,
        projection: Option<CirculantLinear>,
        v: LstmVectors,
        cell_input: GateActivation,
    ) -> Result<Self> {
        if gates.rows() % 4 != 0 {
            return Err(Error::dim("fused LSTM gate matrix needs 4·H rows"));
        }
        let h = gates.rows() / 4;
        let out = match &projection {
            Some(p) => {
                if p.cols() != h {
                    return Err(Error::dim(format!("projection has {} columns, cell width is {h}", p.cols())));
                }
                p.rows()
            }
            None => h,
        };
        if gates.cols() <= out {
            return Err(Error::dim("fused LSTM gate matrix narrower than its recurrent input"));
        }
        for (name, vec) in [
            ("peephole_i", &v.peephole_i),
            ("peephole_f", &v.peephole_f),
            ("peephole_o", &v.peephole_o),
            ("bias_i", &v.bias_i),
            ("bias_f", &v.bias_f),
            ("bias_c", &v.bias_c),
            ("bias_o", &v.bias_o),
        ] {
            check_len(vec, h, name)?;
        }
        Ok(LstmParams {
            gates,
            projection,
            peephole_i: v.peephole_i,
            peephole_f: v.peephole_f,
            peephole_o: v.peephole_o,
            bias_i: v.bias_i,
            bias_f: v.bias_f,
            bias_c: v.bias_c,
            bias_o: v.bias_o,
            cell_input,
        })
    }

    pub fn cell_dim(&self) -> usize {
        self.gates.rows() / 4
    }

    pub fn output_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.cell_dim(), CirculantLinear::rows)
    }

    pub fn input_dim(&self) -> usize {
        self.gates.cols() - self.output_dim()
    }

    pub fn gates(&self) -> &CirculantLinear {
        &self.gates
    }

    pub fn projection(&self) -> Option<&CirculantLinear> {
        self.projection.as_ref()
    }

    pub fn zero_state(&self) -> CellState {
        CellState::zeros(self.cell_dim(), self.output_dim())
    }

    pub fn step_with<K: CellKernel>(&self, k: &mut K, x: &[f64], s: &CellState) -> Result<(Vec<f64>, CellState)> {
        let h = self.cell_dim();
        check_len(x, self.input_dim(), "LSTM input")?;
        check_len(&s.c, h, "LSTM cell state")?;
        check_len(&s.out, self.output_dim(), "LSTM recurrent output")?;

        let mut u = Vec::with_capacity(self.gates.cols());
        u.extend_from_slice(x);
        u.extend_from_slice(&s.out);
        let z = k.matvec(&self.gates, &u)?;

        let g_act = |k: &K, v: f64| match self.cell_input {
            GateActivation::Sigmoid => k.sigmoid(v),
            GateActivation::Tanh => k.tanh(v),
        };
        let mut c = vec![0.0; h];
        let mut m = vec![0.0; h];
        for j in 0..h {
            let cp = s.c[j];
            let i = k.sigmoid(z[j] + self.peephole_i[j] * cp + self.bias_i[j]);
            let f = k.sigmoid(z[h + j] + self.peephole_f[j] * cp + self.bias_f[j]);
            let g = g_act(k, z[2 * h + j] + self.bias_c[j]);
            c[j] = f * cp + g * i;
        }
        k.store(&mut c);
        for j in 0..h {
            let o = k.sigmoid(z[3 * h + j] + self.peephole_o[j] * c[j] + self.bias_o[j]);
            m[j] = o * k.tanh(c[j]);
        }
        // three peephole products plus f⊙c, g⊙i and o⊙tanh(c)
        k.pointwise(6 * h);
        k.store(&mut m);
        let mut y = match &self.projection {
            Some(p) => k.matvec(p, &m)?,
            None => m,
        };
        k.store(&mut y);
        check_finite(&c, "LSTM cell state")?;
        check_finite(&y, "LSTM output")?;
        let next = CellState {
            c,
            out: y.clone(),
            t: s.t + 1,
        };
        Ok((y, next))
    }
}

/// One LSTM step in double precision.
pub fn lstm_step(p: &LstmParams, x: &[f64], s: &CellState, counter: &mut OpCounter) -> Result<(Vec<f64>, CellState)> {
    p.step_with(&mut FloatKernel { counter }, x, s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub(crate) gates: CirculantLinear,
    pub(crate) candidate_input: CirculantLinear,
    pub(crate) candidate_recurrent: CirculantLinear,
    pub(crate) bias_r: Vec<f64>,
    pub(crate) bias_z: Vec<f64>,
    pub(crate) bias_candidate: Vec<f64>,
}

impl GruParams {
    /// `gates` is `2H × (X + H)` with rows ordered r, z; `candidate_input` is
    /// `H × X`; `candidate_recurrent` is `H × H`.
    pub fn new(
        gates: CirculantLinear,
        candidate_input: CirculantLinear,
        candidate_recurrent: CirculantLinear,
        bias_r: Vec<f64>,
        bias_z: Vec<f64>,
        bias_candidate: Vec<f64>,
    ) -> Result<Self> {
        let h = candidate_recurrent.rows();
        let x = candidate_input.cols();
        if candidate_recurrent.cols() != h
            || candidate_input.rows() != h
            || gates.rows() != 2 * h
            || gates.cols() != x + h
        {
            return Err(Error::dim("inconsistent GRU matrix shapes"));
        }
        check_len(&bias_r, h, "bias_r")?;
        check_len(&bias_z, h, "bias_z")?;
        check_len(&bias_candidate, h, "bias_candidate")?;
        Ok(GruParams {
            gates,
            candidate_input,
            candidate_recurrent,
            bias_r,
            bias_z,
            bias_candidate,
        })
    }

    pub fn cell_dim(&self) -> usize {
        self.candidate_recurrent.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.candidate_input.cols()
    }

    pub fn zero_state(&self) -> CellState {
        CellState::zeros(self.cell_dim(), self.cell_dim())
    }

    pub fn step_with<K: CellKernel>(&self, k: &mut K, x: &[f64], s: &CellState) -> Result<(Vec<f64>, CellState)> {
        let h = self.cell_dim();
        check_len(x, self.input_dim(), "GRU input")?;
        check_len(&s.c, h, "GRU state")?;

        let mut u = Vec::with_capacity(x.len() + h);
        u.extend_from_slice(x);
        u.extend_from_slice(&s.c);
        let a = k.matvec(&self.gates, &u)?;
        let r: Vec<f64> = (0..h).map(|j| k.sigmoid(a[j] + self.bias_r[j])).collect();
        let z: Vec<f64> = (0..h).map(|j| k.sigmoid(a[h + j] + self.bias_z[j])).collect();
        let mut rc: Vec<f64> = r.iter().zip(&s.c).map(|(r, c)| r * c).collect();
        k.store(&mut rc);
        let cx = k.matvec(&self.candidate_input, x)?;
        let cc = k.matvec(&self.candidate_recurrent, &rc)?;
        let mut c: Vec<f64> = (0..h)
            .map(|j| {
                let cand = k.tanh(cx[j] + cc[j] + self.bias_candidate[j]);
                (1.0 - z[j]) * s.c[j] + z[j] * cand
            })
            .collect();
        k.pointwise(3 * h);
        k.store(&mut c);
        check_finite(&c, "GRU state")?;
        let next = CellState {
            c: c.clone(),
            out: c.clone(),
            t: s.t + 1,
        };
        Ok((c, next))
    }
}

/// One GRU step in double precision.
pub fn gru_step(p: &GruParams, x: &[f64], s: &CellState, counter: &mut OpCounter) -> Result<(Vec<f64>, CellState)> {
    p.step_with(&mut FloatKernel { counter }, x, s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Lstm(LstmParams),
    Gru(GruParams),
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Lstm(p) => p.input_dim(),
            Layer::Gru(p) => p.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Lstm(p) => p.output_dim(),
            Layer::Gru(p) => p.cell_dim(),
        }
    }

    pub fn zero_state(&self) -> CellState {
        match self {
            Layer::Lstm(p) => p.zero_state(),
            Layer::Gru(p) => p.zero_state(),
        }
    }

    pub fn step_with<K: CellKernel>(&self, k: &mut K, x: &[f64], s: &CellState) -> Result<(Vec<f64>, CellState)> {
        match self {
            Layer::Lstm(p) => p.step_with(k, x, s),
            Layer::Gru(p) => p.step_with(k, x, s),
        }
    }

    /// Runs the layer over a sequence from the zero state.
    pub fn run_sequence_with<K: CellKernel>(&self, k: &mut K, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Err(Error::dim("empty input sequence"));
        }
        let mut state = self.zero_state();
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, next) = self.step_with(k, x, &state)?;
            state = next;
            out.push(y);
        }
        Ok(out)
    }

    pub fn run_sequence(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.run_sequence_with(&mut FloatKernel { counter: &mut OpCounter::new() }, xs)
    }
}

/// Threads a zero-initialized state through `xs` and returns every output.
pub fn run_sequence(layer: &Layer, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    layer.run_sequence(xs)
}

/// Time-domain parameters of a model in [`LayerSpec`] canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub matrices: Vec<BlockCirculantMatrix>,
    pub vectors: Vec<Vec<f64>>,
}

impl Parameters {
    pub fn zeros(spec: &LayerSpec) -> Result<Self> {
        Ok(Parameters {
            matrices: spec
                .matrices()
                .iter()
                .map(|m| BlockCirculantMatrix::zeros(m.rows, m.cols, m.block))
                .collect::<Result<_>>()?,
            vectors: spec.vectors().iter().map(|v| vec![0.0; v.len]).collect(),
        })
    }

    pub fn check(&self, spec: &LayerSpec) -> Result<()> {
        let ms = spec.matrices();
        let vs = spec.vectors();
        if ms.len() != self.matrices.len() || vs.len() != self.vectors.len() {
            return Err(Error::dim("parameter count does not match the layer description"));
        }
        for (s, m) in ms.iter().zip(&self.matrices) {
            if (s.rows, s.cols, s.block) != (m.rows(), m.cols(), m.block_size()) {
                return Err(Error::dim(format!(
                    "layer {} {}: expected {}x{} block {}, got {}x{} block {}",
                    s.layer,
                    s.role.name(),
                    s.rows,
                    s.cols,
                    s.block,
                    m.rows(),
                    m.cols(),
                    m.block_size()
                )));
            }
        }
        for (s, v) in vs.iter().zip(&self.vectors) {
            check_len(v, s.len, "parameter vector")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub(crate) matrix: CirculantLinear,
    pub(crate) bias: Vec<f64>,
}

impl Readout {
    pub fn matrix(&self) -> &CirculantLinear {
        &self.matrix
    }
}

/// Stacked recurrent layers followed by an optional readout matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: LayerSpec,
    cell_input: GateActivation,
    layers: Vec<Layer>,
    readout: Option<Readout>,
}

impl Network {
    pub fn from_parameters(spec: &LayerSpec, cell_input: GateActivation, params: Parameters) -> Result<Self> {
        spec.validate()?;
        params.check(spec)?;
        let shapes = spec.matrices();
        let vshapes = spec.vectors();
        let mut mats: Vec<Option<CirculantLinear>> = params
            .matrices
            .into_iter()
            .enumerate()
            .map(|(i, m)| CirculantLinear::new(m, i).map(Some))
            .collect::<Result<_>>()?;
        let mut vecs: Vec<Option<Vec<f64>>> = params.vectors.into_iter().map(Some).collect();

        let mut take_m = |layer: usize, role: MatrixRole| -> Option<CirculantLinear> {
            let i = shapes.iter().position(|s| s.layer == layer && s.role == role)?;
            mats[i].take()
        };
        let mut take_v = |layer: usize, role: VectorRole| -> Vec<f64> {
            let i = vshapes
                .iter()
                .position(|s| s.layer == layer && s.role == role)
                .expect("vector listed by spec");
            vecs[i].take().expect("vector taken once")
        };

        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let layer = match spec.cell {
                CellKind::Lstm => {
                    let gates = take_m(l, MatrixRole::LstmGates).expect("gates");
                    let projection = take_m(l, MatrixRole::LstmProjection);
                    let v = LstmVectors {
                        peephole_i: take_v(l, VectorRole::PeepholeInput),
                        peephole_f: take_v(l, VectorRole::PeepholeForget),
                        peephole_o: take_v(l, VectorRole::PeepholeOutput),
                        bias_i: take_v(l, VectorRole::BiasInput),
                        bias_f: take_v(l, VectorRole::BiasForget),
                        bias_c: take_v(l, VectorRole::BiasCell),
                        bias_o: take_v(l, VectorRole::BiasOutput),
                    };
                    Layer::Lstm(LstmParams::new(gates, projection, v, cell_input)?)
                }
                CellKind::Gru => Layer::Gru(GruParams::new(
                    take_m(l, MatrixRole::GruGates).expect("gates"),
                    take_m(l, MatrixRole::GruCandidateInput).expect("candidate input"),
                    take_m(l, MatrixRole::GruCandidateRecurrent).expect("candidate recurrent"),
                    take_v(l, VectorRole::BiasReset),
                    take_v(l, VectorRole::BiasUpdate),
                    take_v(l, VectorRole::BiasCandidate),
                )?),
            };
            layers.push(layer);
        }
        let readout = match take_m(spec.num_layers(), MatrixRole::Readout) {
            Some(matrix) => Some(Readout {
                matrix,
                bias: take_v(spec.num_layers(), VectorRole::ReadoutBias),
            }),
            None => None,
        };
        Ok(Network {
            spec: spec.clone(),
            cell_input,
            layers,
            readout,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn cell_input(&self) -> GateActivation {
        self.cell_input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn readout(&self) -> Option<&Readout> {
        self.readout.as_ref()
    }

    /// Every matrix in canonical order.
    pub fn linears(&self) -> Vec<&CirculantLinear> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Lstm(p) => {
                    out.push(&p.gates);
                    out.extend(p.projection.as_ref());
                }
                Layer::Gru(p) => {
                    out.push(&p.gates);
                    out.push(&p.candidate_input);
                    out.push(&p.candidate_recurrent);
                }
            }
        }
        out.extend(self.readout.as_ref().map(|r| &r.matrix));
        out
    }

    /// Copies the time-domain parameters back out in canonical order.
    pub fn parameters(&self) -> Parameters {
        let matrices = self.linears().into_iter().map(|m| m.matrix.clone()).collect();
        let mut vectors = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Lstm(p) => vectors.extend(
                    [
                        &p.peephole_i,
                        &p.peephole_f,
                        &p.peephole_o,
                        &p.bias_i,
                        &p.bias_f,
                        &p.bias_c,
                        &p.bias_o,
                    ]
                    .map(Clone::clone),
                ),
                Layer::Gru(p) => vectors.extend([&p.bias_r, &p.bias_z, &p.bias_candidate].map(Clone::clone)),
            }
        }
        if let Some(r) = &self.readout {
            vectors.push(r.bias.clone());
        }
        Parameters { matrices, vectors }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.model_output_dim()
    }

    pub fn forward_with<K: CellKernel>(&self, k: &mut K, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Err(Error::dim("empty input sequence"));
        }
        let mut h = xs.to_vec();
        for x in &mut h {
            check_len(x, self.input_dim(), "model input")?;
            k.store(x);
        }
        for layer in &self.layers {
            h = layer.run_sequence_with(k, &h)?;
        }
        if let Some(r) = &self.readout {
            h = h
                .iter()
                .map(|v| {
                    let mut o = k.matvec(&r.matrix, v)?;
                    for (o, b) in o.iter_mut().zip(&r.bias) {
                        *o += b;
                    }
                    Ok(o)
                })
                .collect::<Result<_>>()?;
        }
        Ok(h)
    }

    /// Double-precision forward pass; one output vector per input step.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.forward_with(&mut FloatKernel { counter: &mut OpCounter::new() }, xs)
    }

    pub fn forward_counted(&self, xs: &[Vec<f64>], counter: &mut OpCounter) -> Result<Vec<Vec<f64>>> {
        self.forward_with(&mut FloatKernel { counter }, xs)
    }
}
