//! Model shape descriptions shared by inference, training, serialization and
//! the cost model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell type `{other}`"))),
        }
    }
}

/// Activation of the LSTM cell-input gate `g`.
///
/// The logistic default follows the cell equations as printed; `Tanh` gives
/// the more common formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    #[default]
    Sigmoid,
    Tanh,
}

/// Role of a weight matrix inside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixRole {
    /// `W_(ifco)(xr)`, rows ordered i, f, g, o.
    LstmGates,
    /// `W_ym`.
    LstmProjection,
    /// `W_(rz)(xc)`, rows ordered r, z.
    GruGates,
    /// `W_c̃x`.
    GruCandidateInput,
    /// `W_c̃c`.
    GruCandidateRecurrent,
    /// Output layer mapping the top hidden output to logits.
    Readout,
}

impl MatrixRole {
    pub const ALL: [MatrixRole; 6] = [
        MatrixRole::LstmGates,
        MatrixRole::LstmProjection,
        MatrixRole::GruGates,
        MatrixRole::GruCandidateInput,
        MatrixRole::GruCandidateRecurrent,
        MatrixRole::Readout,
    ];

    pub fn tag(self) -> u8 {
        match self {
            MatrixRole::LstmGates => 1,
            MatrixRole::LstmProjection => 2,
            MatrixRole::GruGates => 3,
            MatrixRole::GruCandidateInput => 4,
            MatrixRole::GruCandidateRecurrent => 5,
            MatrixRole::Readout => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.tag() == tag)
    }

    /// Matrices whose output does not feed back into the next time step.
    pub fn is_input_output(self) -> bool {
        matches!(self, MatrixRole::GruCandidateInput | MatrixRole::Readout)
    }

    pub fn name(self) -> &'static str {
        match self {
            MatrixRole::LstmGates => "lstm_gates",
            MatrixRole::LstmProjection => "lstm_projection",
            MatrixRole::GruGates => "gru_gates",
            MatrixRole::GruCandidateInput => "gru_candidate_input",
            MatrixRole::GruCandidateRecurrent => "gru_candidate_recurrent",
            MatrixRole::Readout => "readout",
        }
    }
}

/// Role of a vector parameter (bias or peephole diagonal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VectorRole {
    PeepholeInput,
    PeepholeForget,
    PeepholeOutput,
    BiasInput,
    BiasForget,
    BiasCell,
    BiasOutput,
    BiasReset,
    BiasUpdate,
    BiasCandidate,
    ReadoutBias,
}

impl VectorRole {
    pub const ALL: [VectorRole; 11] = [
        VectorRole::PeepholeInput,
        VectorRole::PeepholeForget,
        VectorRole::PeepholeOutput,
        VectorRole::BiasInput,
        VectorRole::BiasForget,
        VectorRole::BiasCell,
        VectorRole::BiasOutput,
        VectorRole::BiasReset,
        VectorRole::BiasUpdate,
        VectorRole::BiasCandidate,
        VectorRole::ReadoutBias,
    ];

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|r| *r == self).expect("listed") as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get((tag as usize).checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixShape {
    pub role: MatrixRole,
    /// Layer index; the readout uses the number of layers.
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorShape {
    pub role: VectorRole,
    pub layer: usize,
    pub len: usize,
}

/// Shape of a stacked LSTM/GRU model with block-circulant weight matrices.
///
/// Every matrix uses `block_size` except input/output matrices, which use
/// `io_block_size` when set. At most two distinct block sizes exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub cell: CellKind,
    pub input_dim: usize,
    /// Cell width per layer.
    pub layer_sizes: Vec<usize>,
    /// Projected output width of each LSTM layer.
    #[serde(default)]
    pub projection: Option<usize>,
    /// Readout width, when the model ends in an output matrix.
    #[serde(default)]
    pub output_dim: Option<usize>,
    pub block_size: usize,
    #[serde(default)]
    pub io_block_size: Option<usize>,
}

impl LayerSpec {
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn io_block(&self) -> usize {
        self.io_block_size.unwrap_or(self.block_size)
    }

    /// Width of the vector a layer emits (and feeds back, for LSTM).
    pub fn layer_output_dim(&self, layer: usize) -> usize {
        match self.cell {
            CellKind::Lstm => self.projection.unwrap_or(self.layer_sizes[layer]),
            CellKind::Gru => self.layer_sizes[layer],
        }
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layer_output_dim(layer - 1)
        }
    }

    /// Width of the final model output (logits, or the top layer output).
    pub fn model_output_dim(&self) -> usize {
        self.output_dim
            .unwrap_or_else(|| self.layer_output_dim(self.num_layers() - 1))
    }

    fn block_for(&self, role: MatrixRole) -> usize {
        if role.is_input_output() {
            self.io_block()
        } else {
            self.block_size
        }
    }

    /// Every weight matrix in canonical order: per layer, then the readout.
    pub fn matrices(&self) -> Vec<MatrixShape> {
        let mut out = Vec::new();
        for (l, &h) in self.layer_sizes.iter().enumerate() {
            let x = self.layer_input_dim(l);
            let mut push = |role, rows, cols| {
                out.push(MatrixShape {
                    role,
                    layer: l,
                    rows,
                    cols,
                    block: self.block_for(role),
                })
            };
            match self.cell {
                CellKind::Lstm => {
                    let p = self.layer_output_dim(l);
                    push(MatrixRole::LstmGates, 4 * h, x + p);
                    if self.projection.is_some() {
                        push(MatrixRole::LstmProjection, p, h);
                    }
                }
                CellKind::Gru => {
                    push(MatrixRole::GruGates, 2 * h, x + h);
                    push(MatrixRole::GruCandidateInput, h, x);
                    push(MatrixRole::GruCandidateRecurrent, h, h);
                }
            }
        }
        if let Some(o) = self.output_dim {
            let l = self.num_layers();
            out.push(MatrixShape {
                role: MatrixRole::Readout,
                layer: l,
                rows: o,
                cols: self.layer_output_dim(l - 1),
                block: self.block_for(MatrixRole::Readout),
            });
        }
        out
    }

    /// Every bias and peephole vector in canonical order.
    pub fn vectors(&self) -> Vec<VectorShape> {
        let mut out = Vec::new();
        for (l, &h) in self.layer_sizes.iter().enumerate() {
            let roles: &[VectorRole] = match self.cell {
                CellKind::Lstm => &[
                    VectorRole::PeepholeInput,
                    VectorRole::PeepholeForget,
                    VectorRole::PeepholeOutput,
                    VectorRole::BiasInput,
                    VectorRole::BiasForget,
                    VectorRole::BiasCell,
                    VectorRole::BiasOutput,
                ],
                CellKind::Gru => &[VectorRole::BiasReset, VectorRole::BiasUpdate, VectorRole::BiasCandidate],
            };
            out.extend(roles.iter().map(|&role| VectorShape { role, layer: l, len: h }));
        }
        if let Some(o) = self.output_dim {
            out.push(VectorShape {
                role: VectorRole::ReadoutBias,
                layer: self.num_layers(),
                len: o,
            });
        }
        out
    }

    /// Distinct block sizes in use, ascending.
    pub fn distinct_block_sizes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.matrices().iter().map(|m| m.block).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Same shape with every block size replaced.
    pub fn with_block_size(&self, block: usize) -> LayerSpec {
        LayerSpec {
            block_size: block,
            io_block_size: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Config("dimensions must be positive and at least one layer given".into()));
        }
        if self.projection == Some(0) || self.output_dim == Some(0) {
            return Err(Error::Config("projection and output widths must be positive".into()));
        }
        if self.cell == CellKind::Gru && self.projection.is_some() {
            return Err(Error::Config("projection is only defined for LSTM layers".into()));
        }
        for b in [self.block_size, self.io_block()] {
            if b == 0 || !b.is_power_of_two() {
                return Err(Error::Config(format!("block size {b} is not a power of two")));
            }
        }
        if self.distinct_block_sizes().len() > 2 {
            return Err(Error::Config("at most two distinct block sizes are allowed".into()));
        }
        for m in self.matrices() {
            for (what, dim) in [("rows", m.rows), ("columns", m.cols)] {
                if dim % m.block != 0 {
                    let pad = m.block - dim % m.block;
                    return Err(Error::Dimension(format!(
                        "layer {} {} has {dim} {what}, not divisible by block size {}; smallest padding is {pad}",
                        m.layer,
                        m.role.name(),
                        m.block
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parameters stored for the compressed model.
    pub fn param_count(&self) -> u64 {
        let m: u64 = self
            .matrices()
            .iter()
            .map(|m| (m.rows * m.cols / m.block) as u64)
            .sum();
        let v: u64 = self.vectors().iter().map(|v| v.len as u64).sum();
        m + v
    }

    /// Parameters of the same model with dense matrices.
    pub fn dense_param_count(&self) -> u64 {
        let m: u64 = self.matrices().iter().map(|m| (m.rows * m.cols) as u64).sum();
        let v: u64 = self.vectors().iter().map(|v| v.len as u64).sum();
        m + v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lstm() -> LayerSpec {
        LayerSpec {
            cell: CellKind::Lstm,
            input_dim: 8,
            layer_sizes: vec![16],
            projection: Some(8),
            output_dim: Some(8),
            block_size: 4,
            io_block_size: Some(8),
        }
    }

    #[test]
    fn lstm_matrix_set() {
        let s = lstm();
        s.validate().unwrap();
        let m = s.matrices();
        assert_eq!(m.len(), 3);
        assert_eq!((m[0].rows, m[0].cols, m[0].block), (64, 16, 4));
        assert_eq!((m[1].rows, m[1].cols), (8, 16));
        assert_eq!((m[2].role, m[2].block), (MatrixRole::Readout, 8));
        assert_eq!(s.vectors().len(), 8);
        assert_eq!(s.distinct_block_sizes(), vec![4, 8]);
    }

    #[test]
    fn gru_matrix_set() {
        let s = LayerSpec {
            cell: CellKind::Gru,
            projection: None,
            ..lstm()
        };
        s.validate().unwrap();
        let shapes: Vec<_> = s.matrices().iter().map(|m| (m.rows, m.cols, m.block)).collect();
        assert_eq!(shapes, vec![(32, 24, 4), (16, 8, 8), (16, 16, 4), (8, 16, 8)]);
    }

    #[test]
    fn validation_reports_padding() {
        let s = LayerSpec {
            input_dim: 6,
            io_block_size: None,
            ..lstm()
        };
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("smallest padding is 2"), "{err}");
        let s = LayerSpec {
            block_size: 3,
            ..lstm()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn tags_round_trip() {
        for r in MatrixRole::ALL {
            assert_eq!(MatrixRole::from_tag(r.tag()), Some(r));
        }
        for r in VectorRole::ALL {
            assert_eq!(VectorRole::from_tag(r.tag()), Some(r));
        }
        assert_eq!(VectorRole::from_tag(0), None);
    }
}
