//! Binary model container.
//!
//! ```text
//! "ERNN" | u16 version | u32 header_len | header (UTF-8 key=value lines)
//!        | u64 payload_len | payload | u32 CRC-32 of header ++ payload
//! ```
//!
//! All integers and floats are little-endian. The payload holds the cell
//! tag, the dimension table, every matrix as time-domain generators, every
//! bias/peephole vector, and an optional quantization section. The header
//! repeats the dimensions for inspection and must agree with the payload.

use std::fmt::Write as _;
use std::path::Path;

use crate::arch::{CellKind, GateActivation, LayerSpec, MatrixRole, VectorRole};
use crate::circulant::BlockCirculantMatrix;
use crate::error::{Error, Result};
use crate::quant::{ActivationMode, FixedPointFormat, QuantConfig, QuantMatrix, QuantizedNetwork};
use crate::rnn::{Network, Parameters};

pub const MAGIC: &[u8; 4] = b"ERNN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct ModelFile {
    pub network: Network,
    pub quantized: Option<QuantizedNetwork>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn dim(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::dim(format!("dimension {v} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }
    fn format(&mut self, f: &FixedPointFormat) {
        self.u32(f.total_bits);
        self.u32(f.frac_bits);
        self.f64(f.scale);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    /// Reads a count and checks that `count · unit` bytes remain.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(unit).map_or(true, |b| b > self.buf.len() - self.pos) {
            return Err(corrupt("length field exceeds file size"));
        }
        Ok(n)
    }
    fn format(&mut self) -> Result<FixedPointFormat> {
        let f = FixedPointFormat {
            total_bits: self.u32()?,
            frac_bits: self.u32()?,
            scale: self.f64()?,
        };
        f.validate().map_err(|e| corrupt(format!("bad fixed-point format: {e}")))?;
        Ok(f)
    }
    fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn cell_tag(c: CellKind) -> u8 {
    match c {
        CellKind::Lstm => 1,
        CellKind::Gru => 2,
    }
}

fn activation_tag(g: GateActivation) -> u8 {
    match g {
        GateActivation::Sigmoid => 1,
        GateActivation::Tanh => 2,
    }
}

fn header_text(spec: &LayerSpec, cell_input: GateActivation, quantized: bool) -> String {
    let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
    let layers: Vec<String> = spec.layer_sizes.iter().map(|v| v.to_string()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "cell={}", spec.cell.name());
    let _ = writeln!(s, "cell_input={}", if cell_input == GateActivation::Tanh { "tanh" } else { "sigmoid" });
    let _ = writeln!(s, "input_dim={}", spec.input_dim);
    let _ = writeln!(s, "layers={}", layers.join(","));
    let _ = writeln!(s, "projection={}", opt(spec.projection));
    let _ = writeln!(s, "output_dim={}", opt(spec.output_dim));
    let _ = writeln!(s, "block_size={}", spec.block_size);
    let _ = writeln!(s, "io_block_size={}", opt(spec.io_block_size));
    let _ = writeln!(s, "quantized={quantized}");
    s
}

impl ModelFile {
    pub fn new(network: Network) -> Self {
        ModelFile {
            network,
            quantized: None,
        }
    }

    pub fn with_quantization(q: QuantizedNetwork) -> Self {
        ModelFile {
            network: q.network().clone(),
            quantized: Some(q),
        }
    }

    fn payload(&self) -> Result<Vec<u8>> {
        let spec = self.network.spec();
        let mut w = Writer(Vec::new());
        w.u8(cell_tag(spec.cell));
        w.u8(activation_tag(self.network.cell_input()));
        w.dim(spec.input_dim)?;
        w.dim(spec.layer_sizes.len())?;
        for &h in &spec.layer_sizes {
            w.dim(h)?;
        }
        w.dim(spec.projection.unwrap_or(0))?;
        w.dim(spec.output_dim.unwrap_or(0))?;
        w.dim(spec.block_size)?;
        w.dim(spec.io_block_size.unwrap_or(0))?;

        let params = self.network.parameters();
        w.u64(params.matrices.len() as u64);
        for (shape, m) in spec.matrices().iter().zip(&params.matrices) {
            w.u8(shape.role.tag());
            w.dim(shape.layer)?;
            w.dim(m.rows())?;
            w.dim(m.cols())?;
            w.dim(m.block_size())?;
            for &g in m.generators() {
                w.f64(g);
            }
        }
        w.u64(params.vectors.len() as u64);
        for (shape, v) in spec.vectors().iter().zip(&params.vectors) {
            w.u8(shape.role.tag());
            w.dim(shape.layer)?;
            w.dim(v.len())?;
            for &x in v {
                w.f64(x);
            }
        }

        match &self.quantized {
            None => w.u8(0),
            Some(q) => {
                w.u8(1);
                let cfg = q.config();
                w.u32(cfg.total_bits);
                match cfg.activation {
                    ActivationMode::Exact => {
                        w.u8(0);
                        w.u32(0);
                    }
                    ActivationMode::Pwl { segments } => {
                        w.u8(1);
                        w.dim(segments)?;
                    }
                }
                w.format(&q.activation_format());
                w.u64(q.matrices().len() as u64);
                for m in q.matrices() {
                    w.dim(m.rows)?;
                    w.dim(m.cols)?;
                    w.dim(m.block)?;
                    w.format(&m.weight_format);
                    w.format(&m.input_format);
                    w.u64(m.codes.len() as u64);
                    for &c in &m.codes {
                        // codes never exceed 32 bits
                        w.i32(c as i32);
                    }
                }
            }
        }
        Ok(w.0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = header_text(self.network.spec(), self.network.cell_input(), self.quantized.is_some());
        let payload = self.payload()?;
        let mut w = Writer(Vec::with_capacity(payload.len() + header.len() + 32));
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.u32(header.len() as u32);
        w.0.extend_from_slice(header.as_bytes());
        w.u64(payload.len() as u64);
        w.0.extend_from_slice(&payload);
        let mut crc = crc32fast::Hasher::new();
        crc.update(header.as_bytes());
        crc.update(&payload);
        w.u32(crc.finalize());
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).map_err(|_| corrupt("file too short"))? != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header = r.take(header_len)?;
        let payload_len = r.u64()? as usize;
        let payload = r.take(payload_len)?;
        let stored_crc = r.u32()?;
        if !r.finished() {
            return Err(corrupt("trailing bytes after checksum"));
        }
        let mut crc = crc32fast::Hasher::new();
        crc.update(header);
        crc.update(payload);
        if crc.finalize() != stored_crc {
            return Err(corrupt("checksum mismatch"));
        }
        let header = std::str::from_utf8(header).map_err(|_| corrupt("header is not UTF-8"))?;
        let file = Self::parse_payload(payload)?;
        let expect = header_text(file.network.spec(), file.network.cell_input(), file.quantized.is_some());
        if header != expect {
            return Err(corrupt("header disagrees with payload"));
        }
        Ok(file)
    }

    fn parse_payload(payload: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: payload, pos: 0 };
        let cell = match r.u8()? {
            1 => CellKind::Lstm,
            2 => CellKind::Gru,
            t => return Err(corrupt(format!("unknown cell tag {t}"))),
        };
        let cell_input = match r.u8()? {
            1 => GateActivation::Sigmoid,
            2 => GateActivation::Tanh,
            t => return Err(corrupt(format!("unknown activation tag {t}"))),
        };
        let input_dim = r.dim()?;
        let layers = r.dim()?;
        if layers * 4 > payload.len() {
            return Err(corrupt("layer count exceeds file size"));
        }
        let layer_sizes = (0..layers).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
        let nonzero = |v: usize| (v != 0).then_some(v);
        let projection = nonzero(r.dim()?);
        let output_dim = nonzero(r.dim()?);
        let block_size = r.dim()?;
        let io_block_size = nonzero(r.dim()?);
        let spec = LayerSpec {
            cell,
            input_dim,
            layer_sizes,
            projection,
            output_dim,
            block_size,
            io_block_size,
        };
        spec.validate().map_err(|e| corrupt(format!("invalid dimensions: {e}")))?;

        let shapes = spec.matrices();
        let n = r.count(17)?;
        if n != shapes.len() {
            return Err(corrupt(format!("expected {} matrices, found {n}", shapes.len())));
        }
        let mut matrices = Vec::with_capacity(n);
        for s in &shapes {
            let role = MatrixRole::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown matrix role"))?;
            let (layer, rows, cols, block) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
            if (role, layer, rows, cols, block) != (s.role, s.layer, s.rows, s.cols, s.block) {
                return Err(corrupt(format!("matrix record for layer {layer} does not match the dimension table")));
            }
            let len = rows * cols / block;
            if len * 8 > payload.len() - r.pos {
                return Err(corrupt("matrix record exceeds file size"));
            }
            let g = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            matrices.push(BlockCirculantMatrix::new(rows, cols, block, g)?);
        }
        let vshapes = spec.vectors();
        let n = r.count(9)?;
        if n != vshapes.len() {
            return Err(corrupt(format!("expected {} vectors, found {n}", vshapes.len())));
        }
        let mut vectors = Vec::with_capacity(n);
        for s in &vshapes {
            let role = VectorRole::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown vector role"))?;
            let (layer, len) = (r.dim()?, r.dim()?);
            if (role, layer, len) != (s.role, s.layer, s.len) {
                return Err(corrupt("vector record does not match the dimension table"));
            }
            if len * 8 > payload.len() - r.pos {
                return Err(corrupt("vector record exceeds file size"));
            }
            vectors.push((0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        let network = Network::from_parameters(&spec, cell_input, Parameters { matrices, vectors })
            .map_err(|e| corrupt(format!("cannot rebuild network: {e}")))?;

        let quantized = match r.u8()? {
            0 => None,
            1 => Some(Self::parse_quant(&mut r, &network)?),
            t => return Err(corrupt(format!("unknown quantization flag {t}"))),
        };
        if !r.finished() {
            return Err(corrupt("trailing bytes in payload"));
        }
        Ok(ModelFile { network, quantized })
    }

    fn parse_quant(r: &mut Reader<'_>, network: &Network) -> Result<QuantizedNetwork> {
        let total_bits = r.u32()?;
        let activation = match (r.u8()?, r.dim()?) {
            (0, 0) => ActivationMode::Exact,
            (1, segments) => ActivationMode::Pwl { segments },
            _ => return Err(corrupt("unknown activation mode")),
        };
        let activation_format = r.format()?;
        let n = r.count(48)?;
        let mut matrices = Vec::with_capacity(n);
        for _ in 0..n {
            let (rows, cols, block) = (r.dim()?, r.dim()?, r.dim()?);
            let weight_format = r.format()?;
            let input_format = r.format()?;
            let len = r.count(4)?;
            let codes = (0..len).map(|_| r.i32().map(i64::from)).collect::<Result<Vec<_>>>()?;
            matrices.push(QuantMatrix {
                rows,
                cols,
                block,
                weight_format,
                input_format,
                codes,
            });
        }
        let config = QuantConfig {
            total_bits,
            activation,
        };
        QuantizedNetwork::from_parts(network.clone(), config, activation_format, matrices).map_err(|e| match e {
            Error::Corrupt(m) => Error::Corrupt(m),
            other => corrupt(format!("invalid quantization section: {other}")),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
