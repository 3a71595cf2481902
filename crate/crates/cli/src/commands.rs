//! Command implementations. Data goes to `out`, diagnostics to `err`.

use std::io::Write;
use std::path::{Path, PathBuf};

use circrnn::admm::{admm_train, train_unconstrained, TrainOutcome};
use circrnn::arch::{CellKind, LayerSpec};
use circrnn::cost::{self, CostReport, PeBudget};
use circrnn::dense::DenseNetwork;
use circrnn::model_file::ModelFile;
use circrnn::quant::{quantized_inference, ActivationMode, QuantConfig, QuantizedNetwork};
use circrnn::task::evaluate;
use circrnn::{Error, Result};

use crate::config::RunConfig;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    NotConverged = 1,
    Usage = 2,
    Divergence = 3,
    Corrupt = 4,
    Dimension = 5,
    Infeasible = 6,
}

impl Exit {
    pub fn of(e: &Error) -> Exit {
        match e {
            Error::Config(_) | Error::Io(_) => Exit::Usage,
            Error::Divergence { .. } | Error::Numeric(_) => Exit::Divergence,
            Error::Corrupt(_) | Error::MalformedSpectrum(_) => Exit::Corrupt,
            Error::Dimension(_) | Error::Partition { .. } | Error::InvalidLength(_) => Exit::Dimension,
            Error::Infeasible(_) => Exit::Infeasible,
        }
    }
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e)
}

/// One whitespace-separated vector per line; blank lines and `#` comments
/// are skipped.
pub fn read_sequence(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read input {}: {e}", path.display())))?;
    parse_sequence(&text)
}

pub fn parse_sequence(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Config("input holds no vectors".into()));
    }
    Ok(out)
}

fn check_inputs(xs: &[Vec<f64>], dim: usize) -> Result<()> {
    match xs.iter().position(|x| x.len() != dim) {
        Some(t) => Err(Error::Dimension(format!(
            "input vector {} has length {}, model expects {dim}",
            t + 1,
            xs[t].len()
        ))),
        None => Ok(()),
    }
}

fn write_vectors(out: &mut dyn Write, vs: &[Vec<f64>]) -> Result<()> {
    for v in vs {
        let line: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(out, "{}", line.join(" ")).map_err(io)?;
    }
    Ok(())
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub output: PathBuf,
    pub trace: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn train(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Exit> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.reseed(args.seed);
    cfg.model.validate()?;
    let (train, test) = cfg.datasets();
    let outcome: TrainOutcome = admm_train(&cfg.model, cfg.cell_input, &train, &cfg.train)?;
    ModelFile::new(outcome.network.clone()).write(&args.output)?;
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".trace");
        PathBuf::from(p)
    });
    std::fs::write(&trace_path, outcome.trace_text()).map_err(io)?;
    let metrics = evaluate(&test, |xs| outcome.network.forward(xs))?;
    writeln!(out, "#schema train-result key=value").map_err(io)?;
    writeln!(out, "converged={}", outcome.converged).map_err(io)?;
    writeln!(out, "iterations={}", outcome.iterations).map_err(io)?;
    writeln!(out, "test_loss={:.6}", metrics.loss).map_err(io)?;
    writeln!(out, "test_error_rate={:.6}", metrics.error_rate).map_err(io)?;
    writeln!(out, "model={}", args.output.display()).map_err(io)?;
    writeln!(out, "trace={}", trace_path.display()).map_err(io)?;
    if outcome.converged {
        Ok(Exit::Ok)
    } else {
        writeln!(
            err,
            "warning: residual above tolerance after {} iterations; model holds the last projection",
            outcome.iterations
        )
        .map_err(io)?;
        Ok(Exit::NotConverged)
    }
}

pub struct InferArgs {
    pub model: PathBuf,
    pub input: PathBuf,
    pub quantized: bool,
    pub compare_dense: bool,
}

pub fn infer(args: &InferArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Exit> {
    let file = ModelFile::read(&args.model).map_err(|e| match e {
        Error::Io(e) => Error::Config(format!("cannot read model {}: {e}", args.model.display())),
        other => other,
    })?;
    let xs = read_sequence(&args.input)?;
    check_inputs(&xs, file.network.input_dim())?;
    let outputs = if args.quantized {
        let q = file
            .quantized
            .as_ref()
            .ok_or_else(|| Error::Config("model has no quantization section".into()))?;
        let (mut outs, report) = quantized_inference(q, std::slice::from_ref(&xs))?;
        write!(err, "{}", report.render()).map_err(io)?;
        outs.remove(0)
    } else {
        file.network.forward(&xs)?
    };
    write_vectors(out, &outputs)?;
    if args.compare_dense {
        let dense = DenseNetwork::from_network(&file.network)?.forward(&xs)?;
        let dev = outputs
            .iter()
            .flatten()
            .zip(dense.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        writeln!(out, "#dense_max_deviation {dev:.6e}").map_err(io)?;
    }
    Ok(Exit::Ok)
}

pub struct QuantizeArgs {
    pub model: PathBuf,
    pub output: PathBuf,
    pub calibration: Vec<PathBuf>,
    pub bits: u32,
    pub activation: ActivationMode,
}

pub fn quantize(args: &QuantizeArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<Exit> {
    let file = ModelFile::read(&args.model)?;
    let seqs = args
        .calibration
        .iter()
        .map(|p| read_sequence(p))
        .collect::<Result<Vec<_>>>()?;
    for s in &seqs {
        check_inputs(s, file.network.input_dim())?;
    }
    let cfg = QuantConfig {
        total_bits: args.bits,
        activation: args.activation,
    };
    let q = QuantizedNetwork::calibrate(&file.network, &seqs, cfg)?;
    let (_, report) = quantized_inference(&q, &seqs)?;
    ModelFile::with_quantization(q).write(&args.output)?;
    write!(out, "{}", report.render()).map_err(io)?;
    Ok(Exit::Ok)
}

pub struct CostArgs {
    pub cell: CellKind,
    pub layers: Vec<usize>,
    pub input_dim: Option<usize>,
    pub projection: Option<usize>,
    pub output_dim: Option<usize>,
    pub block: usize,
    pub io_block: Option<usize>,
    pub bits: u32,
    pub capacity: Option<u64>,
    pub reserve: f64,
    pub pe: Option<PeBudget>,
    pub structured: bool,
}

pub fn cost(args: &CostArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<Exit> {
    if args.layers.is_empty() {
        return Err(Error::Config("--layers needs at least one size".into()));
    }
    let spec = LayerSpec {
        cell: args.cell,
        input_dim: args.input_dim.unwrap_or(args.layers[0]),
        layer_sizes: args.layers.clone(),
        projection: args.projection,
        output_dim: args.output_dim,
        block_size: args.block,
        io_block_size: args.io_block,
    };
    spec.validate()?;
    let report = CostReport::new(&spec, args.bits, args.capacity, args.reserve, args.pe)?;
    if args.structured {
        write!(out, "{}", report.render_structured()).map_err(io)?;
    } else {
        write!(out, "{}", report.render_text()).map_err(io)?;
    }
    let curve = cost::model_mult_curve(&spec, &cost::power_of_two_blocks(128));
    write!(out, "{}", cost::render_curve(&curve)).map_err(io)?;
    if let Some(&(b, _)) = curve.iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
        writeln!(out, "#min_block_size {b}").map_err(io)?;
    }
    Ok(Exit::Ok)
}

pub struct ExploreArgs {
    pub config: PathBuf,
    pub tolerance: Option<f64>,
    pub capacity: Option<u64>,
    pub seed: Option<u64>,
}

pub fn explore(args: &ExploreArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Exit> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.reseed(args.seed);
    if let Some(t) = args.tolerance {
        cfg.explore.tolerance = t;
    }
    if let Some(c) = args.capacity {
        cfg.explore.capacity_bytes = c;
    }
    cfg.model.validate()?;
    let (train, test) = cfg.datasets();
    let oracle = |spec: &LayerSpec| -> Result<f64> {
        writeln!(
            err,
            "training {} L_b={} io={}",
            spec.cell.name(),
            spec.block_size,
            spec.io_block()
        )
        .map_err(io)?;
        // ADMM stops after one iteration when nothing is compressed, so the
        // uncompressed baseline gets the full unconstrained budget instead
        if spec.distinct_block_sizes() == [1] {
            return match train_unconstrained(spec, cfg.cell_input, &train, &cfg.train) {
                Ok(d) => Ok(evaluate(&test, |xs| d.forward(xs))?.error_rate),
                Err(Error::Divergence { .. }) => Ok(1.0),
                Err(e) => Err(e),
            };
        }
        match admm_train(spec, cfg.cell_input, &train, &cfg.train) {
            Ok(o) => Ok(evaluate(&test, |xs| o.network.forward(xs))?.error_rate),
            // a diverged candidate counts as the worst possible metric
            Err(Error::Divergence { .. }) => Ok(1.0),
            Err(e) => Err(e),
        }
    };
    let result = cost::phase1_explore(&cfg.model, &cfg.explore, oracle)?;
    write!(out, "{}", result.render_log()).map_err(io)?;
    Ok(Exit::Ok)
}
