//! `circrnn`: train, quantize, run and cost block-circulant recurrent models.
//!
//! Exit codes: 0 success, 1 training did not converge, 2 usage or
//! configuration error, 3 divergence, 4 corrupt model file, 5 dimension
//! mismatch, 6 infeasible capacity.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use circrnn::arch::CellKind;
use circrnn::cost::{PeBudget, DEFAULT_RESERVE_FRACTION};
use circrnn::quant::{ActivationMode, DEFAULT_PWL_SEGMENTS, DEFAULT_TOTAL_BITS};
use clap::{Parser, Subcommand, ValueEnum};

use commands::Exit;

#[derive(Parser)]
#[command(name = "circrnn", version, about = "Block-circulant LSTM/GRU toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Exact,
    Pwl,
}

#[derive(Subcommand)]
enum Command {
    /// Train a block-circulant model with ADMM on a synthetic task.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Convergence trace path (default: `<output>.trace`).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a model on one input sequence.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// One whitespace-separated input vector per line.
        #[arg(long)]
        input: PathBuf,
        /// Use the embedded quantization section.
        #[arg(long)]
        quantized: bool,
        /// Also report the deviation from the dense-expansion reference.
        #[arg(long)]
        compare_dense: bool,
    },
    /// Calibrate fixed-point formats and embed them in a model file.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Calibration sequence files (repeatable).
        #[arg(long, required = true)]
        calibration: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOTAL_BITS)]
        bits: u32,
        #[arg(long, value_enum, default_value_t = ActivationArg::Pwl)]
        activation: ActivationArg,
        #[arg(long, default_value_t = DEFAULT_PWL_SEGMENTS)]
        segments: usize,
    },
    /// Multiplication, storage and block-size sweep report.
    Cost {
        #[arg(long, default_value = "lstm")]
        cell: CellKind,
        /// Comma-separated cell widths, one per layer.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        /// Input width (default: the first layer width).
        #[arg(long)]
        input_dim: Option<usize>,
        #[arg(long)]
        projection: Option<usize>,
        #[arg(long)]
        output_dim: Option<usize>,
        #[arg(long, default_value_t = 1)]
        block: usize,
        /// Block size of input/output matrices.
        #[arg(long)]
        io_block: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_TOTAL_BITS)]
        bits: u32,
        /// On-chip memory in bytes.
        #[arg(long)]
        capacity: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_RESERVE_FRACTION)]
        reserve: f64,
        /// `dsp_total,lut_total,dsp_per_pe,lut_per_pe`.
        #[arg(long, value_delimiter = ',')]
        pe: Option<Vec<u64>>,
        /// Emit `key=value` lines instead of aligned text.
        #[arg(long)]
        structured: bool,
    },
    /// Three-step block-size exploration with real training as the oracle.
    Explore {
        #[arg(long)]
        config: PathBuf,
        /// Allowed error-rate increase over the uncompressed baseline.
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        capacity: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> circrnn::Result<Exit> {
    match cmd {
        Command::Train {
            config,
            output,
            trace,
            seed,
        } => commands::train(
            &commands::TrainArgs {
                config,
                output,
                trace,
                seed,
            },
            out,
            err,
        ),
        Command::Infer {
            model,
            input,
            quantized,
            compare_dense,
        } => commands::infer(
            &commands::InferArgs {
                model,
                input,
                quantized,
                compare_dense,
            },
            out,
            err,
        ),
        Command::Quantize {
            model,
            output,
            calibration,
            bits,
            activation,
            segments,
        } => {
            let activation = match activation {
                ActivationArg::Exact => ActivationMode::Exact,
                ActivationArg::Pwl => ActivationMode::Pwl { segments },
            };
            commands::quantize(
                &commands::QuantizeArgs {
                    model,
                    output,
                    calibration,
                    bits,
                    activation,
                },
                out,
                err,
            )
        }
        Command::Cost {
            cell,
            layers,
            input_dim,
            projection,
            output_dim,
            block,
            io_block,
            bits,
            capacity,
            reserve,
            pe,
            structured,
        } => {
            let pe = match pe.as_deref() {
                None => None,
                Some(&[dsp_total, lut_total, dsp_per_pe, lut_per_pe]) => Some(PeBudget {
                    dsp_total,
                    lut_total,
                    dsp_per_pe,
                    lut_per_pe,
                }),
                Some(v) => {
                    return Err(circrnn::Error::Config(format!("--pe takes 4 values, got {}", v.len())));
                }
            };
            commands::cost(
                &commands::CostArgs {
                    cell,
                    layers,
                    input_dim,
                    projection,
                    output_dim,
                    block,
                    io_block,
                    bits,
                    capacity,
                    reserve,
                    pe,
                    structured,
                },
                out,
                err,
            )
        }
        Command::Explore {
            config,
            tolerance,
            capacity,
            seed,
        } => commands::explore(
            &commands::ExploreArgs {
                config,
                tolerance,
                capacity,
                seed,
            },
            out,
            err,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    let code = match run(cli.command, &mut out, &mut err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            Exit::of(&e)
        }
    };
    let _ = out.flush();
    ExitCode::from(code as u8)
}
