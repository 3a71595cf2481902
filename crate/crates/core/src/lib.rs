//! Block-circulant compression of LSTM/GRU networks.

pub mod admm;
pub mod arch;
pub mod circulant;
pub mod cost;
pub mod dense;
pub mod error;
pub mod fft;
pub mod matrix;
pub mod model_file;
pub mod quant;
pub mod rnn;
pub mod task;

pub use error::{Error, Result};
