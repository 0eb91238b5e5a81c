//! SeismoGPT: autoregressive transformer forecasting of three-component
//! seismic waveforms, for single stations and for a 16-station array.

pub mod error;
pub mod forecasting;
pub mod io;
pub mod models;
pub mod nn;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use params::{ParamId, ParameterStore};
pub use tensor::{AdamConfig, AdamState, Graph, Tensor, Var};
