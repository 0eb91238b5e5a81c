//! The single-station and array forecasters, plus their checkpoint format.

mod array;
mod checkpoint;
mod single;

pub use array::ArrayModel;
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use single::SingleStationModel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Bound, Dropout};
use crate::params::ParameterStore;
use crate::tensor::{Graph, Tensor, Var};
use crate::tokenizer::{PaddingMask, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Single,
    Array,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Single => 0,
            ModelKind::Array => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Single),
            1 => Some(ModelKind::Array),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Single => "single",
            ModelKind::Array => "array",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(ModelKind::Single),
            "array" => Ok(ModelKind::Array),
            other => Err(format!("unknown model kind `{other}` (expected single|array)")),
        }
    }
}

/// Architecture hyperparameters; everything a checkpoint needs to rebuild
/// the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub token_len: usize,
    pub context_tokens: usize,
    pub n_stations: usize,
}

impl ModelConfig {
    pub fn single() -> Self {
        Self {
            kind: ModelKind::Single,
            d_model: 128,
            n_layers: 6,
            n_heads: 8,
            token_len: 16,
            context_tokens: 64,
            n_stations: 1,
        }
    }

    pub fn array() -> Self {
        Self {
            kind: ModelKind::Array,
            n_stations: 16,
            ..Self::single()
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Single => Self::single(),
            ModelKind::Array => Self::array(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.token_len == 0 || self.context_tokens == 0 || self.n_stations == 0 {
            return bad("token_len, context_tokens and n_stations must be positive".into());
        }
        if self.kind == ModelKind::Single && self.n_stations != 1 {
            return bad(format!(
                "single-station model with {} stations",
                self.n_stations
            ));
        }
        Ok(())
    }

    /// Flattened token width `L·3`.
    pub fn token_width(&self) -> usize {
        self.token_len * CHANNELS
    }
}

/// Either forecaster variant.
#[derive(Debug, Clone)]
pub enum SeismoGpt {
    Single(SingleStationModel),
    Array(ArrayModel),
}

impl SeismoGpt {
    /// Builds a freshly initialized model; initialization depends only on
    /// `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match config.kind {
            ModelKind::Single => SeismoGpt::Single(SingleStationModel::new(config, &mut rng)?),
            ModelKind::Array => SeismoGpt::Array(ArrayModel::new(config, &mut rng)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            SeismoGpt::Single(m) => &m.config,
            SeismoGpt::Array(m) => &m.config,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind
    }

    pub fn params(&self) -> &ParameterStore {
        match self {
            SeismoGpt::Single(m) => &m.params,
            SeismoGpt::Array(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        match self {
            SeismoGpt::Single(m) => &mut m.params,
            SeismoGpt::Array(m) => &mut m.params,
        }
    }

    /// Number of stations a sample carries.
    pub fn n_stations(&self) -> usize {
        self.config().n_stations
    }

    /// Records a forward pass for one sample. `x` is `[N, L, 3]` for the
    /// single-station model and `[S, N, L, 3]` for the array model; the
    /// result has the same shape, position `i` predicting token `i + 1`.
    pub fn forward_sample(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &Tensor,
        pad: Option<&PaddingMask>,
        drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        match self {
            SeismoGpt::Single(m) => m.forward_graph(g, p, x, pad, drop),
            SeismoGpt::Array(m) => {
                let mut shape = vec![1];
                shape.extend_from_slice(x.shape());
                let batched = x.clone().reshape(&shape)?;
                let y = m.forward_graph(g, p, &batched, pad, drop)?;
                g.reshape(y, x.shape())
            }
        }
    }

    /// Inference forward pass on one sample (see [`SeismoGpt::forward_sample`]).
    pub fn predict(&self, x: &Tensor, pad: Option<&PaddingMask>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::bind_frozen(&mut g, self.params());
        let y = self.forward_sample(&mut g, &p, x, pad, None)?;
        Ok(g.value(y).clone())
    }
}

/// Exact number of scalar parameters.
pub fn count_parameters(model: &SeismoGpt) -> usize {
    model.params().num_scalars()
}

/// Single-station forward: `[N, L, 3] -> [N, L, 3]`.
pub fn single_forward(
    model: &SingleStationModel,
    x: &Tensor,
    pad: Option<&PaddingMask>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = Bound::bind_frozen(&mut g, &model.params);
    let y = model.forward_graph(&mut g, &p, x, pad, None)?;
    Ok(g.value(y).clone())
}

/// Array forward: `[B, S, N, L, 3] -> [B, S, N·L, 3]`.
pub fn array_forward(model: &ArrayModel, x: &Tensor, pad: Option<&PaddingMask>) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = Bound::bind_frozen(&mut g, &model.params);
    let y = model.forward_graph(&mut g, &p, x, pad, None)?;
    Ok(g.value(y).clone())
}
