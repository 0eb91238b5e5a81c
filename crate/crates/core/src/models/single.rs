use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv1d, Dropout, LayerNorm, Linear};
use crate::params::ParameterStore;
use crate::tensor::{Graph, Tensor, Var};
use crate::tokenizer::{PaddingMask, CHANNELS};
use crate::transformer::{positional_encoding, AttentionConfig, EncoderStack};

/// Per-token embedding: the token is viewed as `(3, L)`, widened by two
/// kernel-3 convolutions to `d` channels, then mean-pooled over time.
#[derive(Debug, Clone)]
pub struct TokenEmbedding {
    pub conv_in: Conv1d,
    pub conv_out: Conv1d,
}

impl TokenEmbedding {
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        d_model: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv_in: Conv1d::new(store, "embed.conv_in", (CHANNELS, d_model / 2, 3), 1, rng)?,
            conv_out: Conv1d::new(store, "embed.conv_out", (d_model / 2, d_model, 3), 1, rng)?,
        })
    }

    /// `[N, L, 3]` tokens to `[N, d]`.
    pub(crate) fn forward(&self, g: &mut Graph, p: &Bound, tokens: &Tensor) -> Result<Var> {
        let x = g.constant(tokens.permute(&[0, 2, 1])?);
        let h = self.conv_in.forward(g, p, x)?;
        let h = g.gelu(h);
        let h = self.conv_out.forward(g, p, h)?;
        Ok(g.mean_lastdim(h))
    }
}

#[derive(Debug, Clone)]
pub struct SingleStationModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub embed: TokenEmbedding,
    pub encoder: EncoderStack,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl SingleStationModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let d = config.d_model;
        let embed = TokenEmbedding::new(&mut params, d, rng)?;
        let attn = AttentionConfig::new(d, config.n_heads, true)?;
        let encoder = EncoderStack::new(&mut params, "encoder", attn, config.n_layers, rng)?;
        let final_norm = LayerNorm::new(&mut params, "final_norm", d)?;
        let head = Linear::new(&mut params, "head", d, config.token_width(), rng)?;
        Ok(Self {
            config,
            params,
            embed,
            encoder,
            final_norm,
            head,
        })
    }

    /// Records `[N, L, 3] -> [N, L, 3]`; output `i` predicts token `i + 1`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &Tensor,
        pad: Option<&PaddingMask>,
        drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.config.token_len || shape[2] != CHANNELS {
            return Err(Error::contract(format!(
                "single-station input must be [N, {}, {CHANNELS}], got {shape:?}",
                self.config.token_len
            )));
        }
        let n = shape[0];
        let z = self.embed.forward(g, p, x)?;
        let z = g.add_const(z, &positional_encoding(n, self.config.d_model)?)?;
        let h = self.encoder.forward(g, p, z, None, pad, drop)?;
        let h = self.final_norm.forward(g, p, h)?;
        let y = self.head.forward(g, p, h)?;
        g.reshape(y, &[n, self.config.token_len, CHANNELS])
    }
}
