use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Dropout, LayerNorm, Linear};
use crate::params::ParameterStore;
use crate::tensor::{Graph, Tensor, Var};
use crate::tokenizer::{PaddingMask, CHANNELS};
use crate::transformer::{positional_encoding, AttentionConfig, EncoderStack};

/// Embedding over the (station, time) grid with `L·3` input channels and
/// 1×1 kernels, i.e. two pointwise maps `L·3 -> d/2 -> d`. No kernel spans
/// neighbouring time steps, so the embedding cannot see the future.
#[derive(Debug, Clone)]
pub struct GridEmbedding {
    pub conv_in: Linear,
    pub conv_out: Linear,
}

/// Two-branch forecaster: causal attention along time for every station and
/// full attention across stations for every time step; the branch outputs
/// are summed before the prediction head.
#[derive(Debug, Clone)]
pub struct ArrayModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub embed: GridEmbedding,
    pub temporal: EncoderStack,
    pub spatial: EncoderStack,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl ArrayModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let d = config.d_model;
        let w = config.token_width();
        let embed = GridEmbedding {
            conv_in: Linear::new(&mut params, "embed.conv_in", w, d / 2, rng)?,
            conv_out: Linear::new(&mut params, "embed.conv_out", d / 2, d, rng)?,
        };
        let temporal = EncoderStack::new(
            &mut params,
            "temporal",
            AttentionConfig::new(d, config.n_heads, true)?,
            config.n_layers,
            rng,
        )?;
        let spatial = EncoderStack::new(
            &mut params,
            "spatial",
            AttentionConfig::new(d, config.n_heads, false)?,
            config.n_layers,
            rng,
        )?;
        let final_norm = LayerNorm::new(&mut params, "final_norm", d)?;
        let head = Linear::new(&mut params, "head", d, w, rng)?;
        Ok(Self {
            config,
            params,
            embed,
            temporal,
            spatial,
            final_norm,
            head,
        })
    }

    /// Records `[B, S, N, L, 3] -> [B, S, N·L, 3]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &Tensor,
        pad: Option<&PaddingMask>,
        drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = x.shape().to_vec();
        let [b, s, n, l, c] = shape[..] else {
            return Err(Error::contract(format!(
                "array input must be [B, S, N, L, 3], got {shape:?}"
            )));
        };
        if l != cfg.token_len || c != CHANNELS {
            return Err(Error::contract(format!(
                "array input token must be [{}, {CHANNELS}], got [{l}, {c}]",
                cfg.token_len
            )));
        }
        if s != cfg.n_stations {
            return Err(Error::contract(format!(
                "model expects {} stations, input has {s}",
                cfg.n_stations
            )));
        }
        let d = cfg.d_model;
        let mut drop = drop;

        let flat = g.constant(x.clone().reshape(&[b, s, n, l * c])?);
        let z = self.embed.conv_in.forward(g, p, flat)?;
        let z = g.gelu(z);
        let z = self.embed.conv_out.forward(g, p, z)?; // [B, S, N, d]

        let zt = g.reshape(z, &[b * s, n, d])?;
        let zt = g.add_const(zt, &positional_encoding(n, d)?)?;
        let ht = self.temporal.forward(g, p, zt, None, pad, drop.as_deref_mut())?;
        let ht = g.reshape(ht, &[b, s, n, d])?;

        let zs = g.permute(z, &[0, 2, 1, 3])?;
        let zs = g.reshape(zs, &[b * n, s, d])?;
        let zs = g.add_const(zs, &positional_encoding(s, d)?)?;
        let hs = self.spatial.forward(g, p, zs, None, None, drop.as_deref_mut())?;
        let hs = g.reshape(hs, &[b, n, s, d])?;
        let hs = g.permute(hs, &[0, 2, 1, 3])?;

        let h = g.add(ht, hs)?;
        let h = self.final_norm.forward(g, p, h)?;
        let y = self.head.forward(g, p, h)?;
        g.reshape(y, &[b, s, n * l, c])
    }
}
