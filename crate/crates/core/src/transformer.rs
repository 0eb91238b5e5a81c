//! Multi-head self-attention, pre-norm encoder layers and sinusoidal
//! positional encoding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, Bound, Dropout, LayerNorm, Linear};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::tokenizer::PaddingMask;

/// Finite stand-in for `-inf` in additive attention masks.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize, causal: bool) -> Result<Self> {
        if n_heads == 0 || d_model == 0 || d_model % n_heads != 0 {
            return Err(Error::contract(format!(
                "d_model {d_model} is not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            d_model,
            n_heads,
            causal,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Lower-triangular additive mask: `0` on and below the diagonal, `-inf` above.
pub fn causal_mask(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |k| {
        if k % n <= k / n {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn positional_encoding(n: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::contract(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    Ok(Tensor::from_fn(&[n, d_model], |k| {
        let (pos, j) = (k / d_model, k % d_model);
        let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

fn blocked(v: f64) -> bool {
    v <= MASK_VALUE
}

/// Combines the causal rule, an optional explicit additive mask and a
/// padding mask into one finite additive mask.
///
/// Padded keys are hidden from every other query. A padded query attends
/// only to itself, so its row stays well defined without leaking into any
/// retained position.
pub fn build_attention_mask(
    n: usize,
    causal: bool,
    explicit: Option<&Tensor>,
    pad: Option<&PaddingMask>,
) -> Result<Tensor> {
    if let Some(m) = explicit {
        if m.shape() != [n, n] {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: vec![n, n],
                rhs: m.shape().to_vec(),
            });
        }
    }
    if let Some(p) = pad {
        if p.len() != n {
            return Err(Error::contract(format!(
                "padding mask covers {} tokens, sequence has {n}",
                p.len()
            )));
        }
    }
    let mut mask = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let mut open = 0;
        for j in 0..n {
            let mut v = explicit.map_or(0.0, |m| m.at(&[i, j]));
            if causal && j > i {
                v = MASK_VALUE;
            }
            if let Some(p) = pad {
                if (!p.is_kept(j) || !p.is_kept(i)) && i != j {
                    v = MASK_VALUE;
                }
            }
            if blocked(v) {
                v = MASK_VALUE;
            } else {
                open += 1;
            }
            mask.data_mut()[i * n + j] = v;
        }
        if open == 0 {
            return Err(Error::DegenerateMask { row: i });
        }
    }
    Ok(mask)
}

/// Projections of one multi-head attention block. Q/K/V carry no bias.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Linear,
}

impl AttentionWeights {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        d_model: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut proj = |suffix: &str, rng: &mut R| {
            store.insert(
                format!("{name}.{suffix}"),
                nn::xavier_uniform(&[d_model, d_model], d_model, d_model, rng),
            )
        };
        let wq = proj("wq", rng)?;
        let wk = proj("wk", rng)?;
        let wv = proj("wv", rng)?;
        let out = Linear::new(store, &format!("{name}.out"), d_model, d_model, rng)?;
        Ok(Self { wq, wk, wv, out })
    }
}

fn split_heads(g: &mut Graph, x: Var, cfg: &AttentionConfig, axes: &[usize]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (b, n) = (shape[0], shape[1]);
    let x = g.reshape(x, &[b, n, cfg.n_heads, cfg.d_k()])?;
    g.permute(x, axes)
}

/// Multi-head attention on `x: [B, n, d]` with a prebuilt additive mask.
pub(crate) fn attention_masked(
    g: &mut Graph,
    p: &Bound,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
    x: Var,
    mask: &Tensor,
    drop: &mut Option<&mut Dropout>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let [b, n, d] = shape[..] else {
        return Err(Error::contract(format!("attention input must be rank 3, got {shape:?}")));
    };
    if d != cfg.d_model {
        return Err(Error::Shape {
            op: "attention",
            lhs: shape.clone(),
            rhs: vec![cfg.d_model],
        });
    }
    let q = g.matmul(x, p.get(w.wq))?;
    let k = g.matmul(x, p.get(w.wk))?;
    let v = g.matmul(x, p.get(w.wv))?;
    let q = split_heads(g, q, cfg, &[0, 2, 1, 3])?; // [B, h, n, dk]
    let k = split_heads(g, k, cfg, &[0, 2, 3, 1])?; // [B, h, dk, n]
    let v = split_heads(g, v, cfg, &[0, 2, 1, 3])?;
    let scores = g.matmul(q, k)?;
    let scores = g.scale(scores, 1.0 / (cfg.d_k() as f64).sqrt());
    let scores = g.add_const(scores, mask)?;
    let probs = g.softmax_lastdim(scores)?;
    let probs = nn::dropout(drop, g, probs)?;
    let ctx = g.matmul(probs, v)?; // [B, h, n, dk]
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, n, d])?;
    w.out.forward(g, p, ctx)
}

/// Multi-head self-attention over `x: [n, d]` or `[B, n, d]`.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    g: &mut Graph,
    p: &Bound,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
    x: Var,
    mask: Option<&Tensor>,
    pad: Option<&PaddingMask>,
) -> Result<Var> {
    with_batch_axis(g, x, |g, x, n| {
        let m = build_attention_mask(n, cfg.causal, mask, pad)?;
        attention_masked(g, p, w, cfg, x, &m, &mut None)
    })
}

fn with_batch_axis(
    g: &mut Graph,
    x: Var,
    f: impl FnOnce(&mut Graph, Var, usize) -> Result<Var>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    match shape[..] {
        [n, d] => {
            let x3 = g.reshape(x, &[1, n, d])?;
            let y = f(g, x3, n)?;
            g.reshape(y, &[n, d])
        }
        [_, n, _] => f(g, x, n),
        _ => Err(Error::contract(format!(
            "encoder input must be [n, d] or [B, n, d], got {shape:?}"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: AttentionWeights,
    pub norm_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// Feed-forward expansion relative to `d_model`.
pub const FF_MULTIPLIER: usize = 4;

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        d_model: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = FF_MULTIPLIER * d_model;
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d_model)?,
            attn: AttentionWeights::new(store, &format!("{name}.attn"), d_model, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d_model)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), d_model, hidden, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), hidden, d_model, rng)?,
        })
    }

    pub fn num_params(d_model: usize) -> usize {
        let hidden = FF_MULTIPLIER * d_model;
        2 * 2 * d_model
            + 3 * d_model * d_model
            + Linear::num_params(d_model, d_model)
            + Linear::num_params(d_model, hidden)
            + Linear::num_params(hidden, d_model)
    }

    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        cfg: &AttentionConfig,
        x: Var,
        mask: &Tensor,
        drop: &mut Option<&mut Dropout>,
    ) -> Result<Var> {
        let h = self.norm_attn.forward(g, p, x)?;
        let h = attention_masked(g, p, &self.attn, cfg, h, mask, drop)?;
        let x = g.add(x, h)?;
        let h = self.norm_ff.forward(g, p, x)?;
        let h = self.ff_in.forward(g, p, h)?;
        let h = g.gelu(h);
        let h = nn::dropout(drop, g, h)?;
        let h = self.ff_out.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Ordered stack of encoder layers sharing one attention configuration.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub config: AttentionConfig,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        config: AttentionConfig,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| EncoderLayer::new(store, &format!("{name}.layers.{l}"), config.d_model, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, config })
    }

    /// Runs every layer over `z: [n, d]` or `[B, n, d]`. The explicit
    /// mask, when given, is combined with the causal rule of the stack.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        z: Var,
        mask: Option<&Tensor>,
        pad: Option<&PaddingMask>,
        mut drop: Option<&mut Dropout>,
    ) -> Result<Var> {
        let d = *g.shape(z).last().unwrap();
        if d != self.config.d_model {
            return Err(Error::Shape {
                op: "encoder",
                lhs: g.shape(z).to_vec(),
                rhs: vec![self.config.d_model],
            });
        }
        if self.layers.is_empty() {
            return Ok(z);
        }
        with_batch_axis(g, z, |g, mut x, n| {
            let m = build_attention_mask(n, self.config.causal, mask, pad)?;
            for layer in &self.layers {
                x = layer.forward(g, p, &self.config, x, &m, &mut drop)?;
            }
            Ok(x)
        })
    }
}
