//! Contextual block streaming encoder.
//!
//! Each block is encoded together with one extra leading sequence position,
//! the context slot, which is fed the context vector inherited from the
//! previous block. Every frame position may attend to the slot; the slot's
//! final-layer state, passed through a write projection, becomes the context
//! vector handed to the next block. Layers are pre-norm self-attention and
//! feed-forward sublayers with residual connections.

use crate::attention::AttentionMask;
use crate::blocking::{segment, Block, BlockSpec};
use crate::error::{shape, Result};
use crate::graph::{Graph, Var};
use crate::nn::{FeedForward, LayerNorm, Linear};
use crate::params::ParamBuilder;
use crate::tensor::{ParamId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_feat: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderLayer {
    norm1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: LayerNorm,
    ff: FeedForward,
}

/// Parameter layout of the block encoder. Values live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct CbsEncoder {
    pub config: EncoderConfig,
    input: Linear,
    ctx_read: Linear,
    ctx_write: Linear,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    initial_context: ParamId,
}

/// The inherited context embedding `c_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector(pub Tensor);

impl ContextVector {
    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

/// Encoder output for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockEncoding {
    /// Rows for the in-stream target frames.
    pub target: Tensor,
    /// Rows for the in-stream look-ahead frames.
    pub lookahead: Tensor,
    pub context: ContextVector,
}

impl CbsEncoder {
    pub fn build(b: &mut dyn ParamBuilder, config: EncoderConfig) -> Result<Self> {
        let EncoderConfig { d_feat, d_model: d, layers, heads, ff_dim } = config;
        if layers == 0 || heads == 0 || d % heads != 0 {
            return Err(shape(format!("encoder with {layers} layers, {heads} heads, width {d}")));
        }
        let layers = (0..layers)
            .map(|i| {
                let p = format!("enc.layer{i}");
                Ok(EncoderLayer {
                    norm1: b.layer_norm(&format!("{p}.norm1"), d)?,
                    query: b.linear(&format!("{p}.query"), d, d)?,
                    key: b.linear(&format!("{p}.key"), d, d)?,
                    value: b.linear(&format!("{p}.value"), d, d)?,
                    out: b.linear(&format!("{p}.out"), d, d)?,
                    norm2: b.layer_norm(&format!("{p}.norm2"), d)?,
                    ff: FeedForward {
                        up: b.linear(&format!("{p}.ff_up"), d, ff_dim)?,
                        down: b.linear(&format!("{p}.ff_down"), ff_dim, d)?,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            input: b.linear("enc.input", d_feat, d)?,
            ctx_read: b.linear("enc.ctx_read", d, d)?,
            ctx_write: b.linear("enc.ctx_write", d, d)?,
            layers,
            final_norm: b.layer_norm("enc.final_norm", d)?,
            initial_context: b.tensor("enc.initial_context", vec![1, d], d)?,
        })
    }

    pub fn initial_context_id(&self) -> ParamId {
        self.initial_context
    }

    /// Records one block: returns `([L×D] position outputs, [1×D] next context)`.
    /// `mask` covers the context slot plus the `L` block positions.
    pub fn forward_block(
        &self,
        g: &mut Graph<'_>,
        frames: &Tensor,
        c_prev: Var,
        mask: &AttentionMask,
    ) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let len = frames.rows();
        if frames.cols() != cfg.d_feat {
            return Err(shape(format!("frames of width {} for d_feat {}", frames.cols(), cfg.d_feat)));
        }
        if mask.rows() != len + 1 || mask.cols() != len + 1 {
            return Err(shape(format!(
                "mask {}×{} for a block of {len} positions plus context slot",
                mask.rows(),
                mask.cols()
            )));
        }
        if g.dims(c_prev) != (1, cfg.d_model) {
            return Err(shape(format!("context of shape {:?}", g.shape(c_prev))));
        }
        let x = g.input(frames.clone());
        let x = self.input.forward(g, x)?;
        let pe = g.input(positional_encoding(len, cfg.d_model));
        let x = g.add(x, pe)?;
        let slot = self.ctx_read.forward(g, c_prev)?;
        let mut h = g.concat_rows(&[slot, x])?;
        for layer in &self.layers {
            let a = layer.norm1.forward(g, h)?;
            let q = layer.query.forward(g, a)?;
            let k = layer.key.forward(g, a)?;
            let v = layer.value.forward(g, a)?;
            let att = g.attention(q, k, v, mask, cfg.heads)?;
            let o = layer.out.forward(g, att)?;
            h = g.add(h, o)?;
            let f = layer.norm2.forward(g, h)?;
            let f = layer.ff.forward(g, f)?;
            h = g.add(h, f)?;
        }
        let y = self.final_norm.forward(g, h)?;
        let out = g.slice_rows(y, 1, len)?;
        let slot_out = g.slice_rows(y, 0, 1)?;
        let c_next = self.ctx_write.forward(g, slot_out)?;
        Ok((out, c_next))
    }

    /// Records the encoding of a whole stream, chaining the context through
    /// every block. `suffix_k` hides the last `k·Nc` positions of every block.
    pub fn forward_stream(
        &self,
        g: &mut Graph<'_>,
        frames: &Tensor,
        spec: &BlockSpec,
        suffix_k: usize,
    ) -> Result<Vec<(Block, Var)>> {
        let blocks = segment(frames, spec)?;
        let mut c = g.param(self.initial_context);
        let mut out = Vec::with_capacity(blocks.len());
        for block in blocks {
            let mask = block.attention_mask(suffix_k)?;
            let (h, c_next) = self.forward_block(g, &block.frames, c, &mask)?;
            c = c_next;
            out.push((block, h));
        }
        Ok(out)
    }
}

/// Sinusoidal position table `[len × d]`, indexed by position within a block.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for p in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = p as f64 * freq;
            data[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, d, data).expect("table shape")
}

/// Inference view of an encoder over shared, immutable parameters.
#[derive(Clone, Copy)]
pub struct Encoder<'a> {
    pub params: &'a ParamSet,
    pub layout: &'a CbsEncoder,
}

impl<'a> Encoder<'a> {
    pub fn init_context(&self) -> ContextVector {
        ContextVector(self.params.get(self.layout.initial_context).clone())
    }

    /// Encodes one block given the previous context and a mask over the
    /// context slot plus the block positions.
    pub fn encode_block(
        &self,
        block: &Block,
        c_prev: &ContextVector,
        mask: &AttentionMask,
    ) -> Result<BlockEncoding> {
        let (full, context) = self.encode_positions(block, c_prev, mask)?;
        let t = block.target_positions();
        let la = block.lookahead_positions();
        Ok(BlockEncoding {
            target: full.slice_rows(t.start, t.len()),
            lookahead: full.slice_rows(la.start, la.len()),
            context,
        })
    }

    /// Like [`Encoder::encode_block`] but returns one row per block position.
    pub fn encode_positions(
        &self,
        block: &Block,
        c_prev: &ContextVector,
        mask: &AttentionMask,
    ) -> Result<(Tensor, ContextVector)> {
        let mut g = Graph::with_params(self.params);
        let c = g.input(c_prev.0.clone());
        let (h, c_next) = self.layout.forward_block(&mut g, &block.frames, c, mask)?;
        Ok((g.tensor(h), ContextVector(g.tensor(c_next))))
    }

    /// Folds [`Encoder::encode_block`] over `segment(frames, spec)`.
    pub fn encode_stream(&self, frames: &Tensor, spec: &BlockSpec) -> Result<Vec<BlockEncoding>> {
        let mut c = self.init_context();
        let mut out = Vec::new();
        for block in segment(frames, spec)? {
            let enc = self.encode_block(&block, &c, &block.attention_mask(0)?)?;
            c = enc.context.clone();
            out.push(enc);
        }
        Ok(out)
    }
}
