//! Parameterized layers recorded on a [`Graph`]: linear maps, layer norm, the
//! ReLU feed-forward network, multi-head attention and the Pre-LN block.
//!
//! The same [`PreLnBlock`] serves the frozen language model (with an additive
//! mask) and both variable-token encoders (bidirectional, no mask), so the
//! teacher and student encoders are one implementation with two parameter sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Result};
use crate::tensor::{BoundParams, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

pub fn normal_tensor<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(shape.to_vec(), |_| T::lit(dist.sample(rng)))
}

/// Dropout switch threaded through forward passes.
pub struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn apply<T: Real>(&mut self, g: &mut Graph<T>, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.p > 0.0 => g.dropout(x, self.p, rng),
            _ => x,
        }
    }
}

/// `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), normal_tensor(&[fan_in, fan_out], std, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add_bias(y, p[self.b])
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([dim])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gamma], p[self.beta], T::lit(LN_EPS))
    }
}

/// `max(0, x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, std, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, std, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h);
        self.down.forward(g, p, h)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

/// Output of one attention layer.
pub struct AttentionOut {
    pub out: Var,
    /// Row-stochastic weights, one `S×S` map per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(contract(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, std, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, std, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, std, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, std, rng),
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.q.fan_out / self.heads
    }

    /// Per head `softmax(Q·Kᵀ/√d_k + mask)·V`, heads concatenated, then the
    /// output projection.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
        mask: Option<Var>,
    ) -> Result<AttentionOut> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let dk = self.head_dim();
        let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let w = g.softmax_rows(scores)?;
            outs.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let out = self.o.forward(g, p, cat)?;
        Ok(AttentionOut { out, weights })
    }
}

/// `x ← Att(LN(x)) + x; x ← FFN(LN(x)) + x`.
#[derive(Debug, Clone)]
pub struct PreLnBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl PreLnBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, std, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_hidden, std, rng),
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
        mask: Option<Var>,
        dropout: &mut Dropout<'_>,
    ) -> Result<AttentionOut> {
        let h = self.ln1.forward(g, p, x)?;
        let att = self.attn.forward(g, p, h, mask)?;
        let a = dropout.apply(g, att.out);
        let x = g.add(a, x)?;
        let h = self.ln2.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        let f = dropout.apply(g, f);
        let out = g.add(f, x)?;
        Ok(AttentionOut {
            out,
            weights: att.weights,
        })
    }
}

/// Stack of bidirectional Pre-LN blocks over variable tokens.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<PreLnBlock>,
}

/// Encoder output: final tokens and the head-averaged last-layer attention.
pub struct EncoderOut {
    pub tokens: Var,
    pub attention: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

impl Encoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.layers == 0 {
            return Err(contract("encoder needs at least one layer"));
        }
        let std = 1.0 / (cfg.width as f64).sqrt();
        let blocks = (0..cfg.layers)
            .map(|i| {
                PreLnBlock::new(
                    store,
                    &format!("{name}.{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.ffn_hidden,
                    std,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<EncoderOut> {
        let mut x = x;
        let mut last = Vec::new();
        for block in &self.blocks {
            let o = block.forward(g, p, x, None, dropout)?;
            x = o.out;
            last = o.weights;
        }
        let attention = if last.len() == 1 {
            last[0]
        } else {
            g.mean_of(&last)?
        };
        Ok(EncoderOut {
            tokens: x,
            attention,
        })
    }
}
