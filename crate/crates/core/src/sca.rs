//! Subtractive cross attention.
//!
//! A channel-wise `D×D` similarity between the ground-truth and history
//! last-token embeddings estimates the content they share. That shared part
//! is projected back and subtracted from the ground-truth embedding, leaving
//! the information only the future values carry.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{FeedForward, LayerNorm, Linear};
use crate::tensor::{BoundParams, Graph, ParamStore, Real, Var};

pub const SCA_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct ScaParams {
    pub phi_q: Linear,
    pub phi_k: Linear,
    pub phi_v: Linear,
    pub theta_c: Linear,
    pub ln_q: LayerNorm,
    pub ln_k: LayerNorm,
    pub ln_out: LayerNorm,
    pub ffn: FeedForward,
}

impl ScaParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let s = SCA_INIT_STD;
        Self {
            phi_q: Linear::new(store, &format!("{name}.phi_q"), dim, dim, s, rng),
            phi_k: Linear::new(store, &format!("{name}.phi_k"), dim, dim, s, rng),
            phi_v: Linear::new(store, &format!("{name}.phi_v"), dim, dim, s, rng),
            theta_c: Linear::new(store, &format!("{name}.theta_c"), dim, dim, s, rng),
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), dim),
            ln_k: LayerNorm::new(store, &format!("{name}.ln_k"), dim),
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_hidden, s, rng),
        }
    }

    /// `M_C = softmax_rows(LN(φq(l_gt))ᵀ · LN(φk(l_hd)))`, a `D×D` matrix.
    pub fn channel_similarity<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        l_gt: Var,
        l_hd: Var,
    ) -> Result<Var> {
        check_pair(g, l_gt, l_hd)?;
        let q = self.phi_q.forward(g, p, l_gt)?;
        let q = self.ln_q.forward(g, p, q)?;
        let k = self.phi_k.forward(g, p, l_hd)?;
        let k = self.ln_k.forward(g, p, k)?;
        let qt = g.transpose(q)?;
        let scores = g.matmul(qt, k)?;
        g.softmax_rows(scores)
    }

    /// `FFN(LN(l_gt − ϑc(φv(l_hd)·M_C)))`. There is no residual connection.
    pub fn subtractive_refine<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        l_gt: Var,
        l_hd: Var,
        m_c: Var,
    ) -> Result<Var> {
        check_pair(g, l_gt, l_hd)?;
        let v = self.phi_v.forward(g, p, l_hd)?;
        let shared = g.matmul(v, m_c)?;
        let shared = self.theta_c.forward(g, p, shared)?;
        let purified = g.sub(l_gt, shared)?;
        let h = self.ln_out.forward(g, p, purified)?;
        self.ffn.forward(g, p, h)
    }

    /// Both steps: similarity, then refinement.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        l_gt: Var,
        l_hd: Var,
    ) -> Result<Var> {
        let m_c = self.channel_similarity(g, p, l_gt, l_hd)?;
        self.subtractive_refine(g, p, l_gt, l_hd, m_c)
    }
}

/// The ablated block: elementwise `l_gt − l_hd`.
pub fn plain_subtraction<T: Real>(g: &mut Graph<T>, l_gt: Var, l_hd: Var) -> Result<Var> {
    check_pair(g, l_gt, l_hd)?;
    g.sub(l_gt, l_hd)
}

fn check_pair<T: Real>(g: &Graph<T>, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 2 {
        return Err(shape_err(format!(
            "ground-truth {:?} and history {:?} embeddings differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}
