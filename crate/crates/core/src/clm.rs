//! The frozen causal language model that turns prompts into last-token
//! embeddings.
//!
//! Attention is causal and additionally calibrated: a pre-softmax penalty
//! `-delta` is applied between tokens of different modality (text versus
//! numeric literal), which shifts weight toward intra-modality interactions.
//! Parameters are seeded once and never updated.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, MAGIC_CLM};
use crate::error::{contract, shape_err, Error, Result};
use crate::nn::{AttentionOut, Dropout, MultiHeadAttention, PreLnBlock};
use crate::prompting::{Modality, TaggedTokenSequence, Vocabulary};
use crate::tensor::{BoundParams, Graph, ParamId, ParamStore, Real, Tensor, Var, MASKED};

pub const CLM_INIT_STD: f64 = 0.02;

static ENCODE_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of [`Clm::encode`] invocations in this process so far.
pub fn encode_calls() -> usize {
    ENCODE_CALLS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClmConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Cross-modality penalty; zero gives plain causal attention.
    pub delta: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ClmConfig {
    fn default() -> Self {
        Self {
            vocab_size: Vocabulary::standard().len(),
            width: 64,
            layers: 12,
            heads: 4,
            ffn_mult: 4,
            delta: std::f64::consts::LN_10,
            max_len: 2048,
            seed: 0,
        }
    }
}

impl ClmConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(contract(format!(
                "language model width {} must be a multiple of {} heads",
                self.width, self.heads
            )));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(contract(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return Err(contract("vocabulary size and max length must be positive"));
        }
        Ok(())
    }

    /// Architecture description written into weight files. `delta` and `seed`
    /// are excluded: neither changes the parameter layout.
    pub fn echo(&self) -> String {
        format!(
            "vocab_size = {}\nclm_width = {}\nclm_layers = {}\nclm_heads = {}\nclm_ffn_mult = {}\nclm_max_len = {}\n",
            self.vocab_size, self.width, self.layers, self.heads, self.ffn_mult, self.max_len
        )
    }
}

/// Additive `S×S` attention mask: causal and padding entries are masked,
/// permitted cross-modality entries get `-delta`, everything else is zero.
pub fn build_mask<T: Real>(tags: &[Modality], true_len: usize, delta: f64) -> Result<Tensor<T>> {
    let s = tags.len();
    if true_len > s {
        return Err(contract(format!("true length {true_len} exceeds sequence length {s}")));
    }
    let masked = T::lit(MASKED);
    let penalty = T::lit(-delta);
    Ok(Tensor::from_fn([s, s], |k| {
        let (i, j) = (k / s, k % s);
        if j > i || j >= true_len {
            masked
        } else if delta > 0.0 && tags[i] != tags[j] {
            penalty
        } else {
            T::zero()
        }
    }))
}

/// Standard causal mask with padding, no calibration.
pub fn causal_mask<T: Real>(s: usize, true_len: usize) -> Result<Tensor<T>> {
    build_mask(&vec![Modality::Text; s], true_len, 0.0)
}

/// One calibrated attention sublayer: per head `softmax(QKᵀ/√d_k + mask)·V`,
/// heads concatenated, then the output projection.
pub fn calibrated_attention<T: Real>(
    g: &mut Graph<T>,
    p: &BoundParams,
    attn: &MultiHeadAttention,
    x: Var,
    mask: Var,
) -> Result<AttentionOut> {
    attn.forward(g, p, x, Some(mask))
}

/// Hidden states and, when requested, every layer's per-head attention maps.
#[derive(Debug, Clone)]
pub struct ClmOutput<T> {
    pub hidden: Tensor<T>,
    /// `attention[layer][head]` is an `S×S` row-stochastic matrix.
    pub attention: Vec<Vec<Tensor<T>>>,
}

#[derive(Debug, Clone)]
pub struct Clm<T> {
    cfg: ClmConfig,
    store: ParamStore<T>,
    embed: ParamId,
    pe: ParamId,
    blocks: Vec<PreLnBlock>,
}

impl<T: Real> Clm<T> {
    pub fn new(cfg: ClmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new(false);
        let d = cfg.width;
        let embed = store.add(
            "clm.embed",
            crate::nn::normal_tensor(&[cfg.vocab_size, d], CLM_INIT_STD, &mut rng),
        );
        let pe = store.add(
            "clm.pe",
            crate::nn::normal_tensor(&[cfg.max_len, d], CLM_INIT_STD, &mut rng),
        );
        let blocks = (0..cfg.layers)
            .map(|i| {
                PreLnBlock::new(
                    &mut store,
                    &format!("clm.{i}"),
                    d,
                    cfg.heads,
                    cfg.ffn_mult * d,
                    CLM_INIT_STD,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            store,
            embed,
            pe,
            blocks,
        })
    }

    pub fn config(&self) -> &ClmConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn numel(&self) -> usize {
        self.store.numel()
    }

    pub fn checksum(&self) -> [u8; 32] {
        self.store.checksum()
    }

    /// Encodes one sequence with the calibrated mask for `delta`.
    pub fn encode(&self, seq: &TaggedTokenSequence) -> Result<Tensor<T>> {
        Ok(self.run(seq, None, false)?.hidden)
    }

    /// Like [`Clm::encode`] but also returns the attention maps.
    pub fn encode_with_attention(&self, seq: &TaggedTokenSequence) -> Result<ClmOutput<T>> {
        self.run(seq, None, true)
    }

    /// Encodes with a caller-supplied additive mask in place of the calibrated one.
    pub fn encode_with_mask(
        &self,
        seq: &TaggedTokenSequence,
        mask: &Tensor<T>,
        keep_attention: bool,
    ) -> Result<ClmOutput<T>> {
        self.run(seq, Some(mask), keep_attention)
    }

    fn run(
        &self,
        seq: &TaggedTokenSequence,
        mask: Option<&Tensor<T>>,
        keep_attention: bool,
    ) -> Result<ClmOutput<T>> {
        ENCODE_CALLS.fetch_add(1, Ordering::SeqCst);
        let s = seq.len();
        if s > self.cfg.max_len {
            return Err(Error::Length {
                len: s,
                max: self.cfg.max_len,
            });
        }
        if s == 0 {
            return Err(contract("cannot encode an empty sequence"));
        }
        if seq.tags.len() != s {
            return Err(shape_err(format!("{} ids but {} tags", s, seq.tags.len())));
        }
        let ids = seq
            .ids
            .iter()
            .map(|&id| {
                let id = id as usize;
                if id < self.cfg.vocab_size {
                    Ok(id)
                } else {
                    Err(contract(format!("token id {id} outside vocabulary")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = match mask {
            Some(m) if m.shape() == [s, s] => m.clone(),
            Some(m) => return Err(shape_err(format!("mask {:?} for sequence of {s}", m.shape()))),
            None => build_mask(&seq.tags, seq.true_len, self.cfg.delta)?,
        };

        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let tok = g.gather_rows(p[self.embed], &ids)?;
        let positions: Vec<usize> = (0..s).collect();
        let pos = g.gather_rows(p[self.pe], &positions)?;
        let mut x = g.add(tok, pos)?;
        let mask = g.constant(mask);
        let mut attention = Vec::new();
        let mut off = Dropout::off();
        for block in &self.blocks {
            let o = block.forward(&mut g, &p, x, Some(mask), &mut off)?;
            x = o.out;
            if keep_attention {
                attention.push(o.weights.iter().map(|&w| g.value(w).clone()).collect());
            }
        }
        Ok(ClmOutput {
            hidden: g.value(x).clone(),
            attention,
        })
    }

    /// Last-token embeddings of one prompt per variable, as an `N×D` matrix.
    pub fn last_tokens(&self, seqs: &[TaggedTokenSequence]) -> Result<Tensor<T>> {
        let hidden = seqs
            .iter()
            .map(|s| self.encode(s))
            .collect::<Result<Vec<_>>>()?;
        let lens: Vec<usize> = seqs.iter().map(|s| s.true_len).collect();
        extract_last_token(&hidden, &lens)
    }

    /// Writes the parameters as a `TKDW` weight file.
    pub fn export_weights(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, MAGIC_CLM, &self.cfg.echo(), &self.store)
    }

    /// Replaces the seeded parameters with those of a `TKDW` weight file.
    pub fn import_weights(&mut self, path: &Path) -> Result<()> {
        let file = checkpoint::load(path, MAGIC_CLM)?;
        if file.echo != self.cfg.echo() {
            return Err(Error::Format {
                offset: 10,
                msg: "weight file architecture does not match the configured model".into(),
            });
        }
        file.load_into(&mut self.store)
    }
}

/// Row `true_len - 1` of each variable's hidden states, stacked into `N×D`.
pub fn extract_last_token<T: Real>(hidden: &[Tensor<T>], true_lens: &[usize]) -> Result<Tensor<T>> {
    if hidden.len() != true_lens.len() {
        return Err(shape_err(format!(
            "{} hidden matrices but {} lengths",
            hidden.len(),
            true_lens.len()
        )));
    }
    if hidden.is_empty() {
        return Err(contract("no variables to extract"));
    }
    let d = hidden[0].cols();
    let mut data = Vec::with_capacity(hidden.len() * d);
    for (h, &len) in hidden.iter().zip(true_lens) {
        if len == 0 || len > h.rows() || h.cols() != d {
            return Err(contract(format!(
                "cannot take token {len} of a {:?} hidden matrix",
                h.shape()
            )));
        }
        data.extend_from_slice(h.row(len - 1));
    }
    Tensor::new([hidden.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Modality::{Text, TimeSeries};

    fn tiny(layers: usize, delta: f64) -> Clm<f64> {
        Clm::new(ClmConfig {
            vocab_size: 20,
            width: 8,
            layers,
            heads: 2,
            ffn_mult: 2,
            delta,
            max_len: 16,
            seed: 3,
        })
        .unwrap()
    }

    fn seq(ids: &[u32], tags: &[Modality]) -> TaggedTokenSequence {
        TaggedTokenSequence {
            ids: ids.to_vec(),
            tags: tags.to_vec(),
            true_len: ids.len(),
            vocab_version: 0,
        }
    }

    #[test]
    fn mask_example() {
        let m = build_mask::<f64>(&[Text, TimeSeries], 2, 5.0).unwrap();
        assert_eq!(m.data(), &[0.0, MASKED, -5.0, 0.0]);
    }

    #[test]
    fn zero_delta_is_causal_bitwise() {
        let tags = [Text, TimeSeries, TimeSeries, Text];
        let a = build_mask::<f64>(&tags, 3, 0.0).unwrap();
        let b = causal_mask::<f64>(4, 3).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_layers_gives_embedding_plus_position() {
        let clm = tiny(0, 1.0);
        let h = clm.encode(&seq(&[4, 7], &[Text, Text])).unwrap();
        let p = clm.params();
        let e = p.get(clm.embed);
        let pe = p.get(clm.pe);
        for j in 0..8 {
            assert_eq!(h.at(0, j), e.at(4, j) + pe.at(0, j));
            assert_eq!(h.at(1, j), e.at(7, j) + pe.at(1, j));
        }
    }

    #[test]
    fn too_long_is_length_error() {
        let clm = tiny(1, 1.0);
        let s = seq(&[2; 17], &[Text; 17]);
        assert!(matches!(clm.encode(&s), Err(Error::Length { len: 17, max: 16 })));
    }

    #[test]
    fn padding_does_not_leak() {
        let clm = tiny(2, 1.0);
        let mut a = seq(&[3, 4, 5], &[Text, TimeSeries, Text]);
        let mut b = a.clone();
        a.ids.extend([0, 0]);
        a.tags.extend([Text, Text]);
        b.ids.extend([9, 11]);
        b.tags.extend([TimeSeries, Text]);
        let ha = clm.encode(&a).unwrap();
        let hb = clm.encode(&b).unwrap();
        let la = extract_last_token(&[ha.clone()], &[3]).unwrap();
        let lb = extract_last_token(&[hb], &[3]).unwrap();
        assert_eq!(la.data(), lb.data());
        let unpadded = clm.encode(&seq(&[3, 4, 5], &[Text, TimeSeries, Text])).unwrap();
        assert_eq!(&ha.data()[..24], unpadded.data());
    }

    #[test]
    fn causality_under_perturbation() {
        let clm = tiny(2, 2.0);
        let base = seq(&[3, 4, 5, 6, 7], &[Text, TimeSeries, TimeSeries, Text, Text]);
        let h0 = clm.encode(&base).unwrap();
        let mut moved = base.clone();
        moved.ids[2] = 12;
        let h1 = clm.encode(&moved).unwrap();
        assert_eq!(h0.row(0), h1.row(0));
        assert_eq!(h0.row(1), h1.row(1));
        assert_ne!(h0.row(2), h1.row(2));
    }

    #[test]
    fn repeated_calls_identical_and_counted() {
        let clm = tiny(1, 1.0);
        let s = seq(&[1, 2, 3], &[Text, TimeSeries, Text]);
        let before = encode_calls();
        let a = clm.encode(&s).unwrap();
        let b = clm.encode(&s).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(encode_calls() >= before + 2);
    }

    #[test]
    fn weight_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clm.tkdw");
        let a = tiny(1, 1.0);
        a.export_weights(&path).unwrap();
        let mut b = Clm::<f64>::new(ClmConfig {
            seed: 99,
            ..a.config().clone()
        })
        .unwrap();
        assert_ne!(a.checksum(), b.checksum());
        b.import_weights(&path).unwrap();
        let s = seq(&[1, 2], &[Text, TimeSeries]);
        // stored at 32 bits, so compare loosely
        assert!(a.encode(&s).unwrap().max_abs_diff(&b.encode(&s).unwrap()) < 1e-6);
        let mut c = tiny(2, 1.0);
        assert!(c.import_weights(&path).is_err());
    }

    #[test]
    fn extract_rows_in_variable_order() {
        let h1 = Tensor::<f64>::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let h2 = Tensor::<f64>::from_f64([2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = extract_last_token(&[h1, h2], &[2, 1]).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0, 5.0, 6.0]);
    }
}
