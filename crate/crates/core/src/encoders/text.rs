//! Transformer text encoder producing the sentence vector `s` and the
//! per-token matrix `C` (hidden × tokens, one column per token).

use serde::{Deserialize, Serialize};

use super::tokenize::{TokenSeq, SEQ_LEN};
use crate::diffcore::{Graph, ParamStore, RngStream, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{dense, expect_shape, leading_columns, linear, one_hot_rows};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    /// Hidden size `u`.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 2,
            vocab_size: 4,
            seq_len: SEQ_LEN,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.vocab_size == 0 {
            return Err(Error::Contract(format!("text encoder dimensions must be ≥ 1: {self:?}")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Contract(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.seq_len != SEQ_LEN {
            return Err(Error::Contract(format!("sequence length must be {SEQ_LEN}, got {}", self.seq_len)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Nodes produced by one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoding {
    /// Sentence vector (CLS column), `hidden × 1`.
    pub s: Var,
    /// Token representations, `hidden × columns`.
    pub c: Var,
    pub columns: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut RngStream) -> Result<()> {
        let TextEncoderConfig {
            hidden: u,
            layers,
            heads,
            vocab_size,
            seq_len,
        } = self.config;
        let dh = self.config.head_dim();
        store.insert_xavier("text.embed", vocab_size, u, rng)?;
        store.insert_xavier("text.pos", u, seq_len, rng)?;
        for l in 0..layers {
            for t in 0..heads {
                for proj in ["wq", "wk", "wv"] {
                    store.insert_xavier(&format!("text.layer{l}.attn.head{t}.{proj}"), dh, u, rng)?;
                }
            }
            store.insert_xavier(&format!("text.layer{l}.attn.out.w"), u, u, rng)?;
            store.insert_zeros(&format!("text.layer{l}.attn.out.b"), &[u, 1])?;
            for ffn in ["ffn1", "ffn2"] {
                store.insert_xavier(&format!("text.layer{l}.{ffn}.w"), u, u, rng)?;
                store.insert_zeros(&format!("text.layer{l}.{ffn}.b"), &[u, 1])?;
            }
        }
        store.insert_xavier("text.out.w", u, u, rng)?;
        store.insert_zeros("text.out.b", &[u, 1])
    }

    /// Encodes `seq`. With `full_width` the result has one column per position
    /// (PAD positions included, but never attended to); otherwise only the real
    /// prefix is computed. Real columns are bit-identical in both modes.
    pub fn encode<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        seq: &TokenSeq,
        full_width: bool,
    ) -> Result<TextEncoding> {
        let cfg = self.config;
        let u = cfg.hidden;
        if seq.ids.len() != cfg.seq_len || seq.mask.len() != cfg.seq_len {
            return Err(Error::shape("encode_text(tokens)", &[seq.ids.len()], &[cfg.seq_len]));
        }
        let real = seq.real_len();
        let n = if full_width { cfg.seq_len } else { real };

        let embed = g.param(store, "text.embed")?;
        expect_shape(g, embed, "text.embed", &[cfg.vocab_size, u])?;
        let pos = g.param(store, "text.pos")?;
        expect_shape(g, pos, "text.pos", &[u, cfg.seq_len])?;

        let onehot = g.constant(one_hot_rows(&seq.ids[..n], cfg.vocab_size)?);
        let tok = g.matmul(onehot, embed)?;
        let tok = g.transpose(tok)?;
        let sel = g.constant(leading_columns(cfg.seq_len, n));
        let pos = g.matmul(pos, sel)?;
        let mut x = g.add(tok, pos)?;

        let key_mask = (n > real).then(|| {
            let mut m = Tensor::<S>::zeros(vec![n, n]);
            for q in 0..n {
                for k in real..n {
                    m.data_mut()[q * n + k] = S::neg_infinity();
                }
            }
            g.constant(m)
        });
        let scale = S::one() / S::of(cfg.head_dim() as f64).sqrt();

        for l in 0..cfg.layers {
            let mut heads = Vec::with_capacity(cfg.heads);
            for t in 0..cfg.heads {
                let p = |proj: &str| format!("text.layer{l}.attn.head{t}.{proj}");
                let wq = g.param(store, &p("wq"))?;
                let wk = g.param(store, &p("wk"))?;
                let wv = g.param(store, &p("wv"))?;
                for (v, name) in [(wq, p("wq")), (wk, p("wk")), (wv, p("wv"))] {
                    expect_shape(g, v, &name, &[cfg.head_dim(), u])?;
                }
                let q = g.matmul(wq, x)?;
                let k = g.matmul(wk, x)?;
                let v = g.matmul(wv, x)?;
                let qt = g.transpose(q)?;
                let scores = g.matmul(qt, k)?;
                let mut scores = g.scale(scores, scale)?;
                if let Some(mask) = key_mask {
                    scores = g.add(scores, mask)?;
                }
                let attn = g.softmax(scores, 1)?;
                let attn_t = g.transpose(attn)?;
                heads.push(g.matmul(v, attn_t)?);
            }
            let joined = g.concat(&heads, 0)?;
            let mixed = dense(g, store, &format!("text.layer{l}.attn.out"), joined)?;
            let x1 = g.add(x, mixed)?;
            let hidden = dense(g, store, &format!("text.layer{l}.ffn1"), x1)?;
            let hidden = g.relu(hidden)?;
            let ffn = dense(g, store, &format!("text.layer{l}.ffn2"), hidden)?;
            x = g.add(x1, ffn)?;
        }

        let w = g.param(store, "text.out.w")?;
        let b = g.param(store, "text.out.b")?;
        expect_shape(g, w, "text.out.w", &[u, u])?;
        let c = linear(g, w, b, x)?;
        let first = g.constant(leading_columns(n, 1));
        let s = g.matmul(c, first)?;
        Ok(TextEncoding { s, c, columns: n })
    }
}

/// Value-level encoding: `(s, C)` with `C` of shape `hidden × seq_len`.
pub fn encode_text<S: Scalar>(
    seq: &TokenSeq,
    store: &ParamStore<S>,
    config: TextEncoderConfig,
) -> Result<(Vec<S>, Tensor<S>)> {
    let encoder = TextEncoder::new(config)?;
    let mut g = Graph::new();
    let enc = encoder.encode(&mut g, store, seq, true)?;
    Ok((g.value(enc.s).data().to_vec(), g.value(enc.c).clone()))
}
