//! Text-guided cross-attention over region features.
//!
//! Every text position is a query; the `N` regions are keys and values. Each
//! head projects to `u/q` rows, the heads are stacked back to `u` rows, and a
//! residual feed-forward block (`u → u → u`) refines the result. Pooling sums
//! the columns of real (non-PAD) text positions.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamStore, RngStream, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{expect_shape, linear};
use crate::scalar::Scalar;

/// FFN layer applied first (inside the ReLU).
pub const FFN_INNER: &str = "fusion.ffn.inner";
/// FFN layer applied to the ReLU output.
pub const FFN_OUTER: &str = "fusion.ffn.outer";

/// Divisor applied to query-key scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// `√(u/q)`, the per-head width.
    #[default]
    HeadDim,
    /// `√q`, the number of heads.
    HeadCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub heads: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    #[serde(default)]
    pub scale: ScaleMode,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.text_dim == 0 || self.visual_dim == 0 {
            return Err(Error::Contract(format!(
                "fusion dimensions must be ≥ 1 (heads {}, text {}, visual {})",
                self.heads, self.text_dim, self.visual_dim
            )));
        }
        if !self.text_dim.is_multiple_of(self.heads) {
            return Err(Error::Contract(format!(
                "text dim {} not divisible by {} heads",
                self.text_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.text_dim / self.heads
    }

    pub fn scale_factor(&self) -> f64 {
        match self.scale {
            ScaleMode::HeadDim => (self.head_dim() as f64).sqrt(),
            ScaleMode::HeadCount => (self.heads as f64).sqrt(),
        }
    }

    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut RngStream) -> Result<()> {
        self.validate()?;
        let (u, d, dh) = (self.text_dim, self.visual_dim, self.head_dim());
        for t in 0..self.heads {
            store.insert_xavier(&head_param(t, "wq"), dh, u, rng)?;
            store.insert_xavier(&head_param(t, "wk"), dh, d, rng)?;
            store.insert_xavier(&head_param(t, "wv"), dh, d, rng)?;
        }
        for prefix in [FFN_INNER, FFN_OUTER] {
            store.insert_xavier(&format!("{prefix}.w"), u, u, rng)?;
            store.insert_zeros(&format!("{prefix}.b"), &[u, 1])?;
        }
        Ok(())
    }
}

pub fn head_param(head: usize, which: &str) -> String {
    format!("fusion.head{head}.{which}")
}

/// Graph handles for one cross-attention pass.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    /// Per-head attention weights, `M × N`, rows sum to one.
    pub weights: Vec<Var>,
    /// Stacked head outputs `F̃`, `u × M`.
    pub stacked: Var,
    /// `Ṽ = F̃ + FFN(F̃)`, `u × M`.
    pub attended: Var,
}

/// Attention of `c` (`u × M`) over the rows of `v` (`N × d`), returning `Ṽ`.
pub fn cross_attention<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    cfg: &FusionConfig,
    c: Var,
    v: Var,
) -> Result<Var> {
    Ok(cross_attention_traced(g, store, cfg, c, v)?.attended)
}

pub fn cross_attention_traced<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    cfg: &FusionConfig,
    c: Var,
    v: Var,
) -> Result<CrossAttention> {
    cfg.validate()?;
    let (u, d, dh) = (cfg.text_dim, cfg.visual_dim, cfg.head_dim());
    let c_shape = g.shape(c).to_vec();
    if c_shape.len() != 2 || c_shape[0] != u {
        return Err(Error::shape("fusion text input", &c_shape, &[u, 0]));
    }
    let v_shape = g.shape(v).to_vec();
    if v_shape.len() != 2 || v_shape[1] != d || v_shape[0] == 0 {
        return Err(Error::shape("fusion region input", &v_shape, &[0, d]));
    }

    let vt = g.transpose(v)?;
    let inv_scale = S::of(1.0 / cfg.scale_factor());
    let mut weights = Vec::with_capacity(cfg.heads);
    let mut heads = Vec::with_capacity(cfg.heads);
    for t in 0..cfg.heads {
        let wq = g.param(store, &head_param(t, "wq"))?;
        let wk = g.param(store, &head_param(t, "wk"))?;
        let wv = g.param(store, &head_param(t, "wv"))?;
        expect_shape(g, wq, &format!("fusion head {t} query projection"), &[dh, u])?;
        expect_shape(g, wk, &format!("fusion head {t} key projection"), &[dh, d])?;
        expect_shape(g, wv, &format!("fusion head {t} value projection"), &[dh, d])?;

        let q = g.matmul(wq, c)?;
        let k = g.matmul(wk, vt)?;
        let val = g.matmul(wv, vt)?;
        let qt = g.transpose(q)?;
        let scores = g.matmul(qt, k)?;
        let scores = g.scale(scores, inv_scale)?;
        let a = g.softmax(scores, 1)?;
        let at = g.transpose(a)?;
        heads.push(g.matmul(val, at)?);
        weights.push(a);
    }
    let stacked = g.concat(&heads, 0)?;

    let mut ffn = Vec::with_capacity(4);
    for prefix in [FFN_INNER, FFN_OUTER] {
        let w = g.param(store, &format!("{prefix}.w"))?;
        let b = g.param(store, &format!("{prefix}.b"))?;
        expect_shape(g, w, &format!("{prefix}.w"), &[u, u])?;
        expect_shape(g, b, &format!("{prefix}.b"), &[u, 1])?;
        ffn.push((w, b));
    }
    let inner = linear(g, ffn[0].0, ffn[0].1, stacked)?;
    let inner = g.relu(inner)?;
    let outer = linear(g, ffn[1].0, ffn[1].1, inner)?;
    let attended = g.add(stacked, outer)?;
    Ok(CrossAttention {
        weights,
        stacked,
        attended,
    })
}

/// Sum of the columns of `tilde_v` whose mask entry is 1, as a `u × 1` column.
pub fn pool<S: Scalar>(g: &mut Graph<S>, tilde_v: Var, mask: &[u8]) -> Result<Var> {
    let shape = g.shape(tilde_v).to_vec();
    if shape.len() != 2 || shape[1] != mask.len() {
        return Err(Error::shape("pool", &shape, &[shape.first().copied().unwrap_or(0), mask.len()]));
    }
    if !mask.iter().any(|&m| m != 0) {
        return Err(Error::Contract("pool mask selects no positions".into()));
    }
    let selector = g.constant(Tensor::column(
        mask.iter().map(|&m| if m != 0 { S::one() } else { S::zero() }).collect(),
    ));
    g.matmul(tilde_v, selector)
}

/// Value-level result of attending and pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedVisual<S> {
    /// `u × M`.
    pub tilde_v: Tensor<S>,
    pub v_att: Vec<S>,
}

/// Runs [`cross_attention`] and [`pool`] on plain tensors.
pub fn attend<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &FusionConfig,
    c: &Tensor<S>,
    v: &Tensor<S>,
    mask: &[u8],
) -> Result<AttendedVisual<S>> {
    let mut g = Graph::new();
    let c = g.constant(c.clone());
    let v = g.constant(v.clone());
    let tilde_v = cross_attention(&mut g, store, cfg, c, v)?;
    let v_att = pool(&mut g, tilde_v, mask)?;
    Ok(AttendedVisual {
        tilde_v: g.value(tilde_v).clone(),
        v_att: g.value(v_att).data().to_vec(),
    })
}

#[cfg(test)]
mod tests;
