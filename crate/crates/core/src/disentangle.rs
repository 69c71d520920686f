//! Projection into the target latent space and the cross-modal matching
//! objective.
//!
//! Text side: `s_p = W_s s + b_s`, perturbed with Gumbel noise and relaxed by a
//! softmax at temperature `τ`, then hardened to a one-hot `l_s` whose gradient
//! is routed straight through to the relaxed sample. Visual side:
//! `v_p = σ(W_a v_att + b_a)`, one probability per latent unit. The matching
//! loss is the binary cross-entropy of `v_p` against `l_s`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamStore, RngStream, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{expect_shape, linear};
use crate::scalar::Scalar;

pub const TEXT_PROJ: &str = "disentangle.text";
pub const VISUAL_PROJ: &str = "disentangle.visual";

/// Which coordinate of `z` the hard one-hot marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    ArgMax,
    /// Literal `arg min` reading, kept only for auditing.
    ArgMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentangleConfig {
    /// Number of latent units `|D|`.
    pub latent: usize,
    pub temperature: f64,
    #[serde(default)]
    pub selection: Selection,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        Self {
            latent: 6,
            temperature: 1.0,
            selection: Selection::ArgMax,
        }
    }
}

impl DisentangleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent < 2 {
            return Err(Error::Contract(format!("latent size must be ≥ 2, got {}", self.latent)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Contract(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, hidden: usize, rng: &mut RngStream) -> Result<()> {
        store.insert_xavier(&format!("{TEXT_PROJ}.w"), self.latent, hidden, rng)?;
        store.insert_zeros(&format!("{TEXT_PROJ}.b"), &[self.latent, 1])?;
        store.insert_xavier(&format!("{VISUAL_PROJ}.w"), self.latent, hidden, rng)?;
        store.insert_zeros(&format!("{VISUAL_PROJ}.b"), &[self.latent, 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Text,
    Visual,
}

/// A point in the latent space: one-hot on the text side, per-unit
/// probabilities on the visual side.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledRep<S> {
    pub side: Side,
    pub vec: Vec<S>,
}

impl<S: Scalar> DisentangledRep<S> {
    pub fn argmax(&self) -> usize {
        argmax(&self.vec)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn project<S: Scalar>(g: &mut Graph<S>, store: &ParamStore<S>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let latent = g.shape(w)[0];
    expect_shape(g, w, &format!("{prefix}.w"), &[latent, g.shape(x)[0]])?;
    expect_shape(g, b, &format!("{prefix}.b"), &[latent, 1])?;
    linear(g, w, b, x)
}

/// `s_p = W_s s + b_s`; raw logits of shape `|D| × 1`.
pub fn project_text<S: Scalar>(g: &mut Graph<S>, store: &ParamStore<S>, s: Var) -> Result<Var> {
    project(g, store, TEXT_PROJ, s)
}

/// `v_p = σ(W_a v_att + b_a)`, entries in (0, 1).
pub fn project_visual<S: Scalar>(g: &mut Graph<S>, store: &ParamStore<S>, v_att: Var) -> Result<Var> {
    let logits = project(g, store, VISUAL_PROJ, v_att)?;
    g.sigmoid(logits)
}

/// `g = −ln(−ln u)` for `u ∈ (0, 1)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `k` standard Gumbel draws.
pub fn gumbel_noise<S: Scalar>(rng: &mut RngStream, k: usize) -> Vec<S> {
    (0..k).map(|_| S::of(gumbel_from_uniform(rng.uniform_open()))).collect()
}

/// `z = softmax((s_p + g) / τ)` with the supplied Gumbel draws `noise`.
pub fn gumbel_sample_with<S: Scalar>(g: &mut Graph<S>, s_p: Var, tau: f64, noise: &[S]) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be > 0, got {tau}")));
    }
    let shape = g.shape(s_p).to_vec();
    let noise = g.constant(Tensor::new(shape, noise.to_vec())?);
    let perturbed = g.add(s_p, noise)?;
    let scaled = g.scale(perturbed, S::one() / S::of(tau))?;
    g.softmax(scaled, 0)
}

/// Draws Gumbel noise from `rng` and returns `z`.
pub fn gumbel_sample<S: Scalar>(g: &mut Graph<S>, s_p: Var, tau: f64, rng: &mut RngStream) -> Result<Var> {
    let k = g.value(s_p).numel();
    let noise = gumbel_noise(rng, k);
    gumbel_sample_with(g, s_p, tau, &noise)
}

/// One-hot vector marking index `hot`, shaped like `like`.
pub fn one_hot<S: Scalar>(like: &[usize], hot: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(like.to_vec());
    t.data_mut()[hot] = S::one();
    t
}

/// Straight-through one-hot: forward value is the one-hot of the selected
/// coordinate of `z`, backward passes the incoming gradient to `z` unchanged.
pub fn st_onehot<S: Scalar>(g: &mut Graph<S>, z: Var, selection: Selection) -> Result<Var> {
    let hot = match selection {
        Selection::ArgMax => argmax(g.value(z).data()),
        Selection::ArgMin => argmin(g.value(z).data()),
    };
    let hard = g.constant(one_hot(g.shape(z), hot));
    g.pass_through(hard, z)
}

/// Probability clamp used before every log: `max(1e-12, machine epsilon)`.
pub fn clamp_eps<S: Scalar>() -> S {
    S::of(1e-12).max(S::epsilon())
}

/// `−Σ_k [l_k ln v_k + (1 − l_k) ln(1 − v_k)]` with `v` clamped to `[ε, 1−ε]`.
pub fn matching_loss<S: Scalar>(g: &mut Graph<S>, l_s: Var, v_p: Var) -> Result<Var> {
    if g.shape(l_s) != g.shape(v_p) {
        return Err(Error::shape("matching_loss", g.shape(l_s), g.shape(v_p)));
    }
    let eps = clamp_eps::<S>();
    let v = g.clamp(v_p, eps, S::one() - eps)?;
    let ones = g.constant(Tensor::ones(g.shape(v).to_vec()));
    let log_v = g.log(v)?;
    let not_v = g.sub(ones, v)?;
    let log_not_v = g.log(not_v)?;
    let not_l = g.sub(ones, l_s)?;
    let hit = g.mul(l_s, log_v)?;
    let miss = g.mul(not_l, log_not_v)?;
    let both = g.add(hit, miss)?;
    let total = g.sum_all(both)?;
    g.scale(total, -S::one())
}

/// Plain-value matching loss.
pub fn matching_loss_value<S: Scalar>(l_s: &[S], v_p: &[S]) -> Result<S> {
    if l_s.len() != v_p.len() {
        return Err(Error::shape("matching_loss", &[l_s.len()], &[v_p.len()]));
    }
    let eps = clamp_eps::<S>();
    let total = l_s
        .iter()
        .zip(v_p)
        .map(|(&l, &v)| {
            let v = v.max(eps).min(S::one() - eps);
            l * v.ln() + (S::one() - l) * (S::one() - v).ln()
        })
        .fold(S::zero(), |a, b| a + b);
    Ok(-total)
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let dot = a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
    let na = a.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
    let nb = b.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
    if na == S::zero() || nb == S::zero() {
        S::zero()
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests;
