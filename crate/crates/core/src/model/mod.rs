//! End-to-end assembly: text encoder, cross-attention, latent projections,
//! classification head, joint loss and latent-space retrieval.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::MemeSample;
use crate::diffcore::{Graph, ParamStore, RngStream, Tensor, Var};
use crate::disentangle::{
    clamp_eps, cosine, gumbel_noise, gumbel_sample_with, matching_loss, project_text, project_visual, st_onehot,
    DisentangleConfig,
};
use crate::encoders::{tokenize, TextEncoder, TextEncoderConfig, TextFields, TokenSeq, Vocab, SEQ_LEN};
use crate::error::{Error, Result};
use crate::fusion::{cross_attention, pool, FusionConfig, ScaleMode};
use crate::layers::{expect_shape, linear};
use crate::scalar::Scalar;

/// Seed behind the Gumbel draws used at evaluation time.
pub const EVAL_SEED: u64 = 0x0e7a_1000;
/// Seed behind the Gumbel draw of a retrieval query.
pub const QUERY_SEED: u64 = 0x0a11_e7e5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub text: TextEncoderConfig,
    pub fusion: FusionConfig,
    pub disentangle: DisentangleConfig,
    /// Decision threshold `λ`.
    pub threshold: f64,
    /// Matching-loss weight `μ`.
    pub mu: f64,
}

impl ModelConfig {
    /// Default architecture for a vocabulary and region-feature width.
    pub fn new(vocab_size: usize, visual_dim: usize) -> Self {
        let text = TextEncoderConfig {
            hidden: 32,
            layers: 1,
            heads: 2,
            vocab_size,
            seq_len: SEQ_LEN,
        };
        Self {
            text,
            fusion: FusionConfig {
                heads: 2,
                text_dim: text.hidden,
                visual_dim,
                scale: ScaleMode::HeadDim,
            },
            disentangle: DisentangleConfig {
                latent: 4,
                ..Default::default()
            },
            threshold: 0.5,
            mu: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.fusion.validate()?;
        self.disentangle.validate()?;
        if self.fusion.text_dim != self.text.hidden {
            return Err(Error::Contract(format!(
                "fusion text dim {} differs from encoder hidden size {}",
                self.fusion.text_dim, self.text.hidden
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Contract(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Contract(format!("mu must be ≥ 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Ordered so that `NonHateful < Hateful`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    NonHateful,
    Hateful,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonHateful => 0,
            Label::Hateful => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::NonHateful => "non-hateful",
            Label::Hateful => "hateful",
        })
    }
}

/// Hateful iff `y > threshold`; a score equal to the threshold is non-hateful.
pub fn predict_label(y: f64, threshold: f64) -> Label {
    if y > threshold {
        Label::Hateful
    } else {
        Label::NonHateful
    }
}

/// A sample tokenized and converted to the model's scalar type once.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample<S> {
    pub id: String,
    pub label: u8,
    pub tokens: TokenSeq,
    /// `N × d` region features.
    pub features: Tensor<S>,
}

impl<S: Scalar> PreparedSample<S> {
    pub fn new(sample: &MemeSample, vocab: &Vocab) -> Self {
        Self {
            id: sample.id().to_string(),
            label: sample.label(),
            tokens: tokenize(sample.text_fields(), vocab),
            features: sample.features.to_tensor(),
        }
    }
}

/// Vocabulary over every text field of `samples`, usually the train split.
pub fn vocab_from_samples(samples: &[&MemeSample]) -> Vocab {
    Vocab::build(samples.iter().flat_map(|s| {
        std::iter::once(s.record.text_ocr.as_str())
            .chain(s.record.entities.iter().map(String::as_str))
            .chain(s.record.demographics.iter().map(String::as_str))
    }))
}

pub fn prepare_all<S: Scalar>(samples: &[&MemeSample], vocab: &Vocab) -> Vec<PreparedSample<S>> {
    samples.iter().map(|s| PreparedSample::new(s, vocab)).collect()
}

/// How the text-side latent `l_s` is formed from the relaxed sample `z`.
#[derive(Debug, Clone, PartialEq)]
pub enum TextLatent<S> {
    /// Hard one-hot forward, relaxed-sample gradient backward.
    StraightThrough,
    /// `l_s = z`.
    Relaxed,
    /// `l_s = hard + z − anchor` with `hard` and `anchor` fixed. Equals the
    /// straight-through value at `z = anchor` and is differentiable with the
    /// same gradient, so finite differences can check the straight-through
    /// backward pass.
    Anchored { hard: Vec<S>, anchor: Vec<S> },
}

/// Graph handles of one forward pass; vectors are `k × 1` columns.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub s: Var,
    pub v_att: Var,
    pub s_p: Var,
    pub z: Var,
    pub l_s: Var,
    pub v_p: Var,
    /// Hateful score, shape `[1, 1]`.
    pub y: Var,
    /// Scalar matching loss.
    pub l_match: Var,
}

/// Records the full forward pass for one sample on `g`. Only the real-token
/// prefix of `tokens` is encoded; PAD positions could not reach any output.
pub fn build_forward<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    config: &ModelConfig,
    tokens: &TokenSeq,
    features: &Tensor<S>,
    noise: &[S],
    latent: &TextLatent<S>,
) -> Result<ForwardNodes> {
    let encoder = TextEncoder::new(config.text)?;
    let enc = encoder.encode(g, store, tokens, false)?;
    let v = g.constant(features.clone());
    let tilde_v = cross_attention(g, store, &config.fusion, enc.c, v)?;
    let v_att = pool(g, tilde_v, &vec![1; enc.columns])?;

    let s_p = project_text(g, store, enc.s)?;
    if noise.len() != config.disentangle.latent {
        return Err(Error::shape("gumbel noise", &[noise.len()], &[config.disentangle.latent]));
    }
    let z = gumbel_sample_with(g, s_p, config.disentangle.temperature, noise)?;
    let l_s = match latent {
        TextLatent::StraightThrough => st_onehot(g, z, config.disentangle.selection)?,
        TextLatent::Relaxed => z,
        TextLatent::Anchored { hard, anchor } => {
            let offset: Vec<S> = hard.iter().zip(anchor).map(|(&h, &a)| h - a).collect();
            let offset = g.constant(Tensor::new(g.shape(z).to_vec(), offset)?);
            g.add(z, offset)?
        }
    };
    let v_p = project_visual(g, store, v_att)?;

    let u = config.text.hidden;
    let joint = g.concat(&[enc.s, v_att], 0)?;
    let w = g.param(store, "head.w")?;
    let b = g.param(store, "head.b")?;
    expect_shape(g, w, "head.w", &[1, 2 * u])?;
    expect_shape(g, b, "head.b", &[1, 1])?;
    let logit = linear(g, w, b, joint)?;
    let y = g.sigmoid(logit)?;
    let l_match = matching_loss(g, l_s, v_p)?;
    Ok(ForwardNodes {
        s: enc.s,
        v_att,
        s_p,
        z,
        l_s,
        v_p,
        y,
        l_match,
    })
}

/// Scalar nodes of one sample's training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub pred: Var,
    pub total: Var,
}

/// `BCE(y, label) + μ · L_match` with `y` clamped to `[ε, 1−ε]`.
pub fn sample_loss<S: Scalar>(g: &mut Graph<S>, nodes: &ForwardNodes, label: u8, mu: S) -> Result<LossNodes> {
    let eps = clamp_eps::<S>();
    let y = g.clamp(nodes.y, eps, S::one() - eps)?;
    let p = if label == 1 {
        y
    } else {
        let one = g.constant(Tensor::ones(vec![1, 1]));
        g.sub(one, y)?
    };
    let ln = g.log(p)?;
    let ln = g.sum_all(ln)?;
    let pred = g.scale(ln, -S::one())?;
    let weighted = g.scale(nodes.l_match, mu)?;
    let total = g.add(pred, weighted)?;
    Ok(LossNodes { pred, total })
}

/// Plain-value forward result.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<S> {
    pub y: S,
    pub l_s: Vec<S>,
    pub v_p: Vec<S>,
    pub s: Vec<S>,
    pub v_att: Vec<S>,
    pub l_match: S,
}

impl<S: Scalar> ModelOutput<S> {
    fn read(g: &Graph<S>, nodes: &ForwardNodes) -> Self {
        let vec = |v: Var| g.value(v).data().to_vec();
        Self {
            y: g.value(nodes.y).data()[0],
            l_s: vec(nodes.l_s),
            v_p: vec(nodes.v_p),
            s: vec(nodes.s),
            v_att: vec(nodes.v_att),
            l_match: g.value(nodes.l_match).data()[0],
        }
    }
}

/// Batch objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss<S> {
    pub pred: S,
    pub matching: S,
    pub total: S,
}

/// `Σ BCE(y_i, label_i) + μ Σ L_match,i` over the batch.
pub fn joint_loss<S: Scalar>(outputs: &[ModelOutput<S>], labels: &[u8], mu: S) -> Result<JointLoss<S>> {
    if outputs.is_empty() {
        return Err(Error::Contract("joint loss of an empty batch".into()));
    }
    if outputs.len() != labels.len() {
        return Err(Error::shape("joint_loss", &[outputs.len()], &[labels.len()]));
    }
    let eps = clamp_eps::<S>();
    let mut pred = S::zero();
    let mut matching = S::zero();
    for (out, &label) in outputs.iter().zip(labels) {
        let y = out.y.max(eps).min(S::one() - eps);
        pred = pred - if label == 1 { y.ln() } else { (S::one() - y).ln() };
        matching = matching + out.l_match;
    }
    Ok(JointLoss {
        pred,
        matching,
        total: pred + mu * matching,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Fresh parameters: uniform ±√(6/(fan_in+fan_out)) matrices, zero biases.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.text.vocab_size {
            return Err(Error::Contract(format!(
                "vocabulary has {} entries but the encoder expects {}",
                vocab.len(),
                config.text.vocab_size
            )));
        }
        let mut params = ParamStore::new();
        let mut rng = RngStream::derive(seed, "init");
        TextEncoder::new(config.text)?.init_params(&mut params, &mut rng)?;
        config.fusion.init_params(&mut params, &mut rng)?;
        config.disentangle.init_params(&mut params, config.text.hidden, &mut rng)?;
        params.insert_xavier("head.w", 1, 2 * config.text.hidden, &mut rng)?;
        params.insert_zeros("head.b", &[1, 1])?;
        Ok(Self { config, vocab, params })
    }

    pub fn prepare(&self, sample: &MemeSample) -> PreparedSample<S> {
        PreparedSample::new(sample, &self.vocab)
    }

    /// Forward pass drawing Gumbel noise from `rng`.
    pub fn forward(&self, sample: &PreparedSample<S>, rng: &mut RngStream) -> Result<ModelOutput<S>> {
        let noise = gumbel_noise(rng, self.config.disentangle.latent);
        let mut g = Graph::new();
        let nodes = build_forward(
            &mut g,
            &self.params,
            &self.config,
            &sample.tokens,
            &sample.features,
            &noise,
            &TextLatent::StraightThrough,
        )?;
        Ok(ModelOutput::read(&g, &nodes))
    }

    /// Forward pass with the evaluation-time Gumbel stream of `sample`.
    pub fn forward_eval(&self, sample: &PreparedSample<S>) -> Result<ModelOutput<S>> {
        self.forward(sample, &mut RngStream::derive(EVAL_SEED, &sample.id))
    }

    pub fn predict(&self, y: S) -> Label {
        predict_label(y.to_f64_lossy(), self.config.threshold)
    }

    /// Hard text-side latent `l_q` of free text.
    pub fn text_latent(&self, query: &str) -> Result<Vec<S>> {
        let tokens = tokenize(
            TextFields {
                ocr: query,
                ..Default::default()
            },
            &self.vocab,
        );
        let mut g = Graph::new();
        let enc = TextEncoder::new(self.config.text)?.encode(&mut g, &self.params, &tokens, false)?;
        let s_p = project_text(&mut g, &self.params, enc.s)?;
        let mut rng = RngStream::derive(QUERY_SEED, query);
        let noise = gumbel_noise(&mut rng, self.config.disentangle.latent);
        let z = gumbel_sample_with(&mut g, s_p, self.config.disentangle.temperature, &noise)?;
        let l = st_onehot(&mut g, z, self.config.disentangle.selection)?;
        Ok(g.value(l).data().to_vec())
    }

    /// Top-`k` samples by cosine similarity between the query's `l_q` and
    /// each sample's `v_p`; ties go to the smaller id.
    pub fn retrieve(&self, query: &str, samples: &[PreparedSample<S>], k: usize) -> Result<Vec<Retrieved>> {
        if k == 0 {
            return Err(Error::Contract("retrieval needs k ≥ 1".into()));
        }
        let l_q = self.text_latent(query)?;
        let mut hits = Vec::with_capacity(samples.len());
        for sample in samples {
            let out = self.forward_eval(sample)?;
            hits.push(Retrieved {
                id: sample.id.clone(),
                similarity: cosine(&l_q, &out.v_p).to_f64_lossy(),
                y: out.y.to_f64_lossy(),
                label: self.predict(out.y),
            });
        }
        rank_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: String,
    pub similarity: f64,
    /// Hateful score of the hit.
    pub y: f64,
    pub label: Label,
}

/// Sorts by similarity, highest first, then by id.
pub fn rank_hits(hits: &mut [Retrieved]) {
    hits.sort_by(|a, b| match b.similarity.total_cmp(&a.similarity) {
        Ordering::Equal => a.id.cmp(&b.id),
        other => other,
    });
}
