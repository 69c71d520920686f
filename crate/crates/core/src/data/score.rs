use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::disentangle::argmax;
use crate::error::{Error, Result};

/// Text-side one-hot `l_s` and visual-side probabilities `v_p` of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub id: String,
    pub l_s: Vec<f64>,
    pub v_p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementScore {
    /// Fraction of samples with `argmax v_p == argmax l_s`.
    pub agreement: f64,
    /// Fraction of samples that carry the majority planted category of the
    /// latent unit their `l_s` selects.
    pub purity: f64,
    pub n: usize,
}

/// Scores `outputs` against planted categories. Every output id must appear in
/// `truth`; truth entries without an output are ignored.
pub fn score_disentanglement(truth: &BTreeMap<String, usize>, outputs: &[LatentPair]) -> Result<DisentanglementScore> {
    if outputs.is_empty() {
        return Err(Error::Contract("no outputs to score".into()));
    }
    let mut agree = 0usize;
    // unit → category → count
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for out in outputs {
        let category = *truth.get(&out.id).ok_or_else(|| Error::UnknownId(out.id.clone()))?;
        if out.l_s.len() != out.v_p.len() || out.l_s.is_empty() {
            return Err(Error::shape("score_disentanglement", &[out.l_s.len()], &[out.v_p.len()]));
        }
        let unit = argmax(&out.l_s);
        agree += usize::from(argmax(&out.v_p) == unit);
        *table.entry(unit).or_default().entry(category).or_default() += 1;
    }
    let majority: usize = table.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    let n = outputs.len();
    Ok(DisentanglementScore {
        agreement: agree as f64 / n as f64,
        purity: majority as f64 / n as f64,
        n,
    })
}
