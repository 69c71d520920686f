//! Finite-difference check of every differentiable operation and of the full
//! model, as run by `dmh gradcheck`.

use serde::Serialize;

use crate::diffcore::{CheckReport, GradCheck, Graph, ParamStore, RngStream, Tensor, Var};
use crate::disentangle::{argmax, gumbel_noise, gumbel_sample_with, matching_loss, one_hot, project_text, project_visual};
use crate::encoders::{tokenize, TextEncoder, TextFields, Vocab};
use crate::fusion::{cross_attention, pool};
use crate::model::{build_forward, sample_loss, Model, ModelConfig, TextLatent};
use crate::Result;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Primitive probes, in report order.
pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul_elementwise",
    "scale_by_constant",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "softmax_axis0",
    "softmax_axis1",
    "concat_axis0",
    "concat_axis1",
    "sum_axis0",
    "sum_axis1",
    "mean_axis0",
    "mean_axis1",
    "transpose_2d",
    "pass_through",
    "clamp",
];

/// Composite stages checked after the primitives.
pub const STAGES: &[&str] = &["text_encoder", "cross_attention", "disentangle", "model"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub tolerance: f64,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:>7} {:>14}  status\n", "op", "params", "max_rel_err");
        for e in &self.entries {
            out.push_str(&format!(
                "{:<18} {:>7} {:>14.3e}  {}\n",
                e.name,
                e.params,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Runs every probe with inputs drawn from `seed`. `inject_sign_flip` negates
/// every analytic gradient; the suite must then fail.
pub fn run_suite(seed: u64, inject_sign_flip: bool) -> Result<SuiteReport> {
    let mut check = GradCheck::new(STEP, TOLERANCE);
    check.negate_analytic = inject_sign_flip;
    let mut entries = Vec::new();
    for &name in PRIMITIVES {
        let mut rng = RngStream::derive(seed, name);
        let report = probe_primitive(&check, name, &mut rng)?;
        entries.push(entry(name, &report));
    }
    for &name in STAGES {
        let mut rng = RngStream::derive(seed, name);
        let report = match name {
            "text_encoder" => probe_text_encoder(&check, &mut rng)?,
            "cross_attention" => probe_cross_attention(&check, &mut rng)?,
            "disentangle" => probe_disentangle(&check, &mut rng)?,
            _ => probe_model(&check, &mut rng)?,
        };
        entries.push(entry(name, &report));
    }
    Ok(SuiteReport {
        seed,
        tolerance: TOLERANCE,
        entries,
    })
}

fn entry(name: &str, report: &CheckReport) -> SuiteEntry {
    SuiteEntry {
        name: name.to_string(),
        params: report.entries.len(),
        max_rel_error: report.max_rel_error(),
        passed: report.passed(),
    }
}

fn normal_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape matches data")
}

/// Entries uniform in [−1, 1].
fn uniform_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| 2.0 * rng.uniform_open() - 1.0).collect()).expect("shape matches data")
}

/// Values bounded away from `|x| < margin`, for ops with a kink at zero.
fn away_from_zero(rng: &mut RngStream, shape: &[usize], margin: f64) -> Tensor<f64> {
    let mut t = uniform_tensor(rng, shape);
    for x in t.data_mut() {
        if x.abs() < margin {
            *x = if *x < 0.0 { -0.5 } else { 0.5 };
        }
    }
    t
}

/// Reduces `out` to a scalar through fixed random weights so every entry of
/// the output contributes a distinct amount.
fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &mut RngStream) -> Result<Var> {
    let w = uniform_tensor(weights, g.shape(out));
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

fn probe_primitive(check: &GradCheck, name: &str, rng: &mut RngStream) -> Result<CheckReport> {
    let mut store = ParamStore::new();
    let b_shape: &[usize] = if name == "matmul" { &[3, 2] } else { &[2, 3] };
    let a = match name {
        "relu" => away_from_zero(rng, &[2, 3], 1e-3),
        "log" => {
            let mut t = uniform_tensor(rng, &[2, 3]);
            t.data_mut().iter_mut().for_each(|x| *x = x.abs() + 0.1);
            t
        }
        // clear of the bounds ±0.5, with one entry on each side of them
        "clamp" => {
            let mut t = uniform_tensor(rng, &[2, 3]);
            t.data_mut().iter_mut().for_each(|x| {
                if (x.abs() - 0.5).abs() < 1e-3 {
                    *x += 0.01;
                }
            });
            t.data_mut()[0] = 0.25;
            t.data_mut()[1] = -0.75;
            t
        }
        _ => uniform_tensor(rng, &[2, 3]),
    };
    store.insert("a", a)?;
    store.insert("b", uniform_tensor(rng, b_shape))?;
    let hard = uniform_tensor(rng, &[2, 3]);
    let a0 = store.get("a").expect("inserted").clone();
    let weight_seed = rng.next_u64();

    check.run(
        |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let out = match name {
                "matmul" => g.matmul(a, b)?,
                "add" => g.add(a, b)?,
                "sub" => g.sub(a, b)?,
                "mul_elementwise" => g.mul(a, b)?,
                "scale_by_constant" => g.scale(a, -1.7)?,
                "relu" => g.relu(a)?,
                "sigmoid" => g.sigmoid(a)?,
                "log" => g.log(a)?,
                "exp" => g.exp(a)?,
                "softmax_axis0" => g.softmax(a, 0)?,
                "softmax_axis1" => g.softmax(a, 1)?,
                "concat_axis0" => g.concat(&[a, b], 0)?,
                "concat_axis1" => g.concat(&[a, b], 1)?,
                "sum_axis0" => g.sum(a, 0)?,
                "sum_axis1" => g.sum(a, 1)?,
                "mean_axis0" => g.mean(a, 0)?,
                "mean_axis1" => g.mean(a, 1)?,
                "transpose_2d" => g.transpose(a)?,
                // forward takes the first input, so feed it `hard + a − a₀`:
                // finite differences then see slope one, as does the routed
                // gradient
                "pass_through" => {
                    let shifted: Vec<f64> = hard
                        .data()
                        .iter()
                        .zip(g.value(a).data().iter().zip(a0.data()))
                        .map(|(h, (x, x0))| h + x - x0)
                        .collect();
                    let hard = g.constant(Tensor::new(vec![2, 3], shifted)?);
                    g.pass_through(hard, a)?
                }
                "clamp" => g.clamp(a, -0.5, 0.5)?,
                other => unreachable!("unknown probe {other}"),
            };
            weighted_sum(g, out, &mut RngStream::new(weight_seed))
        },
        &mut store,
    )
}

fn tiny_vocab() -> Vocab {
    Vocab::build(["red blue green angry calm", "group alpha beta"])
}

fn tiny_config(vocab: &Vocab, visual_dim: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(vocab.len(), visual_dim);
    cfg.text.hidden = 4;
    cfg.text.heads = 2;
    cfg.text.layers = 1;
    cfg.fusion.text_dim = 4;
    cfg.fusion.heads = 2;
    cfg.disentangle.latent = 3;
    cfg
}

/// Subset of `store` whose names start with one of `prefixes`.
fn restrict(store: &ParamStore<f64>, prefixes: &[&str]) -> Result<ParamStore<f64>> {
    let mut out = ParamStore::new();
    for (name, p) in store.iter() {
        if prefixes.iter().any(|pre| name.starts_with(pre)) {
            out.insert(name, p.value.clone())?;
        }
    }
    Ok(out)
}

/// Random model whose zero-initialized biases are replaced by noise so every
/// parameter receives a visible gradient.
fn tiny_model(rng: &mut RngStream) -> Result<Model<f64>> {
    let vocab = tiny_vocab();
    let cfg = tiny_config(&vocab, 3);
    let mut model = Model::init(cfg, vocab, rng.next_u64())?;
    for (name, p) in model.params.iter_mut() {
        if name.ends_with(".b") {
            p.value.data_mut().iter_mut().for_each(|b| *b = 0.2 * rng.normal());
        }
        // the pooled visual vector sums several columns; shrink what reads it so
        // the sigmoids stay unsaturated and differences stay above roundoff
        if name == "head.w" || name.starts_with("disentangle.visual") {
            p.value.data_mut().iter_mut().for_each(|w| *w *= 0.25);
        }
    }
    Ok(model)
}

fn tiny_tokens(vocab: &Vocab) -> crate::encoders::TokenSeq {
    tokenize(
        TextFields {
            ocr: "angry red calm",
            entities: &["blue".to_string()],
            demographics: &["alpha".to_string()],
        },
        vocab,
    )
}

fn probe_text_encoder(check: &GradCheck, rng: &mut RngStream) -> Result<CheckReport> {
    let model = tiny_model(rng)?;
    let mut store = restrict(&model.params, &["text."])?;
    let tokens = tiny_tokens(&model.vocab);
    let encoder = TextEncoder::new(model.config.text)?;
    let weight_seed = rng.next_u64();
    check.run(
        |g, s| {
            let enc = encoder.encode(g, s, &tokens, false)?;
            let mut w = RngStream::new(weight_seed);
            let a = weighted_sum(g, enc.s, &mut w)?;
            let b = weighted_sum(g, enc.c, &mut w)?;
            g.add(a, b)
        },
        &mut store,
    )
}

fn probe_cross_attention(check: &GradCheck, rng: &mut RngStream) -> Result<CheckReport> {
    let model = tiny_model(rng)?;
    let cfg = model.config.fusion;
    let mut store = restrict(&model.params, &["fusion."])?;
    store.insert("input.c", normal_tensor(rng, &[cfg.text_dim, 5]))?;
    store.insert("input.v", normal_tensor(rng, &[3, cfg.visual_dim]))?;
    let mask = [1u8, 1, 0, 1, 1];
    let weight_seed = rng.next_u64();
    check.run(
        |g, s| {
            let c = g.param(s, "input.c")?;
            let v = g.param(s, "input.v")?;
            let tilde_v = cross_attention(g, s, &cfg, c, v)?;
            let pooled = pool(g, tilde_v, &mask)?;
            let mut w = RngStream::new(weight_seed);
            let a = weighted_sum(g, tilde_v, &mut w)?;
            let b = weighted_sum(g, pooled, &mut w)?;
            g.add(a, b)
        },
        &mut store,
    )
}

fn probe_disentangle(check: &GradCheck, rng: &mut RngStream) -> Result<CheckReport> {
    let model = tiny_model(rng)?;
    let cfg = model.config;
    let (u, k) = (cfg.text.hidden, cfg.disentangle.latent);
    let mut store = restrict(&model.params, &["disentangle."])?;
    store.insert("input.s", normal_tensor(rng, &[u, 1]))?;
    store.insert("input.v_att", normal_tensor(rng, &[u, 1]))?;
    let noise: Vec<f64> = gumbel_noise(rng, k);
    let tau = cfg.disentangle.temperature;

    // the hard sample at the base point fixes the anchor
    let (hard, anchor) = {
        let mut g = Graph::new();
        let s = g.param(&store, "input.s")?;
        let s_p = project_text(&mut g, &store, s)?;
        let z = gumbel_sample_with(&mut g, s_p, tau, &noise)?;
        let z_val = g.value(z).data().to_vec();
        let hard = one_hot::<f64>(&[k, 1], argmax(&z_val));
        (hard, z_val)
    };
    check.run(
        |g, s| {
            let sv = g.param(s, "input.s")?;
            let s_p = project_text(g, s, sv)?;
            let z = gumbel_sample_with(g, s_p, tau, &noise)?;
            let offset: Vec<f64> = hard.data().iter().zip(&anchor).map(|(h, a)| h - a).collect();
            let offset = g.constant(Tensor::new(vec![k, 1], offset)?);
            let l_s = g.add(z, offset)?;
            let va = g.param(s, "input.v_att")?;
            let v_p = project_visual(g, s, va)?;
            matching_loss(g, l_s, v_p)
        },
        &mut store,
    )
}

fn probe_model(check: &GradCheck, rng: &mut RngStream) -> Result<CheckReport> {
    let model = tiny_model(rng)?;
    let cfg = model.config;
    let tokens = tiny_tokens(&model.vocab);
    let features = normal_tensor(rng, &[4, cfg.fusion.visual_dim]);
    let noise: Vec<f64> = gumbel_noise(rng, cfg.disentangle.latent);
    let label = (rng.next_u64() & 1) as u8;

    let mut g = Graph::new();
    let base = build_forward(&mut g, &model.params, &cfg, &tokens, &features, &noise, &TextLatent::StraightThrough)?;
    let anchored = TextLatent::Anchored {
        hard: g.value(base.l_s).data().to_vec(),
        anchor: g.value(base.z).data().to_vec(),
    };
    let mut store = model.params.clone();
    check.run(
        |g, s| {
            let nodes = build_forward(g, s, &cfg, &tokens, &features, &noise, &anchored)?;
            Ok(sample_loss(g, &nodes, label, cfg.mu)?.total)
        },
        &mut store,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_several_seeds() {
        for seed in [0u64, 1, 2] {
            let report = run_suite(seed, false).unwrap();
            assert!(report.passed(), "{}", report.to_table());
            assert_eq!(report.entries.len(), PRIMITIVES.len() + STAGES.len());
        }
    }

    #[test]
    fn sign_flip_is_detected_everywhere() {
        let report = run_suite(5, true).unwrap();
        assert!(!report.passed());
        assert!(report.entries.iter().all(|e| !e.passed), "{}", report.to_table());
    }
}
