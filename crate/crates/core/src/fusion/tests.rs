use proptest::prelude::*;

use super::*;
use crate::diffcore::grad_check;

fn config(heads: usize, u: usize, d: usize) -> FusionConfig {
    FusionConfig {
        heads,
        text_dim: u,
        visual_dim: d,
        scale: ScaleMode::HeadDim,
    }
}

fn random_store(cfg: &FusionConfig, seed: u64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed);
    cfg.init_params(&mut store, &mut rng).unwrap();
    for prefix in [FFN_INNER, FFN_OUTER] {
        for b in store.get_mut(&format!("{prefix}.b")).unwrap().data_mut() {
            *b = rng.normal() * 0.3;
        }
    }
    store
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn set(store: &mut ParamStore<f64>, name: &str, values: &[f64]) {
    store.get_mut(name).unwrap().data_mut().copy_from_slice(values);
}

fn run(store: &ParamStore<f64>, cfg: &FusionConfig, c: &Tensor<f64>, v: &Tensor<f64>) -> (Graph<f64>, CrossAttention) {
    let mut g = Graph::new();
    let cv = g.constant(c.clone());
    let vv = g.constant(v.clone());
    let trace = cross_attention_traced(&mut g, store, cfg, cv, vv).unwrap();
    (g, trace)
}

#[test]
fn config_validation_and_scales() {
    assert!(config(3, 8, 4).validate().is_err());
    assert!(config(0, 8, 4).validate().is_err());
    let mut cfg = config(4, 16, 4);
    assert_eq!(cfg.scale_factor(), 2.0);
    cfg.scale = ScaleMode::HeadCount;
    assert_eq!(cfg.scale_factor(), 2.0);
    let mut cfg = config(2, 32, 4);
    assert_eq!(cfg.scale_factor(), 4.0);
    cfg.scale = ScaleMode::HeadCount;
    assert_eq!(cfg.scale_factor(), 2f64.sqrt());
}

#[test]
fn single_region_passes_projected_value_to_every_query() {
    let cfg = config(1, 4, 3);
    let store = random_store(&cfg, 1);
    let mut rng = RngStream::new(2);
    let c = random_matrix(4, 5, &mut rng);
    let v = random_matrix(1, 3, &mut rng);
    let (g, trace) = run(&store, &cfg, &c, &v);
    let wv = store.get(&head_param(0, "wv")).unwrap();
    let f = g.value(trace.stacked);
    for i in 0..4 {
        let expect: f64 = (0..3).map(|k| wv.at(i, k) * v.at(0, k)).sum();
        for j in 0..5 {
            assert!((f.at(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_regions_give_common_projected_value() {
    let cfg = config(2, 4, 3);
    let store = random_store(&cfg, 3);
    let mut rng = RngStream::new(4);
    let c = random_matrix(4, 3, &mut rng);
    let row = [0.4, -1.2, 0.7];
    let v = Tensor::from_rows(&[&row, &row, &row, &row]).unwrap();
    let (g, trace) = run(&store, &cfg, &c, &v);
    let f = g.value(trace.stacked);
    for t in 0..2 {
        let wv = store.get(&head_param(t, "wv")).unwrap();
        for i in 0..2 {
            let expect: f64 = (0..3).map(|k| wv.at(i, k) * row[k]).sum();
            for j in 0..3 {
                assert!((f.at(t * 2 + i, j) - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn small_instance_matches_hand_arithmetic() {
    let cfg = config(1, 2, 2);
    let mut store = random_store(&cfg, 0);
    set(&mut store, &head_param(0, "wq"), &[1.0, 0.0, 0.0, 1.0]);
    set(&mut store, &head_param(0, "wk"), &[1.0, 2.0, 0.0, 1.0]);
    set(&mut store, &head_param(0, "wv"), &[2.0, 0.0, 1.0, 1.0]);
    set(&mut store, "fusion.ffn.inner.w", &[1.0, 0.0, 0.0, 1.0]);
    set(&mut store, "fusion.ffn.inner.b", &[0.0, -1.0]);
    set(&mut store, "fusion.ffn.outer.w", &[1.0, 1.0, 0.0, 2.0]);
    set(&mut store, "fusion.ffn.outer.b", &[0.5, 0.0]);
    let c = Tensor::from_rows(&[&[1.0], &[2.0]]).unwrap();
    let v = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();

    // query (1,2); keys (1,0) and (2,1); values (2,1) and (0,1)
    let s1 = 1.0 / 2f64.sqrt();
    let s2 = 4.0 / 2f64.sqrt();
    let a1 = s1.exp() / (s1.exp() + s2.exp());
    let a2 = s2.exp() / (s1.exp() + s2.exp());
    let f = [2.0 * a1, a1 + a2];
    let h = [f[0].max(0.0), (f[1] - 1.0).max(0.0)];
    let ffn = [h[0] + h[1] + 0.5, 2.0 * h[1]];
    let expect = [f[0] + ffn[0], f[1] + ffn[1]];

    let (g, trace) = run(&store, &cfg, &c, &v);
    let a = g.value(trace.weights[0]);
    assert!((a.at(0, 0) - a1).abs() < 1e-15 && (a.at(0, 1) - a2).abs() < 1e-15);
    let out = g.value(trace.attended);
    assert_eq!(out.shape(), &[2, 1]);
    for i in 0..2 {
        assert!((out.data()[i] - expect[i]).abs() < 1e-14, "{:?} vs {expect:?}", out.data());
    }
}

#[test]
fn pool_sums_selected_columns() {
    let mut g = Graph::<f64>::new();
    let vt = g.constant(Tensor::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]).unwrap());
    let both = pool(&mut g, vt, &[1, 1]).unwrap();
    assert_eq!(g.value(both).data(), &[4.0, 6.0]);
    let first = pool(&mut g, vt, &[1, 0]).unwrap();
    assert_eq!(g.value(first).data(), &[1.0, 2.0]);
    assert!(matches!(pool(&mut g, vt, &[0, 0]), Err(Error::Contract(_))));
    assert!(matches!(pool(&mut g, vt, &[1]), Err(Error::Shape { .. })));
}

#[test]
fn pool_matches_column_sum_oracle() {
    let mut rng = RngStream::new(8);
    let t = random_matrix(6, 9, &mut rng);
    let mut g = Graph::new();
    let vt = g.constant(t.clone());
    let pooled = pool(&mut g, vt, &[1; 9]).unwrap();
    for i in 0..6 {
        let expect: f64 = (0..9).map(|j| t.at(i, j)).sum();
        assert!((g.value(pooled).data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn head_shape_error_names_the_head() {
    let cfg = config(2, 4, 3);
    let mut store = random_store(&cfg, 1);
    *store.get_mut(&head_param(1, "wk")).unwrap() = Tensor::zeros(vec![2, 5]);
    let mut g = Graph::new();
    let c = g.constant(Tensor::zeros(vec![4, 2]));
    let v = g.constant(Tensor::zeros(vec![3, 3]));
    let err = cross_attention(&mut g, &store, &cfg, c, v).unwrap_err();
    assert!(err.to_string().contains("head 1"), "{err}");

    let bad_v = g.constant(Tensor::zeros(vec![3, 4]));
    assert!(matches!(cross_attention(&mut g, &store, &cfg, c, bad_v), Err(Error::Shape { .. })));
}

#[test]
fn zero_key_projection_gives_uniform_attention() {
    let cfg = config(2, 4, 3);
    let mut store = random_store(&cfg, 5);
    for t in 0..2 {
        set(&mut store, &head_param(t, "wk"), &[0.0; 6]);
    }
    let mut rng = RngStream::new(6);
    let c = random_matrix(4, 3, &mut rng);
    let v = random_matrix(5, 3, &mut rng);
    let (g, trace) = run(&store, &cfg, &c, &v);
    for &a in &trace.weights {
        for &w in g.value(a).data() {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }
    let f = g.value(trace.stacked);
    for t in 0..2 {
        let wv = store.get(&head_param(t, "wv")).unwrap();
        for i in 0..2 {
            let mean: f64 = (0..5)
                .map(|n| (0..3).map(|k| wv.at(i, k) * v.at(n, k)).sum::<f64>())
                .sum::<f64>()
                / 5.0;
            for j in 0..3 {
                assert!((f.at(t * 2 + i, j) - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fusion_gradient_matches_finite_differences() {
    let cfg = config(2, 2, 2);
    let mut store = random_store(&cfg, 12);
    let mut rng = RngStream::new(13);
    store.insert("c", random_matrix(2, 2, &mut rng)).unwrap();
    store.insert("v", random_matrix(2, 2, &mut rng)).unwrap();
    // push the inner pre-activations away from the ReLU kink
    set(&mut store, "fusion.ffn.inner.b", &[0.8, -0.6]);
    let report = grad_check(
        |g, s| {
            let c = g.param(s, "c")?;
            let v = g.param(s, "v")?;
            let tv = cross_attention(g, s, &cfg, c, v)?;
            let pooled = pool(g, tv, &[1, 1])?;
            let sq = g.mul(pooled, pooled)?;
            let t = g.sum_all(sq)?;
            let p = g.sum_all(pooled)?;
            g.add(t, p)
        },
        &mut store,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.entries.len(), 12);
}

#[test]
fn attend_returns_pooled_columns() {
    let cfg = config(2, 4, 3);
    let store = random_store(&cfg, 21);
    let mut rng = RngStream::new(22);
    let c = random_matrix(4, 3, &mut rng);
    let v = random_matrix(2, 3, &mut rng);
    let out = attend(&store, &cfg, &c, &v, &[1, 1, 0]).unwrap();
    for i in 0..4 {
        let expect = out.tilde_v.at(i, 0) + out.tilde_v.at(i, 1);
        assert_eq!(out.v_att[i], expect);
    }
    assert!(out.tilde_v.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), m in 1usize..5, n in 1usize..6) {
        let cfg = config(2, 4, 3);
        let store = random_store(&cfg, seed);
        let mut rng = RngStream::derive(seed, "inputs");
        let c = random_matrix(4, m, &mut rng);
        let v = random_matrix(n, 3, &mut rng);
        let (g, trace) = run(&store, &cfg, &c, &v);
        for &a in &trace.weights {
            let a = g.value(a);
            prop_assert_eq!(a.shape(), &[m, n]);
            for i in 0..m {
                let row: Vec<f64> = (0..n).map(|j| a.at(i, j)).collect();
                prop_assert!(row.iter().all(|&x| x >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn region_order_does_not_matter(seed in any::<u64>(), n in 2usize..6) {
        let cfg = config(2, 4, 3);
        let store = random_store(&cfg, seed);
        let mut rng = RngStream::derive(seed, "inputs");
        let c = random_matrix(4, 3, &mut rng);
        let v = random_matrix(n, 3, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left(1 + rng.index(n - 1));
        order.swap(0, n - 1);
        let permuted: Vec<f64> = order.iter().flat_map(|&r| (0..3).map(move |k| (r, k))).map(|(r, k)| v.at(r, k)).collect();
        let vp = Tensor::new(vec![n, 3], permuted).unwrap();
        let a = attend(&store, &cfg, &c, &v, &[1, 1, 1]).unwrap();
        let b = attend(&store, &cfg, &c, &vp, &[1, 1, 1]).unwrap();
        for (x, y) in a.tilde_v.data().iter().zip(b.tilde_v.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        for (x, y) in a.v_att.iter().zip(&b.v_att) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
